mod common;

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use traffic_sim::config::{ControllerConfig, DT};
use traffic_sim::{EgoCommand, LaneCommand, SimError};

use common::*;

#[test]
fn same_seed_gives_identical_observations() {
    let mut a = builtin("left_turn_t");
    let mut b = builtin("left_turn_t");
    assert_eq!(a.reset(11), b.reset(11));
    for _ in 0..30 {
        let oa = a.step(EgoCommand::keep(6.0)).unwrap();
        let ob = b.step(EgoCommand::keep(6.0)).unwrap();
        assert_eq!(oa.observation, ob.observation);
        assert_eq!(oa.events, ob.events);
    }
}

#[test]
fn empty_road_has_no_present_slots() {
    let mut env = builtin("straight");
    let obs = env.reset(0);
    assert_eq!(obs.mask(), vec![false; 8]);
}

#[test]
fn left_turn_schedule_matches_an_independent_draw() {
    // Replays the documented draw: per flow in file order, a headway
    // uniform in mean +- jitter (floored at 1 s), then a desired speed.
    let mut env = builtin("left_turn_t");
    env.reset(3);
    let sc = env.scenario().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let horizon = sc.max_steps as f64 * 0.1;
    let mut expected = Vec::new();
    for (k, f) in sc.file.traffic.iter().enumerate() {
        let mut t = -sc.file.traffic_preroll_s;
        loop {
            let u: f64 = rng.random();
            let gap = f64::max(f.headway_mean_s + f.headway_jitter_s * (2.0 * u - 1.0), 1.0);
            t += gap;
            if t > horizon {
                break;
            }
            let w: f64 = rng.random();
            expected.push((k, t, f.speed_range[0] + (f.speed_range[1] - f.speed_range[0]) * w));
        }
    }
    expected.sort_by(|a, b| a.1.total_cmp(&b.1));
    let got: Vec<_> = env.schedule().iter().map(|e| (e.flow, e.time, e.desired_speed)).collect();
    assert_eq!(got.len(), expected.len());
    assert_eq!(got, expected);
    assert!(env.spawned_count() <= got.len());

    // Parked ego: everything scheduled is eventually released.
    while !env.is_done() {
        env.step(EgoCommand::keep(0.0)).unwrap();
    }
    assert!(env.spawned_count() > 0 && env.spawned_count() <= got.len());
}

#[test]
fn speed_converges_with_bounded_acceleration() {
    let mut env = builtin("straight");
    env.reset(0);
    let c = ControllerConfig::default();
    let vmax = env.config().v_max;
    let mut v = 0.0f64;
    for _ in 0..80 {
        let out = env.step(EgoCommand::keep(vmax)).unwrap();
        let a = (c.k_v * (vmax - v)).clamp(-c.a_max, c.a_max);
        v += a * DT;
        let ego = env.ego();
        assert!((ego.speed - v).abs() < 1e-12);
        assert!(ego.accel.abs() <= c.a_max + 1e-9);
        if out.terminated {
            break;
        }
    }
    assert!((env.ego().speed - vmax).abs() < 0.1, "speed {}", env.ego().speed);
}

#[test]
fn overlapping_vehicles_crash() {
    let mut env = builtin("straight");
    env.reset(0);
    let p = env.ego().pos();
    env.add_obstacle([p[0] + 1.0, p[1]], 0.3);
    let out = env.step(EgoCommand::keep(5.0)).unwrap();
    assert!(out.events.crash && out.terminated && !out.events.reached_goal);
    assert!(matches!(env.step(EgoCommand::keep(5.0)), Err(SimError::EpisodeOver)));
}

#[test]
fn disjoint_boxes_do_not_crash() {
    let mut env = builtin("straight");
    env.reset(0);
    let p = env.ego().pos();
    env.add_obstacle([p[0] + env.config().vehicle_length + 1.0, p[1]], 0.0);
    assert!(!env.detect_events().crash);
}

#[test]
fn infeasible_switch_is_coerced_to_keep() {
    let mut env = builtin("straight");
    env.reset(0);
    for _ in 0..20 {
        let out = env
            .step(EgoCommand {
                target_speed: 8.0,
                lane: LaneCommand::SwitchLeft,
            })
            .unwrap();
        assert_eq!(out.command.lane, LaneCommand::Keep);
        assert!(!out.events.offroad);
    }
    assert!(env.ego().y.abs() < 1e-9);
}

#[test]
fn lane_switch_completes_within_three_seconds() {
    let mut env = env(two_lanes(0.0));
    env.reset(0);
    assert!((env.ego().speed - 10.0).abs() < 1e-12);
    let out = env
        .step(EgoCommand {
            target_speed: 10.0,
            lane: LaneCommand::SwitchLeft,
        })
        .unwrap();
    assert_eq!(out.command.lane, LaneCommand::SwitchLeft);
    let mut steps = 1;
    while env.lane_change_in_progress() {
        let out = env
            .step(EgoCommand {
                target_speed: 10.0,
                lane: LaneCommand::SwitchLeft,
            })
            .unwrap();
        // A second switch is ignored while one is under way.
        assert_eq!(out.command.lane, LaneCommand::Keep);
        assert!(!out.events.offroad);
        steps += 1;
    }
    // Frozen from the scripted rollout.
    assert_eq!(steps, 15);
    assert!(steps as f64 * DT <= 3.0);
    assert!((env.ego().y - 3.5).abs() < 0.2);
}

#[test]
fn reversed_ego_is_wrong_way() {
    let mut env = builtin("straight");
    env.reset(0);
    let p = env.ego().pos();
    assert!(!env.detect_events().wrong_way);
    env.teleport_ego(p, PI, 0.0);
    assert!(env.detect_events().wrong_way);
    env.teleport_ego(p, FRAC_PI_2 - 0.01, 0.0);
    assert!(!env.detect_events().wrong_way);
}

#[test]
fn one_metre_advance_is_one_metre_of_progress() {
    let mut env = builtin("straight");
    env.reset(0);
    let p = env.ego().pos();
    env.teleport_ego([p[0] + 1.0, p[1]], 0.0, 0.0);
    assert!((env.detect_events().progress_delta - 1.0).abs() < 1e-9);
}

#[test]
fn parked_ego_becomes_stagnant_after_the_window() {
    let mut env = builtin("straight");
    env.reset(0);
    let mut first = None;
    for k in 1..=200 {
        if env.step(EgoCommand::keep(0.0)).unwrap().events.stagnant {
            first.get_or_insert(k);
            assert!(k == 100 || k == 200, "stagnant at {k}");
        }
    }
    assert_eq!(first, Some(100));
}

#[test]
fn episode_truncates_at_max_steps() {
    let mut env = builtin("straight");
    env.reset(0);
    let mut n = 0;
    loop {
        n += 1;
        let out = env.step(EgoCommand::keep(0.0)).unwrap();
        if out.truncated {
            assert!(!out.terminated);
            break;
        }
    }
    assert_eq!(n, env.scenario().max_steps);
}

#[test]
fn straight_run_reaches_goal_with_full_progress() {
    let mut env = builtin("straight");
    env.reset(0);
    let mut total = 0.0;
    loop {
        let out = env.step(EgoCommand::keep(13.9)).unwrap();
        total += out.events.progress_delta;
        if out.terminated || out.truncated {
            assert!(out.events.reached_goal);
            break;
        }
    }
    let len = env.scenario().route_length();
    assert!((total - len).abs() <= env.config().vehicle_length, "{total} vs {len}");
}

#[test]
fn builtins_load_with_symmetric_adjacency() {
    for name in traffic_sim::scenario::BUILTIN {
        let env = builtin(name);
        let g = &env.scenario().graph;
        for (i, lane) in g.lanes.iter().enumerate() {
            if let Some(l) = lane.left {
                assert_eq!(g.lanes[l].right, Some(i), "{name}");
            }
            if let Some(r) = lane.right {
                assert_eq!(g.lanes[r].left, Some(i), "{name}");
            }
            assert!(lane.line.points().len() >= 2);
        }
        assert!(env.scenario().route_length() > 0.0);
    }
}

#[test]
fn malformed_scenarios_are_rejected() {
    assert!(matches!(
        traffic_sim::Scenario::builtin("nope"),
        Err(SimError::UnknownScenario(_))
    ));
    let mut file = traffic_sim::Scenario::builtin("left_turn_t").unwrap().file;
    file.ego.route = vec!["stem_nb".into(), "wb_west".into()];
    assert!(traffic_sim::Scenario::from_file(file).is_err());
    let mut file = traffic_sim::Scenario::builtin("straight").unwrap().file;
    file.ego.goal.point = [100.0, 40.0];
    assert!(traffic_sim::Scenario::from_file(file).is_err());
    assert!(traffic_sim::Scenario::from_json("{\"lanes\": []}").is_err());
}
