mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use traffic_sim::trajectory::Record;
use traffic_sim::{replay, EgoCommand, Env, LaneCommand, TrajectoryLog};

use common::*;

fn random_command(rng: &mut ChaCha8Rng) -> EgoCommand {
    let lane = match rng.random_range(0..10) {
        0 => LaneCommand::SwitchLeft,
        1 => LaneCommand::SwitchRight,
        _ => LaneCommand::Keep,
    };
    EgoCommand {
        target_speed: rng.random_range(0.1..13.9),
        lane,
    }
}

fn run(env: &mut Env, seed: u64, commands: &[EgoCommand]) -> TrajectoryLog {
    env.reset(seed);
    let mut log = TrajectoryLog::start(env);
    for &c in commands {
        if env.is_done() {
            break;
        }
        let out = env.step(c).unwrap();
        log.record(c, env, &out);
    }
    log
}

fn bytes(log: &TrajectoryLog) -> Vec<u8> {
    let mut out = Vec::new();
    log.write_to(&mut out).unwrap();
    out
}

#[test]
fn two_runs_give_bitwise_identical_logs() {
    for name in ["left_turn_t", "roundabout_b", "double_merge"] {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cmds: Vec<_> = (0..300).map(|_| random_command(&mut rng)).collect();
        let a = run(&mut builtin(name), 17, &cmds);
        let b = run(&mut builtin(name), 17, &cmds);
        assert_eq!(bytes(&a), bytes(&b), "{name}");
        assert!(a.records.len() > 10);
    }
}

#[test]
fn log_round_trips_and_replays_clean() {
    let mut env = builtin("roundabout_a");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cmds: Vec<_> = (0..200).map(|_| random_command(&mut rng)).collect();
    let log = run(&mut env, 4, &cmds);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.ndjson");
    log.save(&path).unwrap();
    let back = TrajectoryLog::load(&path).unwrap();
    assert_eq!(bytes(&back), bytes(&log));
    let report = replay(&back, env.scenario().clone()).unwrap();
    assert_eq!(report.divergence, None);
    assert_eq!(report.steps, back.commands().count());
}

#[test]
fn one_perturbed_command_is_detected() {
    let mut env = builtin("left_turn_t");
    let cmds = vec![EgoCommand::keep(6.0); 80];
    let mut log = run(&mut env, 2, &cmds);
    let k = log
        .records
        .iter()
        .position(|r| matches!(r, Record::Command { step: 40, .. }))
        .unwrap();
    if let Record::Command { target_speed, .. } = &mut log.records[k] {
        *target_speed += 0.5;
    }
    let report = replay(&log, env.scenario().clone()).unwrap();
    let d = report.divergence.expect("divergence");
    assert_eq!(d.step, 41);
}

#[test]
fn mismatched_version_or_scenario_is_refused() {
    let mut env = builtin("straight");
    let mut log = run(&mut env, 0, &[EgoCommand::keep(3.0); 5]);
    let other = builtin("left_turn_t").scenario().clone();
    assert!(replay(&log, other).is_err());
    if let Record::Header { version, .. } = &mut log.records[0] {
        *version += 1;
    }
    assert!(replay(&log, env.scenario().clone()).is_err());
}
