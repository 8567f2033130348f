use dadrl::action::{lane_command, map_action, LANE_EDGE, MIN_TARGET_SPEED};
use proptest::prelude::*;
use traffic_sim::LaneCommand;

const V_MAX: f64 = 13.9;

#[test]
fn documented_examples() {
    assert_eq!(lane_command(-0.5), LaneCommand::SwitchLeft);
    assert_eq!(lane_command(0.0), LaneCommand::Keep);
    assert_eq!(lane_command(0.999), LaneCommand::SwitchRight);
    let top = map_action([1.0 - 1e-12, 0.0], V_MAX);
    assert!((top.target_speed - V_MAX).abs() < 1e-10);
}

#[test]
fn boundaries_belong_to_the_middle_interval() {
    assert_eq!(lane_command(-1.0 / 3.0), LaneCommand::Keep);
    assert_eq!(lane_command(1.0 / 3.0), LaneCommand::Keep);
    assert_eq!(lane_command(-1.0 / 3.0 - 1e-12), LaneCommand::SwitchLeft);
    assert_eq!(lane_command(1.0 / 3.0 + 1e-12), LaneCommand::SwitchRight);
    assert_eq!(LANE_EDGE, 1.0 / 3.0);
}

/// A 10^4-point grid over the open interval: the partition is total, ordered
/// left < keep < right, and each image is one contiguous run with
/// boundaries at -1/3 and 1/3.
#[test]
fn grid_partition_is_total_and_ordered() {
    let n = 10_000;
    let mut counts = [0usize; 3];
    let mut prev = 0;
    for i in 0..n {
        let u = -1.0 + 2.0 * (i as f64 + 0.5) / n as f64;
        let class = match lane_command(u) {
            LaneCommand::SwitchLeft => 0,
            LaneCommand::Keep => 1,
            LaneCommand::SwitchRight => 2,
        };
        assert!(class >= prev, "partition is not monotone at u = {u}");
        prev = class;
        let expected = if u < -1.0 / 3.0 {
            0
        } else if u <= 1.0 / 3.0 {
            1
        } else {
            2
        };
        assert_eq!(class, expected, "u = {u}");
        counts[class] += 1;
        let cmd = map_action([u, u], V_MAX);
        assert!(cmd.target_speed >= MIN_TARGET_SPEED && cmd.target_speed <= V_MAX);
    }
    assert_eq!(counts.iter().sum::<usize>(), n);
    // Each third of the interval holds a third of the grid, give or take one point.
    for c in counts {
        assert!((c as i64 - 3333).abs() <= 1, "{counts:?}");
    }
}

#[test]
fn speed_floor_applies_near_minus_one() {
    let cmd = map_action([-1.0 + 1e-12, 0.0], V_MAX);
    assert_eq!(cmd.target_speed, MIN_TARGET_SPEED);
    assert_eq!(map_action([0.0, 0.0], V_MAX).target_speed, V_MAX / 2.0);
}

proptest! {
    #[test]
    fn speed_mapping_is_monotone(a in -0.999..0.999f64, b in -0.999..0.999f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(map_action([lo, 0.0], V_MAX).target_speed <= map_action([hi, 0.0], V_MAX).target_speed);
    }
}
