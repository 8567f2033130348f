//! Raw policy actions and their mid-level commands.

use traffic_sim::{EgoCommand, LaneCommand};

/// Lowest commanded target speed (m/s).
pub const MIN_TARGET_SPEED: f64 = 0.1;
/// `u_lane` below `-LANE_EDGE` switches left, above `LANE_EDGE` switches
/// right; the closed interval between keeps the lane.
pub const LANE_EDGE: f64 = 1.0 / 3.0;

pub fn lane_command(u_lane: f64) -> LaneCommand {
    if u_lane < -LANE_EDGE {
        LaneCommand::SwitchLeft
    } else if u_lane > LANE_EDGE {
        LaneCommand::SwitchRight
    } else {
        LaneCommand::Keep
    }
}

/// Maps `(u_speed, u_lane)` in `(-1, 1)^2` to a command.
pub fn map_action(raw: [f64; 2], v_max: f64) -> EgoCommand {
    EgoCommand {
        target_speed: ((raw[0] + 1.0) / 2.0 * v_max).max(MIN_TARGET_SPEED),
        lane: lane_command(raw[1]),
    }
}
