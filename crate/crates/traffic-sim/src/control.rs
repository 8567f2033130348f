//! Ego mid-level command execution: speed tracking, pure pursuit and a
//! kinematic bicycle update.

use serde::{Deserialize, Serialize};

use crate::config::{ControllerConfig, DT};
use crate::geom::{dot, sub, Point};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneCommand {
    Keep,
    SwitchLeft,
    SwitchRight,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoCommand {
    pub target_speed: f64,
    pub lane: LaneCommand,
}

impl EgoCommand {
    pub fn keep(target_speed: f64) -> Self {
        EgoCommand {
            target_speed,
            lane: LaneCommand::Keep,
        }
    }
}

/// `a = clamp(k_v (target - v), -a_max, a_max)`.
pub fn speed_control(v: f64, target: f64, cfg: &ControllerConfig) -> f64 {
    (cfg.k_v * (target - v)).clamp(-cfg.a_max, cfg.a_max)
}

/// Lookahead distance at speed `v`.
pub fn lookahead(v: f64, cfg: &ControllerConfig) -> f64 {
    (cfg.lookahead_time * v).max(cfg.lookahead_min)
}

/// Pure-pursuit steering towards `target` from the pose `(pos, heading)`,
/// clamped to the steering limit.
pub fn pure_pursuit(pos: Point, heading: f64, target: Point, cfg: &ControllerConfig) -> f64 {
    let d = sub(target, pos);
    let (s, c) = heading.sin_cos();
    let fwd = dot(d, [c, s]);
    let left = dot(d, [-s, c]);
    let ld2 = fwd * fwd + left * left;
    if ld2 < 1e-12 {
        return 0.0;
    }
    // curvature = 2 sin(alpha) / Ld = 2 left / Ld^2
    let curvature = 2.0 * left / ld2;
    (cfg.wheelbase * curvature).atan().clamp(-cfg.steer_limit, cfg.steer_limit)
}

/// Moves `current` towards `desired` by at most the steering-rate budget of one step.
pub fn rate_limit(current: f64, desired: f64, cfg: &ControllerConfig) -> f64 {
    let max = cfg.steer_rate * DT;
    current + (desired - current).clamp(-max, max)
}

/// Pose and derivatives after one semi-implicit bicycle step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BicycleStep {
    pub pos: Point,
    pub heading: f64,
    pub speed: f64,
    pub accel: f64,
    pub yaw_rate: f64,
}

/// Speed first (floored at zero), then position and heading with the new speed.
pub fn bicycle_step(pos: Point, heading: f64, speed: f64, accel: f64, steering: f64, wheelbase: f64) -> BicycleStep {
    let v = (speed + accel * DT).max(0.0);
    let yaw_rate = v * steering.tan() / wheelbase;
    let (s, c) = heading.sin_cos();
    BicycleStep {
        pos: [pos[0] + v * c * DT, pos[1] + v * s * DT],
        heading: heading + yaw_rate * DT,
        speed: v,
        accel: (v - speed) / DT,
        yaw_rate,
    }
}
