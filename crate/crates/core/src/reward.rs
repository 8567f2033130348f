//! Per-step reward.

use serde::{Deserialize, Serialize};
use traffic_sim::{StepEvents, VehicleState};

use crate::error::{Error, Result};

/// Weights of the eight reward terms, in order: crash, offroad, speed, goal,
/// progress, offroute, wrong way, slow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub lambda: [f64; 8],
    /// Reward per metre of route progress.
    pub progress_scale: f64,
    /// Speed of the peak speed reward (m/s).
    pub v_max: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            lambda: [10.0, 5.0, 0.5, 10.0, 1.0, 2.0, 2.0, 2.0],
            progress_scale: 1.0,
            v_max: 13.9,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Config(format!("reward weights must be non-negative, got {:?}", self.lambda)));
        }
        if !(self.v_max > 0.0) || !self.progress_scale.is_finite() {
            return Err(Error::Config("reward v_max must be positive".into()));
        }
        Ok(())
    }
}

/// The eight unweighted terms.
pub fn reward_terms(events: &StepEvents, ego: &VehicleState, cfg: &RewardConfig) -> [f64; 8] {
    let penalty = |fired: bool| if fired { -1.0 } else { 0.0 };
    let v = ego.speed;
    let speed = if v < cfg.v_max {
        v / cfg.v_max
    } else {
        -(v - cfg.v_max).abs() / cfg.v_max
    };
    [
        penalty(events.crash),
        penalty(events.offroad),
        speed,
        if events.reached_goal { 1.0 } else { 0.0 },
        events.progress_delta * cfg.progress_scale,
        penalty(events.offroute),
        penalty(events.wrong_way),
        penalty(events.stagnant),
    ]
}

/// Weighted sum of [`reward_terms`], accumulated in term order.
pub fn compute_reward(events: &StepEvents, ego: &VehicleState, cfg: &RewardConfig) -> f64 {
    reward_terms(events, ego, cfg)
        .iter()
        .zip(&cfg.lambda)
        .fold(0.0, |acc, (r, l)| acc + l * r)
}
