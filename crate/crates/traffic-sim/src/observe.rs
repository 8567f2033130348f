//! What the ego sees at one step.

use serde::{Deserialize, Serialize};

use crate::bev::ContextMaps;

/// History samples per vehicle, newest first.
pub const HISTORY_LEN: usize = 5;
/// Raw simulation steps between consecutive history samples.
pub const HISTORY_STRIDE: usize = 5;
/// Width of every per-step feature vector.
pub const FEATURE_DIM: usize = 5;

/// `(x_right, y_forward, heading, speed, lane)` in the ego frame, or for the
/// ego dynamics `(steering, yaw_rate, speed, accel, jerk)`.
pub type Feature = [f64; FEATURE_DIM];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleHistory {
    pub id: u32,
    pub samples: [Feature; HISTORY_LEN],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoHistory {
    /// Ego pose features in its own current frame.
    pub e1: [Feature; HISTORY_LEN],
    /// Ego dynamics.
    pub e2: [Feature; HISTORY_LEN],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Nearest vehicles by distance then id; `None` pads unused slots.
    pub slots: Vec<Option<VehicleHistory>>,
    pub ego: EgoHistory,
    pub maps: ContextMaps,
}

impl Observation {
    /// `true` for each occupied slot.
    pub fn mask(&self) -> Vec<bool> {
        self.slots.iter().map(Option::is_some).collect()
    }

    pub fn present(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }
}
