//! Simulator and observation settings.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Fixed simulation step in seconds.
pub const DT: f64 = 0.1;

/// Ego mid-level controller gains and limits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Proportional speed gain (1/s).
    pub k_v: f64,
    pub a_max: f64,
    pub steer_limit: f64,
    /// Largest steering change per second.
    pub steer_rate: f64,
    pub wheelbase: f64,
    pub lookahead_min: f64,
    /// Lookahead seconds at the current speed.
    pub lookahead_time: f64,
    /// A lane switch completes once the lateral error drops below this.
    pub lane_change_tolerance: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            k_v: 1.0,
            a_max: 3.0,
            steer_limit: 0.6,
            steer_rate: 1.0,
            wheelbase: 2.7,
            lookahead_min: 4.0,
            lookahead_time: 0.6,
            lane_change_tolerance: 0.2,
        }
    }
}

/// Intelligent Driver Model parameters for background traffic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdmConfig {
    pub a_max: f64,
    pub b_comf: f64,
    pub b_max: f64,
    pub s0: f64,
    pub time_headway: f64,
    pub delta: f64,
    /// Distance searched ahead for a leader.
    pub look_ahead: f64,
    /// Vehicles closer than this to a route centreline block it.
    pub path_half_width: f64,
}

impl Default for IdmConfig {
    fn default() -> Self {
        IdmConfig {
            a_max: 1.5,
            b_comf: 2.0,
            b_max: 8.0,
            s0: 2.0,
            time_headway: 1.5,
            delta: 4.0,
            look_ahead: 60.0,
            path_half_width: 1.6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Upper bound of the ego target speed (m/s).
    pub v_max: f64,
    pub vehicle_length: f64,
    pub vehicle_width: f64,
    pub stagnation_window_steps: usize,
    pub stagnation_distance: f64,
    pub controller: ControllerConfig,
    pub idm: IdmConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            v_max: 13.9,
            vehicle_length: 4.5,
            vehicle_width: 1.8,
            stagnation_window_steps: 100,
            stagnation_distance: 0.5,
            controller: ControllerConfig::default(),
            idm: IdmConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.controller;
        let positive = [
            ("v_max", self.v_max),
            ("vehicle_length", self.vehicle_length),
            ("vehicle_width", self.vehicle_width),
            ("controller.k_v", c.k_v),
            ("controller.a_max", c.a_max),
            ("controller.steer_limit", c.steer_limit),
            ("controller.steer_rate", c.steer_rate),
            ("controller.wheelbase", c.wheelbase),
            ("controller.lookahead_min", c.lookahead_min),
            ("idm.a_max", self.idm.a_max),
            ("idm.b_comf", self.idm.b_comf),
            ("idm.b_max", self.idm.b_max),
            ("idm.delta", self.idm.delta),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::Scenario(format!("sim.{name} must be positive, got {v}")));
            }
        }
        if self.stagnation_window_steps == 0 {
            return Err(SimError::Scenario("sim.stagnation_window_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// What the ego perceives each step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsConfig {
    /// Surrounding-vehicle slots.
    pub n_slots: usize,
    /// Map side in pixels (even).
    pub map_size: usize,
    /// Metres per pixel.
    pub resolution: f64,
    pub sensor_range: f64,
}

impl Default for ObsConfig {
    fn default() -> Self {
        ObsConfig {
            n_slots: 8,
            map_size: 64,
            resolution: 0.5,
            sensor_range: 50.0,
        }
    }
}

impl ObsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_slots == 0 {
            return Err(SimError::Scenario("n_slots must be >= 1".into()));
        }
        if self.map_size == 0 || self.map_size % 2 != 0 {
            return Err(SimError::Scenario(format!("map_size must be even and positive, got {}", self.map_size)));
        }
        if !(self.resolution > 0.0) || !(self.sensor_range > 0.0) {
            return Err(SimError::Scenario("resolution and sensor_range must be positive".into()));
        }
        Ok(())
    }
}
