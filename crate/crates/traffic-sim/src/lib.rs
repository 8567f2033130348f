//! Lane-graph traffic simulator with a pure-pursuit ego, IDM background
//! traffic and bird's-eye-view observations.

pub mod bev;
pub mod config;
pub mod control;
pub mod env;
pub mod error;
pub mod geom;
pub mod idm;
pub mod observe;
pub mod scenario;
pub mod trajectory;

pub use bev::{BitGrid, ContextMaps};
pub use config::{ControllerConfig, IdmConfig, ObsConfig, SimConfig, DT};
pub use control::{EgoCommand, LaneCommand};
pub use env::{Env, StepEvents, StepOutcome, VehicleState};
pub use error::{Result, SimError};
pub use observe::{EgoHistory, Feature, Observation, VehicleHistory, FEATURE_DIM, HISTORY_LEN, HISTORY_STRIDE};
pub use scenario::Scenario;
pub use trajectory::{replay, ReplayReport, TrajectoryLog};
