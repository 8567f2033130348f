//! Attention-based state encoding and Soft Actor-Critic training for
//! autonomous driving in the `traffic-sim` environment.

pub mod action;
pub mod buffer;
pub mod config;
pub mod encoder;
pub mod error;
pub mod features;
pub mod harness;
pub mod metrics;
pub mod policy;
pub mod reward;
pub mod rollout;
pub mod sac;

pub use action::map_action;
pub use buffer::{ReplayBuffer, Transition};
pub use encoder::{Encoder, EncoderConfig, Encoding, Variant};
pub use error::{Error, Result};
pub use features::EncoderInput;
pub use policy::{CriticPair, Mode, PolicyHead};
pub use reward::{compute_reward, RewardConfig};
pub use sac::{Agent, SacConfig, UpdateReport};

/// 64-bit agent.
pub type Agent64 = Agent<f64>;
/// 32-bit agent.
pub type Agent32 = Agent<f32>;
/// 64-bit encoder input.
pub type EncoderInput64 = EncoderInput<f64>;
