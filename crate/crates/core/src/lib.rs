//! Compositional phase diffusion.
//!
//! Motion segments of varying length are encoded into a periodic phase
//! latent ([`phase`]), denoised by semantic and transitional diffusion models
//! ([`diffusion`]) and composed into long sequences ([`composer`]). A
//! procedural corpus ([`synth`]) and evaluation metrics ([`metrics`]) round
//! out the pipeline.

mod error;
pub mod composer;
pub mod diffusion;
pub mod kv;
pub mod metrics;
pub mod motion;
pub mod phase;
pub mod synth;

pub use error::{Error, Result};
pub use motion::{ChannelLayout, ChannelRole, ChannelSelector, MotionSegment};
