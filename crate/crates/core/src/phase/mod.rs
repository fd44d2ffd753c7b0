//! Phase manifold: time windows, Comp-PE, the periodic reparameterization
//! and the autoencoder that maps motion segments to phase parameters.

pub mod pae;
pub mod params;
pub mod window;

pub use pae::{train_actpae, ActPae, PaeConfig, PaeTrainConfig, TrainLog};
pub use params::{phase_reparameterize, LatentStats, PhaseParams};
pub use window::{build_time_window, comp_pe, comp_pe_anchored, TimeWindow, WindowMode};
