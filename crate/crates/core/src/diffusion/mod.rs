//! Noise schedule, noise-prediction models and their training.

pub mod denoiser;
pub mod mixing;
pub mod schedule;
pub mod train;

pub use denoiser::{Condition, DenoiseInput, Denoiser, DenoiserConfig, DenoiserKind};
pub use mixing::{mixing_weight, phase_mix, MixWeight};
pub use schedule::{add_noise, ddim_step, eps_to_x0, make_schedule, DiffusionSchedule};
pub use train::{
    encode_pairs, heldout_l1, samples, train_denoiser, train_denoisers, DenoiserTrainConfig, LatentPair, Sample,
};
