//! Minimal deterministic differentiable-compute substrate.
//!
//! Everything runs in `f64` on the CPU. Forward passes are recorded on an
//! eager tape ([`Graph`]) and differentiated in reverse mode. On top of the
//! tape sit the transformer building blocks used by the phase autoencoder and
//! the diffusion denoisers, an Adam optimizer working on a named
//! [`ParamStore`], a seeded counter-based RNG and a binary checkpoint format.

pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{NnError, Result};
pub use gradcheck::finite_diff_check;
pub use graph::{Gradients, Graph, Segment, Var};
pub use layers::{sinusoidal_pe, sinusoidal_row, TransformerConfig};
pub use optim::{adam_step, clip_grad_norm, AdamConfig};
pub use params::ParamStore;
pub use rng::Rng;
pub use tensor::Tensor;
