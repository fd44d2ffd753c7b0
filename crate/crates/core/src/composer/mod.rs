//! Composition of many segments: chain topology, joint denoising, and
//! blending of the decoded pieces into one sequence.

pub mod blend;
pub mod chain;
pub mod compose;
pub mod engine;

pub use blend::{blend, BlendPlan};
pub use chain::{derive_transition_spans, ChainSpec, SegmentChain, Span};
pub use compose::{compose_long, compose_pair, inbetween, Composition, Inbetween, Stack, DEFAULT_X0_CLIP};
pub use engine::{denoise_chain, ChainOutput, EpsModel, ExecMode, Node, NodeRole};
