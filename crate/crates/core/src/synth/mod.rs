//! Procedural skeletal-motion corpus.

pub mod actions;
pub mod corpus;
pub mod stream;

pub use actions::{gen_action, ActionKind, ActionTemplate, VOCAB};
pub use corpus::{extract_pairs, generate_streams, pae_segments, Corpus, CorpusConfig, Pair, PairIndex, Split, Stream};
pub use stream::gen_stream;
