//! Closed-form linear concept erasure for sequence-model hidden states.

pub mod corpus;
pub mod eraser;
pub mod harness;
pub mod io;
pub mod error;
pub mod linalg;
pub mod moments;
pub mod pooling;
pub mod probes;
pub mod scrubber;
pub mod sequence;
pub mod synth;

pub use corpus::{Corpus, Split, Utterance};
pub use eraser::{guardedness_check, Eraser, EraserTolerances, LabelEncoding};
pub use error::{Error, FormatError, Result};
pub use linalg::Matrix;
pub use moments::MomentAccumulator;
pub use scrubber::{scrub, LayerStack, ScrubConfig, ScrubRun};
pub use sequence::EmbeddingSequence;
