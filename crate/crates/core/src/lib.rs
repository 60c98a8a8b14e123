//! Coarse-to-fine hierarchical sequence-to-sequence translation.
//!
//! Long sentences are split into short segments, each segment is translated
//! by a coarse network, and the concatenated output is re-decoded by a
//! monolingual fine network.

pub mod cascade;
pub mod config;
pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod evaluation;
mod error;
pub mod network;
pub mod segmenter;
pub mod training;

pub use decoder::{context_vector, AttentionWeights, DecoderState, IdPair};
pub use encoder::EncoderMemory;
pub use error::{HseqError, Result};
pub use network::{DecoderConfig, EncoderConfig, NetworkRole, NetworkSpec, Seq2Seq};
