//! Dense retrieval with a false-negative-aware adapter.
//!
//! A hashing dual encoder is trained in three stages: contrastive
//! pre-training, adapter training on a frozen encoder, and joint training
//! where the adapter's signals drive hard-negative resampling and reranking.

pub mod adapter;
pub mod encoder;
pub mod error;
pub mod index_eval;
pub mod io_util;
pub mod numkernel;
pub mod pipeline;
pub mod sampling;
pub mod supervision;

pub use adapter::{Adapter, AdapterConfig, AdapterOutput};
pub use encoder::{DualEncoder, EncoderConfig, SimilarityKind};
pub use error::{Error, Result};
pub use index_eval::{BruteForceIndex, EvalReport, F1Report, GradientProfile};
pub use numkernel::{AdamWConfig, AdamWState, ParamId, Tape, Tensor};
pub use pipeline::{Checkpoint, Config, Corpus, Model};
pub use sampling::{SamplerKind, SamplingMode, ScoreParams, ScoredCandidate};
pub use supervision::{ClassWeights, JointLossConfig, OutcomeLabel};

/// Derives a child seed from a base seed, a purpose tag and an index (FNV-1a
/// over the tag, mixed with splitmix64).
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut z = base ^ encoder::fnv1a64(tag.as_bytes()).rotate_left(17) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
