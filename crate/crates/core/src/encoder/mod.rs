//! Shared-weight dual encoder over a hashing tokenizer.

mod dual;
pub mod export;
mod similarity;
mod tokenizer;

pub use dual::{BoundEncoder, DualEncoder, EncoderConfig, EMBEDDING, PROJECTION};
pub use similarity::{
    base_unit_score, cosine, dot, norm, similarity, tape_similarity, unit_interval_similarity, SimilarityKind,
};
pub use tokenizer::{fnv1a64, Tokenizer};
