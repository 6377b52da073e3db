//! Brute-force retrieval, Recall@k, adapter F1 and the gradient-magnitude
//! harness.

mod gradient;
mod index;
mod metrics;

pub use gradient::{
    bucket_label, bucket_of, gradient_profile, pair_gradient_norm, BucketStats, GradientProfile, ProfileCandidate,
    ProfileQuery, NORMALIZATION, RANK_BUCKETS,
};
pub use index::{build_index, rank_order, BruteForceIndex, SearchHit};
pub use metrics::{
    adapter_f1, majority_baseline, qrels_from_pairs, recall_at_k, sorted_qrels, with_oracle_recall, BinaryStats,
    EvalReport, F1Report, Qrels, DEFAULT_KS,
};
