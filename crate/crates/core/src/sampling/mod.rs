//! Adapter-derived candidate scores and their two consumers: hard-negative
//! resampling during training and reranking at inference. Random and top-k
//! samplers are kept as baselines.

mod candidates;
mod scores;
mod select;

pub use candidates::{
    candidates_from_tsv, candidates_to_tsv, mine_hard_negatives, read_candidates, rerank, score_candidates,
    sort_by_composite, write_candidates, write_class_probabilities, ScoredCandidate, CANDIDATE_HEADER,
};
pub use scores::{rerank_score, resample_score, score_pair, PairScores, ScoreParams};
pub use select::{
    baseline_sample, resample, resample_inclusion, weighted_sample_without_replacement, SamplerKind, SamplingMode,
};
