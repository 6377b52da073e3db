use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::candidates::ScoredCandidate;
use super::scores::resample_score;
use crate::error::{Error, Result};
use crate::index_eval::rank_order;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Random,
    Topk,
    #[default]
    Rrra,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SamplerKind::Random),
            "topk" => Ok(SamplerKind::Topk),
            "rrra" => Ok(SamplerKind::Rrra),
            _ => Err(Error::Config(format!("unknown sampler {s:?}"))),
        }
    }
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplerKind::Random => "random",
            SamplerKind::Topk => "topk",
            SamplerKind::Rrra => "rrra",
        })
    }
}

/// How adapter-scored candidates are turned into a selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Draws without replacement, probability proportional to the score.
    #[default]
    Proportional,
    /// Deterministic top-`m` by score.
    TopByScore,
}

/// Successive draws without replacement, each proportional to the remaining
/// weights. Falls back to uniform once no positive weight remains.
pub fn weighted_sample_without_replacement<R: Rng + ?Sized>(weights: &[f64], m: usize, rng: &mut R) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..weights.len()).collect();
    let mut picked = Vec::with_capacity(m);
    while picked.len() < m && !remaining.is_empty() {
        let total: f64 = remaining.iter().map(|&i| weights[i]).sum();
        let pos = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (p, &i) in remaining.iter().enumerate() {
                if weights[i] <= 0.0 {
                    continue;
                }
                acc += weights[i];
                chosen = Some(p);
                if u < acc {
                    break;
                }
            }
            chosen.expect("positive total has a positive entry")
        } else {
            rng.random_range(0..remaining.len())
        };
        picked.push(remaining.remove(pos));
    }
    picked
}

/// Adapter-guided selection of `m` negatives. `composite` of each returned
/// candidate holds its resample score.
pub fn resample<R: Rng + ?Sized>(
    candidates: &[ScoredCandidate],
    gamma_rs: f64,
    m: usize,
    mode: SamplingMode,
    rng: &mut R,
) -> Result<Vec<ScoredCandidate>> {
    if m > candidates.len() {
        return Err(Error::OutOfRange(format!(
            "m = {m} exceeds {} candidates",
            candidates.len()
        )));
    }
    let scores = candidates
        .iter()
        .map(|c| resample_score(c.s_hn, c.s_fn, gamma_rs))
        .collect::<Result<Vec<_>>>()?;
    if m > 0 && scores.iter().all(|&s| s == 0.0) {
        log::warn!(
            "all resample scores are zero for query {}; sampling uniformly",
            candidates[0].query_id
        );
    }
    let picked = match mode {
        SamplingMode::Proportional => weighted_sample_without_replacement(&scores, m, rng),
        SamplingMode::TopByScore => {
            let mut order: Vec<usize> = (0..candidates.len()).collect();
            order.sort_by(|&a, &b| {
                scores[b].total_cmp(&scores[a]).then_with(|| {
                    let (ca, cb) = (&candidates[a], &candidates[b]);
                    rank_order(ca.s_base, &ca.doc_id, cb.s_base, &cb.doc_id)
                })
            });
            order.truncate(m);
            order
        }
    };
    Ok(picked
        .into_iter()
        .map(|i| ScoredCandidate {
            composite: scores[i],
            ..candidates[i].clone()
        })
        .collect())
}

/// Baseline negative samplers: uniform without replacement, or first `m` by
/// base score.
pub fn baseline_sample<R: Rng + ?Sized>(
    kind: SamplerKind,
    candidates: &[ScoredCandidate],
    m: usize,
    rng: &mut R,
) -> Result<Vec<ScoredCandidate>> {
    if m > candidates.len() {
        return Err(Error::OutOfRange(format!(
            "m = {m} exceeds pool of {}",
            candidates.len()
        )));
    }
    match kind {
        SamplerKind::Random => Ok(index::sample(rng, candidates.len(), m)
            .into_iter()
            .map(|i| candidates[i].clone())
            .collect()),
        SamplerKind::Topk => {
            let mut sorted = candidates.to_vec();
            sorted.sort_by(|a, b| rank_order(a.s_base, &a.doc_id, b.s_base, &b.doc_id));
            sorted.truncate(m);
            Ok(sorted)
        }
        SamplerKind::Rrra => Err(Error::Config("rrra is not a baseline sampler; use resample".into())),
    }
}

/// Monte-Carlo estimate of each candidate's probability of being selected by
/// `resample`.
pub fn resample_inclusion<R: Rng + ?Sized>(
    candidates: &[ScoredCandidate],
    gamma_rs: f64,
    m: usize,
    mode: SamplingMode,
    trials: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let m = m.min(candidates.len());
    let scores = candidates
        .iter()
        .map(|c| resample_score(c.s_hn, c.s_fn, gamma_rs))
        .collect::<Result<Vec<_>>>()?;
    let mut hits = vec![0usize; candidates.len()];
    let trials = if mode == SamplingMode::TopByScore {
        1
    } else {
        trials.max(1)
    };
    for _ in 0..trials {
        let picked = match mode {
            SamplingMode::Proportional => weighted_sample_without_replacement(&scores, m, rng),
            SamplingMode::TopByScore => resample(candidates, gamma_rs, m, mode, rng)?
                .iter()
                .map(|c| candidates.iter().position(|x| x.doc_id == c.doc_id).unwrap())
                .collect(),
        };
        for i in picked {
            hits[i] += 1;
        }
    }
    Ok(hits.into_iter().map(|h| h as f64 / trials as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pool(s_hn: &[f64]) -> Vec<ScoredCandidate> {
        s_hn.iter()
            .enumerate()
            .map(|(i, &s)| ScoredCandidate {
                query_id: "q".into(),
                doc_id: format!("d{i}"),
                s_base: -(i as f64),
                s_hn: s,
                s_fn: 0.0,
                composite: 0.0,
                rank: i,
            })
            .collect()
    }

    #[test]
    fn certain_candidate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let out = resample(&pool(&[0.0, 1.0, 0.0]), 1.0, 1, SamplingMode::Proportional, &mut rng).unwrap();
            assert_eq!(out[0].doc_id, "d1");
        }
    }

    #[test]
    fn full_draw_returns_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = resample(&pool(&[0.5; 5]), 1.0, 5, SamplingMode::Proportional, &mut rng).unwrap();
        let mut ids: Vec<_> = out.iter().map(|c| c.doc_id.clone()).collect();
        ids.sort();
        assert_eq!(ids, ["d0", "d1", "d2", "d3", "d4"]);
    }

    #[test]
    fn zero_scores_fall_back_to_uniform() {
        let mut c = pool(&[0.4, 0.7, 0.2]);
        for x in &mut c {
            x.s_fn = 1.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = resample(&c, 1.0, 2, SamplingMode::Proportional, &mut rng).unwrap();
        assert_eq!(out.len(), 2);
        assert_ne!(out[0].doc_id, out[1].doc_id);
    }

    #[test]
    fn top_by_score_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = resample(&pool(&[0.1, 0.9, 0.5]), 1.0, 2, SamplingMode::TopByScore, &mut rng).unwrap();
        let ids: Vec<_> = out.iter().map(|c| c.doc_id.as_str()).collect();
        assert_eq!(ids, ["d1", "d2"]);
    }

    #[test]
    fn baselines() {
        let c = pool(&[0.0; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let top = baseline_sample(SamplerKind::Topk, &c, 2, &mut rng).unwrap();
        assert_eq!(top.iter().map(|c| c.doc_id.as_str()).collect::<Vec<_>>(), ["d0", "d1"]);
        assert!(baseline_sample(SamplerKind::Random, &c, 4, &mut rng).is_err());
        assert_eq!(baseline_sample(SamplerKind::Random, &c, 3, &mut rng).unwrap().len(), 3);
        let a = baseline_sample(SamplerKind::Random, &c, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = baseline_sample(SamplerKind::Random, &c, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn m_larger_than_pool_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(resample(&pool(&[0.5]), 1.0, 2, SamplingMode::Proportional, &mut rng).is_err());
    }
}
