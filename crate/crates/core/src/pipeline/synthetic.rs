//! Clustered synthetic corpus with planted false negatives.
//!
//! A cluster is named by a pair of topic words. Each query in a cluster owns
//! a facet: its labelled positive and `h` hidden positives all carry the
//! facet words, and the labelled positive also shares its detail words with
//! the query alone. Hidden positives are recorded in `hidden_qrels` only.
//!
//! Every word kind (topic, facet, detail, filler) comes from a small
//! corpus-wide vocabulary, so each word occurs in many documents and a
//! held-out query is written in words the training queries also use.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{Corpus, Document, Qrel, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabStyle {
    #[default]
    Uniform,
    Zipf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_clusters: usize,
    pub docs_per_cluster: usize,
    pub queries_per_cluster: usize,
    pub planted_fn_rate: f64,
    pub vocab_style: VocabStyle,
    pub seed: u64,
    pub background_vocab: usize,
    pub train_frac: f64,
    pub dev_frac: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_clusters: 50,
            docs_per_cluster: 20,
            queries_per_cluster: 4,
            planted_fn_rate: 0.2,
            vocab_style: VocabStyle::Uniform,
            seed: 42,
            background_vocab: 8,
            train_frac: 0.7,
            dev_frac: 0.15,
        }
    }
}

const FACET_WORDS: usize = 4;
const DETAIL_WORDS: usize = 3;
/// Smallest facet and detail pools.
const MIN_POOL: usize = 40;
/// Query-only filler words.
const QUERY_FILLER: usize = 8;

/// Token counts per text by kind.
#[derive(Clone, Copy)]
struct Mix {
    topic: usize,
    facet: usize,
    detail: usize,
    filler: usize,
}

const DOC_MIX: Mix = Mix {
    topic: 4,
    facet: 4,
    detail: 3,
    filler: 3,
};
const QUERY_MIX: Mix = Mix {
    topic: 2,
    facet: 2,
    detail: 2,
    filler: 1,
};

impl SyntheticSpec {
    /// Hidden positives per query: `ceil(rate · docs_per_cluster)`.
    pub fn hidden_per_query(&self) -> usize {
        (self.planted_fn_rate * self.docs_per_cluster as f64 - 1e-9)
            .ceil()
            .max(0.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.9).contains(&self.planted_fn_rate) {
            return Err(Error::Config(format!(
                "planted_fn_rate must lie in [0, 0.9], got {}",
                self.planted_fn_rate
            )));
        }
        if self.n_clusters == 0 || self.docs_per_cluster == 0 || self.queries_per_cluster == 0 {
            return Err(Error::Config(
                "cluster, document and query counts must be positive".into(),
            ));
        }
        let need = self.queries_per_cluster * (1 + self.hidden_per_query());
        if need > self.docs_per_cluster {
            return Err(Error::Config(format!(
                "{} queries per cluster with {} hidden positives each need {need} documents per cluster, have {}",
                self.queries_per_cluster,
                self.hidden_per_query(),
                self.docs_per_cluster
            )));
        }
        if self.background_vocab == 0 {
            return Err(Error::Config("background_vocab must be positive".into()));
        }
        let fr = [self.train_frac, self.dev_frac];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || self.train_frac + self.dev_frac > 1.0 {
            return Err(Error::Config(
                "split fractions must lie in [0, 1] and sum to at most 1".into(),
            ));
        }
        Ok(())
    }
}

fn pick<'a, R: Rng>(words: &'a [String], n: usize, rng: &mut R) -> Vec<&'a str> {
    (0..n)
        .map(|_| words[rng.random_range(0..words.len())].as_str())
        .collect()
}

struct Background {
    words: Vec<String>,
    dist: WeightedIndex<f64>,
}

impl Background {
    fn new(n: usize, style: VocabStyle) -> Self {
        Self::with_prefix("bg", n, style)
    }

    fn with_prefix(prefix: &str, n: usize, style: VocabStyle) -> Self {
        let weights: Vec<f64> = (1..=n)
            .map(|r| match style {
                VocabStyle::Uniform => 1.0,
                VocabStyle::Zipf => 1.0 / r as f64,
            })
            .collect();
        Background {
            words: (0..n).map(|i| format!("{prefix}{i}")).collect(),
            dist: WeightedIndex::new(weights).expect("positive weights"),
        }
    }

    fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<&str> {
        (0..n).map(|_| self.words[self.dist.sample(rng)].as_str()).collect()
    }
}

fn words(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}w{i}")).collect()
}

/// `n` distinct words from `pool`, avoiding indices already in `used`.
fn draw_set<R: Rng>(pool: &[String], n: usize, used: &mut Vec<usize>, rng: &mut R) -> Vec<String> {
    let free: Vec<usize> = (0..pool.len()).filter(|i| !used.contains(i)).collect();
    let chosen: Vec<usize> = free.choose_multiple(rng, n).copied().collect();
    used.extend(&chosen);
    chosen.into_iter().map(|i| pool[i].clone()).collect()
}

fn compose<R: Rng>(
    mix: Mix,
    cluster: &[String],
    facet: &[String],
    detail: &[String],
    bg: &Background,
    rng: &mut R,
) -> String {
    let mut tokens = pick(cluster, mix.topic, rng);
    tokens.extend(pick(facet, mix.facet, rng));
    tokens.extend(pick(detail, mix.detail, rng));
    tokens.extend(bg.sample(mix.filler, rng));
    tokens.shuffle(rng);
    tokens.join(" ")
}

/// Distinct topic-word pairs, one per cluster, from the smallest topic
/// vocabulary offering at least twice as many pairs as clusters.
fn topic_pairs<R: Rng>(n_clusters: usize, rng: &mut R) -> Vec<[usize; 2]> {
    let mut t = 2;
    while t * (t - 1) / 2 < 2 * n_clusters {
        t += 1;
    }
    let mut all: Vec<[usize; 2]> = (0..t).flat_map(|i| (i + 1..t).map(move |j| [i, j])).collect();
    all.shuffle(rng);
    all.truncate(n_clusters);
    all
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bg = Background::new(spec.background_vocab, spec.vocab_style);
    let h = spec.hidden_per_query();
    let filler = Background::with_prefix("qw", QUERY_FILLER, spec.vocab_style);
    // Room for every query's set plus one more for distractors and hidden docs.
    let attributes = words("att", (FACET_WORDS * (spec.queries_per_cluster + 1)).max(MIN_POOL));
    let details = words("det", (DETAIL_WORDS * (spec.queries_per_cluster + 1)).max(MIN_POOL));
    let pairs = topic_pairs(spec.n_clusters, &mut rng);

    let mut corpus = Corpus::default();
    let mut query_ids = Vec::new();
    for (c, pair) in pairs.iter().enumerate() {
        let cluster: Vec<String> = pair.iter().map(|i| format!("top{i}")).collect();
        let mut slots: Vec<usize> = (0..spec.docs_per_cluster).collect();
        slots.shuffle(&mut rng);
        // Slot owner: Some((query, is_labelled)) or None for a distractor.
        let mut owner: Vec<Option<(usize, bool)>> = vec![None; spec.docs_per_cluster];
        for j in 0..spec.queries_per_cluster {
            let group = &slots[j * (1 + h)..(j + 1) * (1 + h)];
            owner[group[0]] = Some((j, true));
            for &s in &group[1..] {
                owner[s] = Some((j, false));
            }
        }
        // Facets and query details are disjoint within a cluster; hidden and
        // distractor documents draw details that avoid every query's.
        let mut used_att = Vec::new();
        let facets: Vec<Vec<String>> = (0..spec.queries_per_cluster)
            .map(|_| draw_set(&attributes, FACET_WORDS, &mut used_att, &mut rng))
            .collect();
        let mut used_det = Vec::new();
        let query_details: Vec<Vec<String>> = (0..spec.queries_per_cluster)
            .map(|_| draw_set(&details, DETAIL_WORDS, &mut used_det, &mut rng))
            .collect();
        let doc_base = c * spec.docs_per_cluster;
        let query_base = c * spec.queries_per_cluster;

        for (slot, own) in owner.iter().enumerate() {
            let id = format!("d{:05}", doc_base + slot);
            let text = match *own {
                Some((j, true)) => compose(DOC_MIX, &cluster, &facets[j], &query_details[j], &bg, &mut rng),
                Some((j, false)) => {
                    let d = draw_set(&details, DETAIL_WORDS, &mut used_det.clone(), &mut rng);
                    compose(DOC_MIX, &cluster, &facets[j], &d, &bg, &mut rng)
                }
                None => {
                    let f = draw_set(&attributes, FACET_WORDS, &mut used_att.clone(), &mut rng);
                    let d = draw_set(&details, DETAIL_WORDS, &mut used_det.clone(), &mut rng);
                    compose(DOC_MIX, &cluster, &f, &d, &bg, &mut rng)
                }
            };
            corpus.documents.push(Document { id: id.clone(), text });
            if let Some((j, labelled)) = *own {
                let qrel = Qrel {
                    query_id: format!("q{:05}", query_base + j),
                    doc_id: id,
                    relevance: 1,
                };
                if labelled {
                    corpus.qrels.push(qrel);
                } else {
                    corpus.hidden_qrels.push(qrel);
                }
            }
        }
        for j in 0..spec.queries_per_cluster {
            let id = format!("q{:05}", query_base + j);
            let text = compose(QUERY_MIX, &cluster, &facets[j], &query_details[j], &filler, &mut rng);
            corpus.queries.push(Document { id: id.clone(), text });
            query_ids.push(id);
        }
    }
    corpus.qrels.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    corpus
        .hidden_qrels
        .sort_by(|a, b| (&a.query_id, &a.doc_id).cmp(&(&b.query_id, &b.doc_id)));

    query_ids.shuffle(&mut rng);
    let n = query_ids.len();
    let n_train = (spec.train_frac * n as f64).round() as usize;
    let n_dev = ((spec.dev_frac * n as f64).round() as usize).min(n - n_train);
    let mut splits = BTreeMap::new();
    for (i, q) in query_ids.into_iter().enumerate() {
        let s = if i < n_train {
            Split::Train
        } else if i < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
        splits.insert(q, s);
    }
    corpus.splits = splits;
    corpus.validate()?;
    Ok(corpus)
}
