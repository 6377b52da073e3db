use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use rayon::prelude::*;

use crate::encoder::{similarity, DualEncoder, SimilarityKind};
use crate::error::{Error, Result};

/// Exact inner-product / cosine index over precomputed document embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceIndex {
    doc_ids: Vec<String>,
    rows: HashMap<String, usize>,
    dim: usize,
    embeddings: Vec<f32>,
    kind: SimilarityKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub row: usize,
    pub doc_id: String,
    pub score: f64,
}

/// Descending score, then ascending doc id.
pub fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

impl BruteForceIndex {
    pub fn from_embeddings(
        doc_ids: Vec<String>,
        dim: usize,
        embeddings: Vec<f32>,
        kind: SimilarityKind,
    ) -> Result<Self> {
        if doc_ids.is_empty() {
            return Err(Error::EmptyInput("index: empty corpus"));
        }
        if dim == 0 || embeddings.len() != doc_ids.len() * dim {
            return Err(Error::shape("build_index", &[doc_ids.len(), dim], &[embeddings.len()]));
        }
        let mut rows = HashMap::with_capacity(doc_ids.len());
        for (i, id) in doc_ids.iter().enumerate() {
            if rows.insert(id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate doc id {id}")));
            }
        }
        Ok(BruteForceIndex {
            doc_ids,
            rows,
            dim,
            embeddings,
            kind,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> SimilarityKind {
        self.kind
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_id(&self, row: usize) -> &str {
        &self.doc_ids[row]
    }

    pub fn row_of(&self, doc_id: &str) -> Option<usize> {
        self.rows.get(doc_id).copied()
    }

    pub fn embedding(&self, row: usize) -> &[f32] {
        &self.embeddings[row * self.dim..(row + 1) * self.dim]
    }

    pub fn embeddings(&self) -> &[f32] {
        &self.embeddings
    }

    /// Similarity of `q` to every row, in row order.
    pub fn scores(&self, q: &[f32]) -> Result<Vec<f64>> {
        if q.len() != self.dim {
            return Err(Error::shape("search", &[self.dim], &[q.len()]));
        }
        self.embeddings
            .par_chunks(self.dim)
            .map(|row| similarity(self.kind, q, row))
            .collect()
    }

    /// Exact top-`k` (clipped to the corpus size), ties by ascending doc id.
    pub fn search(&self, q: &[f32], k: usize) -> Result<Vec<SearchHit>> {
        self.search_excluding(q, k, &HashSet::new())
    }

    /// As `search`, skipping the given rows.
    pub fn search_excluding(&self, q: &[f32], k: usize, exclude: &HashSet<usize>) -> Result<Vec<SearchHit>> {
        let scores = self.scores(q)?;
        let mut rows: Vec<usize> = (0..self.len()).filter(|r| !exclude.contains(r)).collect();
        let cmp = |&a: &usize, &b: &usize| rank_order(scores[a], &self.doc_ids[a], scores[b], &self.doc_ids[b]);
        let k = k.min(rows.len());
        if k == 0 {
            return Ok(Vec::new());
        }
        if k < rows.len() {
            rows.select_nth_unstable_by(k - 1, cmp);
            rows.truncate(k);
        }
        rows.sort_unstable_by(cmp);
        Ok(rows
            .into_iter()
            .map(|row| SearchHit {
                row,
                doc_id: self.doc_ids[row].clone(),
                score: scores[row],
            })
            .collect())
    }
}

/// Encodes every document once (in parallel, order preserved).
pub fn build_index(docs: &[(String, String)], encoder: &DualEncoder) -> Result<BruteForceIndex> {
    if docs.is_empty() {
        return Err(Error::EmptyInput("index: empty corpus"));
    }
    let rows: Vec<Vec<f32>> = docs
        .par_iter()
        .map(|(id, text)| {
            encoder
                .encode_document(text)
                .map_err(|e| e.context(format!("encoding document {id}")))
        })
        .collect::<Result<_>>()?;
    let dim = encoder.dim();
    let embeddings = rows.concat();
    let ids = docs.iter().map(|(id, _)| id.clone()).collect();
    BruteForceIndex::from_embeddings(ids, dim, embeddings, encoder.similarity)
}
