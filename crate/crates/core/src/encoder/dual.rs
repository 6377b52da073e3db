use rand::Rng;
use serde::{Deserialize, Serialize};

use super::similarity::SimilarityKind;
use super::tokenizer::Tokenizer;
use crate::error::{Error, Result};
use crate::numkernel::{ParamId, Tape, Tensor, Var};

pub const EMBEDDING: ParamId = ParamId(0);
pub const PROJECTION: ParamId = ParamId(1);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub dim: usize,
    pub buckets: usize,
    pub similarity: SimilarityKind,
    pub use_projection: bool,
    pub init_scale: f32,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 32,
            buckets: 4096,
            similarity: SimilarityKind::Dot,
            use_projection: true,
            init_scale: 0.05,
        }
    }
}

/// Shared-weight encoder: both queries and documents go through the same
/// embedding table and projection.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoder {
    pub tokenizer: Tokenizer,
    pub embedding: Tensor,
    pub projection: Tensor,
    pub use_projection: bool,
    pub similarity: SimilarityKind,
}

/// An encoder whose parameters are bound as leaves on one tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundEncoder<'a> {
    table: &'a Tensor,
    projection: Option<Var>,
}

impl DualEncoder {
    pub fn new<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        if cfg.dim == 0 || cfg.buckets == 0 {
            return Err(Error::Config("encoder dim and buckets must be positive".into()));
        }
        Ok(DualEncoder {
            tokenizer: Tokenizer::new(cfg.buckets),
            embedding: Tensor::uniform(&[cfg.buckets, cfg.dim], cfg.init_scale, rng),
            projection: Tensor::identity(cfg.dim),
            use_projection: cfg.use_projection,
            similarity: cfg.similarity,
        })
    }

    pub fn dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> BoundEncoder<'a> {
        let projection = self.use_projection.then(|| tape.param(PROJECTION, &self.projection));
        BoundEncoder {
            table: &self.embedding,
            projection,
        }
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>> {
        let tokens = self.tokenizer.tokenize(text);
        if tokens.is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(tokens)
    }

    /// Mean-pooled (and optionally projected) embedding of `text`.
    pub fn encode(&self, text: &str) -> Result<Vec<f32>> {
        let tokens = self.tokenize(text)?;
        self.encode_tokens(&tokens)
    }

    pub fn encode_tokens(&self, tokens: &[usize]) -> Result<Vec<f32>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let v = bound.encode(&mut tape, tokens)?;
        Ok(tape.value(v).iter().map(|&x| x as f32).collect())
    }

    pub fn encode_query(&self, text: &str) -> Result<Vec<f32>> {
        self.encode(text)
    }

    pub fn encode_document(&self, text: &str) -> Result<Vec<f32>> {
        self.encode(text)
    }

    pub fn params(&self) -> Vec<(ParamId, &'static str, &Tensor)> {
        vec![
            (EMBEDDING, "encoder.embedding", &self.embedding),
            (PROJECTION, "encoder.projection", &self.projection),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<(ParamId, &mut Tensor)> {
        vec![(EMBEDDING, &mut self.embedding), (PROJECTION, &mut self.projection)]
    }
}

impl<'a> BoundEncoder<'a> {
    pub fn encode(&self, tape: &mut Tape<'a>, tokens: &[usize]) -> Result<Var> {
        let pooled = tape.embedding_bag_mean(EMBEDDING, self.table, tokens)?;
        match self.projection {
            Some(p) => tape.matvec(p, pooled),
            None => Ok(pooled),
        }
    }
}
