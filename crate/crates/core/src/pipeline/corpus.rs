use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::fnv1a64;
use crate::error::{Error, Result};
use crate::index_eval::{qrels_from_pairs, Qrels};
use crate::io_util::{read_to_string, write_atomic};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Qrel {
    pub query_id: String,
    pub doc_id: String,
    pub relevance: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub queries: Vec<Document>,
    pub qrels: Vec<Qrel>,
    /// Relevant documents deliberately left out of `qrels`.
    pub hidden_qrels: Vec<Qrel>,
    pub splits: BTreeMap<String, Split>,
}

pub const DOCUMENTS_FILE: &str = "documents.jsonl";
pub const QUERIES_FILE: &str = "queries.jsonl";
pub const QRELS_FILE: &str = "qrels.tsv";
pub const HIDDEN_QRELS_FILE: &str = "hidden_qrels.tsv";
pub const SPLITS_FILE: &str = "splits.tsv";

fn parse_jsonl(path: &Path) -> Result<Vec<Document>> {
    let text = read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

fn parse_qrels(path: &Path) -> Result<Vec<Qrel>> {
    let text = read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let perr = |m: String| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {m}", i + 1),
        };
        if f.len() != 3 {
            return Err(perr(format!("expected 3 columns, got {}", f.len())));
        }
        let relevance: u8 = f[2].trim().parse().map_err(|e| perr(format!("{e}")))?;
        if relevance > 1 {
            return Err(perr(format!("relevance must be 0 or 1, got {relevance}")));
        }
        out.push(Qrel {
            query_id: f[0].to_string(),
            doc_id: f[1].to_string(),
            relevance,
        });
    }
    Ok(out)
}

fn qrels_tsv(qrels: &[Qrel]) -> String {
    let mut out = String::new();
    for q in qrels {
        let _ = writeln!(out, "{}\t{}\t{}", q.query_id, q.doc_id, q.relevance);
    }
    out
}

fn jsonl(docs: &[Document]) -> String {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(d).expect("document serializes"));
        out.push('\n');
    }
    out
}

/// Hash-based 70/15/15 assignment for corpora shipped without a split file.
pub fn default_split(query_id: &str) -> Split {
    match fnv1a64(query_id.as_bytes()) % 100 {
        0..70 => Split::Train,
        70..85 => Split::Dev,
        _ => Split::Test,
    }
}

impl Corpus {
    pub fn load(dir: &Path) -> Result<Self> {
        let hidden = dir.join(HIDDEN_QRELS_FILE);
        let splits_path = dir.join(SPLITS_FILE);
        let mut corpus = Corpus {
            documents: parse_jsonl(&dir.join(DOCUMENTS_FILE))?,
            queries: parse_jsonl(&dir.join(QUERIES_FILE))?,
            qrels: parse_qrels(&dir.join(QRELS_FILE))?,
            hidden_qrels: if hidden.exists() {
                parse_qrels(&hidden)?
            } else {
                Vec::new()
            },
            splits: BTreeMap::new(),
        };
        if splits_path.exists() {
            for (i, line) in read_to_string(&splits_path)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let (q, s) = line.split_once('\t').ok_or_else(|| Error::Parse {
                    path: splits_path.clone(),
                    message: format!("line {}: expected query_id<TAB>split", i + 1),
                })?;
                corpus.splits.insert(q.to_string(), s.trim().parse()?);
            }
        } else {
            for q in &corpus.queries {
                corpus.splits.insert(q.id.clone(), default_split(&q.id));
            }
        }
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join(DOCUMENTS_FILE), jsonl(&self.documents).as_bytes())?;
        write_atomic(&dir.join(QUERIES_FILE), jsonl(&self.queries).as_bytes())?;
        write_atomic(&dir.join(QRELS_FILE), qrels_tsv(&self.qrels).as_bytes())?;
        write_atomic(&dir.join(HIDDEN_QRELS_FILE), qrels_tsv(&self.hidden_qrels).as_bytes())?;
        let mut s = String::new();
        for (q, split) in &self.splits {
            let _ = writeln!(s, "{q}\t{split}");
        }
        write_atomic(&dir.join(SPLITS_FILE), s.as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if self.documents.is_empty() {
            return Err(Error::Data("corpus has no documents".into()));
        }
        let mut docs = HashSet::new();
        for d in &self.documents {
            if !docs.insert(d.id.as_str()) {
                return Err(Error::Data(format!("duplicate document id {}", d.id)));
            }
        }
        let mut queries = HashSet::new();
        for q in &self.queries {
            if !queries.insert(q.id.as_str()) {
                return Err(Error::Data(format!("duplicate query id {}", q.id)));
            }
        }
        let mut labelled = HashSet::new();
        for (name, set) in [("qrels", &self.qrels), ("hidden_qrels", &self.hidden_qrels)] {
            for r in set {
                if !queries.contains(r.query_id.as_str()) {
                    return Err(Error::Data(format!("{name}: unknown query {}", r.query_id)));
                }
                if !docs.contains(r.doc_id.as_str()) {
                    return Err(Error::Data(format!("{name}: unknown document {}", r.doc_id)));
                }
            }
        }
        for r in &self.qrels {
            labelled.insert((r.query_id.as_str(), r.doc_id.as_str()));
        }
        for r in &self.hidden_qrels {
            if labelled.contains(&(r.query_id.as_str(), r.doc_id.as_str())) {
                return Err(Error::Data(format!(
                    "hidden_qrels overlaps qrels at ({}, {})",
                    r.query_id, r.doc_id
                )));
            }
        }
        for q in self.splits.keys() {
            if !queries.contains(q.as_str()) {
                return Err(Error::Data(format!("splits: unknown query {q}")));
            }
        }
        Ok(())
    }

    pub fn relevant(&self) -> Qrels {
        qrels_from_pairs(
            self.qrels
                .iter()
                .filter(|r| r.relevance > 0)
                .map(|r| (r.query_id.as_str(), r.doc_id.as_str())),
        )
    }

    pub fn hidden(&self) -> Qrels {
        qrels_from_pairs(
            self.hidden_qrels
                .iter()
                .filter(|r| r.relevance > 0)
                .map(|r| (r.query_id.as_str(), r.doc_id.as_str())),
        )
    }

    /// Queries of a split, in file order, that carry at least one relevant doc.
    pub fn split_queries(&self, split: Split) -> Vec<&Document> {
        let rel = self.relevant();
        self.queries
            .iter()
            .filter(|q| self.splits.get(&q.id) == Some(&split) && rel.contains_key(&q.id))
            .collect()
    }

    pub fn doc_pairs(&self) -> Vec<(String, String)> {
        self.documents.iter().map(|d| (d.id.clone(), d.text.clone())).collect()
    }
}
