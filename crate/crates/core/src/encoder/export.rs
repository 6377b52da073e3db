//! Flat binary embedding matrix (`RRRAEMB1`) plus a `row\tdoc_id` sidecar.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io_util::write_atomic;

pub const EMBEDDING_MAGIC: &[u8; 8] = b"RRRAEMB1";

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".tsv");
    PathBuf::from(s)
}

pub fn encode_matrix(count: usize, dim: usize, data: &[f32]) -> Result<Vec<u8>> {
    if count * dim != data.len() {
        return Err(Error::shape("embedding export", &[count, dim], &[data.len()]));
    }
    let mut out = Vec::with_capacity(16 + data.len() * 4);
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&(count as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Returns `(count, dim, row-major data)`.
pub fn decode_matrix(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < 16 || &bytes[..8] != EMBEDDING_MAGIC {
        return Err(Error::Data("embedding file: bad magic".into()));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != count * dim * 4 {
        return Err(Error::Data(format!(
            "embedding file: expected {} data bytes, found {}",
            count * dim * 4,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((count, dim, data))
}

pub fn write_embeddings(path: &Path, doc_ids: &[String], dim: usize, data: &[f32]) -> Result<()> {
    let bytes = encode_matrix(doc_ids.len(), dim, data)?;
    write_atomic(path, &bytes)?;
    let mut tsv = String::new();
    for (row, id) in doc_ids.iter().enumerate() {
        writeln!(tsv, "{row}\t{id}").unwrap();
    }
    write_atomic(&sidecar_path(path), tsv.as_bytes())
}

pub fn read_embeddings(path: &Path) -> Result<(Vec<String>, usize, Vec<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (count, dim, data) = decode_matrix(&bytes)?;
    let side = sidecar_path(path);
    let tsv = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let mut ids = Vec::with_capacity(count);
    for (i, line) in tsv.lines().enumerate() {
        let (row, id) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: side.clone(),
            message: format!("line {}: expected row<TAB>doc_id", i + 1),
        })?;
        if row.parse::<usize>().ok() != Some(i) {
            return Err(Error::Parse {
                path: side.clone(),
                message: format!("line {}: row index out of order", i + 1),
            });
        }
        ids.push(id.to_string());
    }
    if ids.len() != count {
        return Err(Error::Data(format!("sidecar lists {} ids for {count} rows", ids.len())));
    }
    Ok((ids, dim, data))
}
