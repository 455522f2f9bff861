//! Embedding matrices and vocabulary-transfer initialization.
//!
//! The matrix file format is binary: magic `TKMX`, u32 version, u64 rows,
//! u64 dim, a 32-byte vocabulary content hash, then rows x dim little-endian
//! f32 values in row-major order. The hash ties a matrix to the exact
//! vocabulary its rows are aligned with; loading tools can verify it before
//! touching the data.
//!
//! [`vipi_init`] builds the matrix for an extended vocabulary: rows of
//! retained tokens are copied bit-exactly from the original matrix, rows of
//! novel tokens are the arithmetic mean of the original-embedding rows of
//! the token's decomposition under the original tokenizer (which is total,
//! so every novel token gets a meaningful row). Accumulation runs in f64 and
//! rows are independent, so the output is byte-identical regardless of
//! worker count.

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::Serialize;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"TKMX";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
    pub vocab_hash: [u8; 32],
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>, vocab_hash: [u8; 32]) -> Result<Self> {
        if rows * dim != data.len() {
            return Err(Error::data(format!(
                "matrix payload has {} values, header says {rows} x {dim} = {}",
                data.len(),
                rows * dim
            )));
        }
        Ok(EmbeddingMatrix {
            rows,
            dim,
            data,
            vocab_hash,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        w.write_all(&self.vocab_hash)?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|e| Error::parse(format!("embedding file too short: {e}")))?;
        if &magic != MAGIC {
            return Err(Error::parse(format!(
                "bad magic {magic:?}, expected {MAGIC:?}"
            )));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != VERSION {
            return Err(Error::parse(format!(
                "unsupported embedding file version {version}"
            )));
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let rows = u64::from_le_bytes(u64buf) as usize;
        r.read_exact(&mut u64buf)?;
        let dim = u64::from_le_bytes(u64buf) as usize;
        let mut vocab_hash = [0u8; 32];
        r.read_exact(&mut vocab_hash)?;

        let count = rows
            .checked_mul(dim)
            .ok_or_else(|| Error::parse("rows x dim overflows"))?;
        let mut data = Vec::with_capacity(count);
        let mut f32buf = [0u8; 4];
        for _ in 0..count {
            r.read_exact(&mut f32buf).map_err(|_| {
                Error::parse(format!(
                    "payload shorter than header rows x dim = {count} values"
                ))
            })?;
            data.push(f32::from_le_bytes(f32buf));
        }
        if r.read(&mut f32buf)? != 0 {
            return Err(Error::parse(format!(
                "payload longer than header rows x dim = {count} values"
            )));
        }
        EmbeddingMatrix::new(rows, dim, data, vocab_hash)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read_from(BufReader::new(File::open(path).map_err(|e| {
            Error::parse(format!("{}: {e}", path.display()))
        })?))
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VipiReport {
    /// Rows copied bit-exactly from the original matrix.
    pub copied: usize,
    /// Novel rows averaged from an original-tokenizer decomposition.
    pub averaged: usize,
    /// Novel rows whose bytes were not valid text; decomposed byte-by-byte.
    pub byte_fallback: usize,
}

/// Initialize the embedding matrix for an extended vocabulary.
pub fn vipi_init(
    original_vocab: &Vocabulary,
    original_emb: &EmbeddingMatrix,
    extended_vocab: &Vocabulary,
) -> Result<(EmbeddingMatrix, VipiReport)> {
    if original_emb.vocab_hash != original_vocab.content_hash() {
        return Err(Error::data(
            "embedding matrix is not aligned with the given vocabulary (hash mismatch)",
        ));
    }
    if original_emb.rows() != original_vocab.len() {
        return Err(Error::data(format!(
            "embedding rows {} != vocabulary size {}",
            original_emb.rows(),
            original_vocab.len()
        )));
    }

    let dim = original_emb.dim();
    // original id by (bytes, role)
    let orig_regular: FxHashMap<&[u8], TokenId> = (0..original_vocab.first_special_id())
        .map(|id| (original_vocab.bytes_of(id).unwrap(), id))
        .collect();

    enum RowPlan {
        Copy(TokenId),
        Mean(Vec<TokenId>),
        ByteMean(Vec<TokenId>),
    }

    let plans: Vec<RowPlan> = (0..extended_vocab.len() as TokenId)
        .map(|id| {
            if extended_vocab.is_special(id) {
                let s = std::str::from_utf8(extended_vocab.bytes_of(id).unwrap()).unwrap();
                if let Some(orig_id) = original_vocab.special_id(s) {
                    return RowPlan::Copy(orig_id);
                }
                // a newly introduced special is initialized like any novel
                // token, from its text under the original tokenizer
                return RowPlan::Mean(original_vocab.encode(s));
            }
            let bytes = extended_vocab.bytes_of(id).unwrap();
            if let Some(&orig_id) = orig_regular.get(bytes) {
                return RowPlan::Copy(orig_id);
            }
            match std::str::from_utf8(bytes) {
                Ok(text) => RowPlan::Mean(original_vocab.encode(text)),
                Err(_) => RowPlan::ByteMean(
                    bytes.iter().map(|&b| original_vocab.byte_id(b)).collect(),
                ),
            }
        })
        .collect();

    let mut report = VipiReport::default();
    for plan in &plans {
        match plan {
            RowPlan::Copy(_) => report.copied += 1,
            RowPlan::Mean(_) => report.averaged += 1,
            RowPlan::ByteMean(_) => report.byte_fallback += 1,
        }
    }

    let data: Vec<f32> = plans
        .par_iter()
        .flat_map_iter(|plan| -> Vec<f32> {
            match plan {
                RowPlan::Copy(orig_id) => original_emb.row(*orig_id as usize).to_vec(),
                RowPlan::Mean(ids) | RowPlan::ByteMean(ids) => {
                    let mut acc = vec![0f64; dim];
                    for &cid in ids {
                        for (a, &v) in acc.iter_mut().zip(original_emb.row(cid as usize)) {
                            *a += v as f64;
                        }
                    }
                    let inv = 1.0 / ids.len() as f64;
                    acc.into_iter().map(|a| (a * inv) as f32).collect()
                }
            }
        })
        .collect();

    let out = EmbeddingMatrix::new(
        extended_vocab.len(),
        dim,
        data,
        extended_vocab.content_hash(),
    )?;
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hash(n: u8) -> [u8; 32] {
        [n; 32]
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(EmbeddingMatrix::new(3, 4, vec![0.0; 11], hash(0)).is_err());
        assert!(EmbeddingMatrix::new(3, 4, vec![0.0; 12], hash(0)).is_ok());
    }

    #[test]
    fn file_roundtrip_is_byte_exact() {
        let m = EmbeddingMatrix::new(
            3,
            4,
            (0..12).map(|i| i as f32 * 0.25 - 1.0).collect(),
            hash(7),
        )
        .unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = EmbeddingMatrix::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, m);

        let mut buf2 = Vec::new();
        back.write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn header_payload_mismatch_is_error() {
        let m = EmbeddingMatrix::new(2, 2, vec![1.0; 4], hash(1)).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let short = &buf[..buf.len() - 4];
        assert!(EmbeddingMatrix::read_from(short).is_err());
        let mut long = buf.clone();
        long.extend_from_slice(&[0, 0, 0, 0]);
        assert!(EmbeddingMatrix::read_from(long.as_slice()).is_err());
    }

    #[test]
    fn bad_magic_and_version() {
        let m = EmbeddingMatrix::new(1, 1, vec![1.0], hash(1)).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(EmbeddingMatrix::read_from(bad.as_slice()).is_err());
        let mut badv = buf;
        badv[4] = 9;
        assert!(EmbeddingMatrix::read_from(badv.as_slice()).is_err());
    }
}
