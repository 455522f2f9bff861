//! Next-fit sequence packing into fixed-size training windows.
//!
//! One window is open at any time. It starts with the delimiter token and
//! every appended document is followed by one more delimiter, so consecutive
//! documents share a single delimiter:
//!
//! ```text
//! [EOT d1... EOT d2... EOT]      1 + sum(len_i + 1) <= window
//! ```
//!
//! A document that does not fit closes the window and opens the next one;
//! documents longer than window - 2 follow the long-doc policy (split into
//! window - 2 sized chunks, each in its own window, or drop). Single pass,
//! linear in total tokens, order preserving.
//!
//! Shard files are binary: magic `TKPK`, u32 version, u32 window, then per
//! window a u32 length and that many u32 token ids, little-endian. Span
//! provenance goes to a JSONL sidecar, one line per window.

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

const MAGIC: &[u8; 4] = b"TKPK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LongDocPolicy {
    Split,
    Drop,
}

#[derive(Debug, Clone)]
pub struct PackerConfig {
    /// Window capacity in tokens (the paper trains at 4096).
    pub window: usize,
    /// Shared BOS/EOS delimiter id; must be a special of the vocabulary.
    pub delimiter: TokenId,
    pub long_doc: LongDocPolicy,
}

impl PackerConfig {
    pub fn for_vocab(
        vocab: &Vocabulary,
        window: usize,
        delimiter: &str,
        long_doc: LongDocPolicy,
    ) -> Result<Self> {
        let id = vocab.special_id(delimiter).ok_or_else(|| {
            Error::config(format!("delimiter {delimiter:?} is not a vocabulary special"))
        })?;
        let cfg = PackerConfig {
            window,
            delimiter: id,
            long_doc,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::config(format!(
                "window {} leaves no room for delimiter framing",
                self.window
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocSpan {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedWindow {
    pub ids: Vec<TokenId>,
    pub doc_spans: Vec<DocSpan>,
}

/// Streaming next-fit packer.
pub struct Packer {
    cfg: PackerConfig,
    open: PackedWindow,
    pub dropped_long: u64,
}

impl Packer {
    pub fn new(cfg: PackerConfig) -> Result<Self> {
        cfg.validate()?;
        let open = PackedWindow {
            ids: vec![cfg.delimiter],
            doc_spans: Vec::new(),
        };
        Ok(Packer {
            cfg,
            open,
            dropped_long: 0,
        })
    }

    fn fresh_window(&mut self) -> PackedWindow {
        std::mem::replace(
            &mut self.open,
            PackedWindow {
                ids: vec![self.cfg.delimiter],
                doc_spans: Vec::new(),
            },
        )
    }

    fn append(&mut self, doc_id: &str, tokens: &[TokenId]) {
        let start = self.open.ids.len();
        self.open.ids.extend_from_slice(tokens);
        self.open.ids.push(self.cfg.delimiter);
        self.open.doc_spans.push(DocSpan {
            doc_id: doc_id.to_string(),
            start,
            end: start + tokens.len(),
        });
    }

    /// Push one tokenized document; returns windows completed by this push.
    pub fn push(&mut self, doc_id: &str, tokens: &[TokenId]) -> Vec<PackedWindow> {
        let mut done = Vec::new();
        if tokens.len() > self.cfg.window - 2 {
            match self.cfg.long_doc {
                LongDocPolicy::Drop => {
                    self.dropped_long += 1;
                    return done;
                }
                LongDocPolicy::Split => {
                    if !self.open.doc_spans.is_empty() {
                        done.push(self.fresh_window());
                    }
                    for chunk in tokens.chunks(self.cfg.window - 2) {
                        self.append(doc_id, chunk);
                        done.push(self.fresh_window());
                    }
                    return done;
                }
            }
        }
        if self.open.ids.len() + tokens.len() + 1 > self.cfg.window {
            done.push(self.fresh_window());
        }
        self.append(doc_id, tokens);
        done
    }

    /// Close the final window, if it holds any document.
    pub fn finish(mut self) -> Option<PackedWindow> {
        (!self.open.doc_spans.is_empty()).then(|| self.fresh_window())
    }
}

/// Recover the tokenized documents from packed windows. Inverse of packing
/// when no document was split; split chunks come back as one document per
/// chunk under the same id.
pub fn unpack<I>(windows: I, delimiter: TokenId) -> Result<Vec<(String, Vec<TokenId>)>>
where
    I: IntoIterator<Item = PackedWindow>,
{
    let mut docs = Vec::new();
    for (w, window) in windows.into_iter().enumerate() {
        if window.ids.first() != Some(&delimiter) {
            return Err(Error::data(format!(
                "window {w}: missing leading delimiter"
            )));
        }
        let mut expect_start = 1usize;
        for span in &window.doc_spans {
            if span.start != expect_start || span.end < span.start {
                return Err(Error::data(format!(
                    "window {w}: span for {:?} misaligned (start {}, expected {})",
                    span.doc_id, span.start, expect_start
                )));
            }
            if span.end >= window.ids.len() || window.ids[span.end] != delimiter {
                return Err(Error::data(format!(
                    "window {w}: document {:?} lacks a trailing delimiter",
                    span.doc_id
                )));
            }
            let body = &window.ids[span.start..span.end];
            if body.contains(&delimiter) {
                return Err(Error::data(format!(
                    "window {w}: delimiter inside document {:?}",
                    span.doc_id
                )));
            }
            docs.push((span.doc_id.clone(), body.to_vec()));
            expect_start = span.end + 1;
        }
        if expect_start != window.ids.len() {
            return Err(Error::data(format!(
                "window {w}: trailing garbage after last span"
            )));
        }
    }
    Ok(docs)
}

// --- shard file format ------------------------------------------------------

pub struct ShardWriter<W: Write> {
    w: W,
    pub windows_written: u64,
}

impl<W: Write> ShardWriter<W> {
    pub fn new(mut w: W, window: usize) -> Result<Self> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(window as u32).to_le_bytes())?;
        Ok(ShardWriter {
            w,
            windows_written: 0,
        })
    }

    pub fn write_window(&mut self, window: &PackedWindow) -> Result<()> {
        self.w
            .write_all(&(window.ids.len() as u32).to_le_bytes())?;
        for id in &window.ids {
            self.w.write_all(&id.to_le_bytes())?;
        }
        self.windows_written += 1;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.w
    }
}

pub struct ShardReader<R: Read> {
    r: R,
    pub window: usize,
}

impl<R: Read> ShardReader<R> {
    pub fn new(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|e| Error::parse(format!("shard too short: {e}")))?;
        if &magic != MAGIC {
            return Err(Error::parse(format!(
                "bad magic {magic:?}, expected {MAGIC:?}"
            )));
        }
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)?;
        if u32::from_le_bytes(buf) != VERSION {
            return Err(Error::parse("unsupported shard version"));
        }
        r.read_exact(&mut buf)?;
        let window = u32::from_le_bytes(buf) as usize;
        Ok(ShardReader { r, window })
    }

    /// Read the next window's ids, or None at a clean end of file.
    pub fn next_ids(&mut self) -> Result<Option<Vec<TokenId>>> {
        let mut buf = [0u8; 4];
        match self.r.read_exact(&mut buf) {
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
            Ok(()) => {}
        }
        let n = u32::from_le_bytes(buf) as usize;
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            self.r
                .read_exact(&mut buf)
                .map_err(|_| Error::parse("truncated window payload"))?;
            ids.push(u32::from_le_bytes(buf));
        }
        Ok(Some(ids))
    }
}

/// Sidecar line carrying the provenance of one window.
#[derive(Debug, Serialize, Deserialize)]
pub struct SidecarLine {
    pub window: u64,
    pub spans: Vec<DocSpan>,
}

#[cfg(test)]
mod tests {
    use super::*;

    const EOT: TokenId = 9000;

    fn cfg(window: usize, long_doc: LongDocPolicy) -> PackerConfig {
        PackerConfig {
            window,
            delimiter: EOT,
            long_doc,
        }
    }

    fn run(docs: &[(&str, usize)], window: usize, policy: LongDocPolicy) -> Vec<PackedWindow> {
        let mut packer = Packer::new(cfg(window, policy)).unwrap();
        let mut out = Vec::new();
        let mut counter = 0u32;
        for (id, len) in docs {
            let tokens: Vec<TokenId> = (0..*len as u32).map(|i| counter + i).collect();
            counter += *len as u32;
            out.extend(packer.push(id, &tokens));
        }
        out.extend(packer.finish());
        out
    }

    #[test]
    fn three_doc_example() {
        let windows = run(&[("a", 2000), ("b", 2000), ("c", 4000)], 4096, LongDocPolicy::Split);
        assert_eq!(windows.len(), 2);
        assert_eq!(windows[0].ids.len(), 4003); // 1 + 2001 + 2001
        assert_eq!(windows[1].ids.len(), 4002); // 1 + 4001
        assert_eq!(windows[0].doc_spans.len(), 2);
        assert_eq!(windows[1].doc_spans.len(), 1);
        // delimiter count = spans + 1
        for w in &windows {
            let delims = w.ids.iter().filter(|&&t| t == EOT).count();
            assert_eq!(delims, w.doc_spans.len() + 1);
            assert!(w.ids.len() <= 4096);
        }
    }

    #[test]
    fn boundary_fit_fills_window_exactly() {
        let windows = run(&[("a", 4094)], 4096, LongDocPolicy::Split);
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].ids.len(), 4096);
    }

    #[test]
    fn empty_stream_no_windows() {
        let windows = run(&[], 4096, LongDocPolicy::Split);
        assert!(windows.is_empty());
    }

    #[test]
    fn empty_document_still_framed() {
        let windows = run(&[("e", 0)], 16, LongDocPolicy::Split);
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].ids, vec![EOT, EOT]);
        let docs = unpack(windows, EOT).unwrap();
        assert_eq!(docs, vec![("e".to_string(), vec![])]);
    }

    #[test]
    fn long_doc_split_chunks() {
        let windows = run(&[("pre", 3), ("big", 30), ("post", 2)], 16, LongDocPolicy::Split);
        // pre closes first; 30 tokens chunk into 14+14+2
        let lens: Vec<usize> = windows.iter().map(|w| w.ids.len()).collect();
        assert_eq!(lens, vec![1 + 4, 16, 16, 1 + 3, 1 + 3]);
        // conservation with order
        let flat: Vec<TokenId> = windows
            .iter()
            .flat_map(|w| w.ids.iter().copied().filter(|&t| t != EOT))
            .collect();
        assert_eq!(flat, (0..35).collect::<Vec<_>>());
    }

    #[test]
    fn long_doc_drop_counts() {
        let mut packer = Packer::new(cfg(8, LongDocPolicy::Drop)).unwrap();
        let mut out = packer.push("big", &(0..100).collect::<Vec<_>>());
        assert!(out.is_empty());
        out.extend(packer.push("ok", &[1, 2, 3]));
        assert_eq!(packer.dropped_long, 1);
        out.extend(packer.finish());
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn unpack_is_inverse_without_split() {
        let docs = vec![
            ("a".to_string(), vec![5u32, 6, 7]),
            ("b".to_string(), vec![8u32]),
            ("c".to_string(), (100..900).collect::<Vec<u32>>()),
        ];
        let mut packer = Packer::new(cfg(1024, LongDocPolicy::Split)).unwrap();
        let mut windows = Vec::new();
        for (id, ids) in &docs {
            windows.extend(packer.push(id, ids));
        }
        windows.extend(packer.finish());
        assert_eq!(unpack(windows, EOT).unwrap(), docs);
    }

    #[test]
    fn unpack_rejects_missing_leading_delimiter() {
        let bad = PackedWindow {
            ids: vec![1, 2, EOT],
            doc_spans: vec![DocSpan {
                doc_id: "x".into(),
                start: 1,
                end: 2,
            }],
        };
        let err = unpack([bad], EOT).unwrap_err();
        assert!(err.to_string().contains("leading delimiter"));
    }

    #[test]
    fn window_too_small_is_config_error() {
        assert!(Packer::new(cfg(1, LongDocPolicy::Split)).is_err());
    }

    #[test]
    fn shard_roundtrip() {
        let windows = run(&[("a", 5), ("b", 6)], 16, LongDocPolicy::Split);
        let mut buf = Vec::new();
        let mut writer = ShardWriter::new(&mut buf, 16).unwrap();
        for w in &windows {
            writer.write_window(w).unwrap();
        }
        let mut reader = ShardReader::new(buf.as_slice()).unwrap();
        assert_eq!(reader.window, 16);
        let mut got = Vec::new();
        while let Some(ids) = reader.next_ids().unwrap() {
            got.push(ids);
        }
        let want: Vec<Vec<TokenId>> = windows.iter().map(|w| w.ids.clone()).collect();
        assert_eq!(got, want);
    }
}
