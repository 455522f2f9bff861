//! Corpus cleaning: length filter, exact document dedup, paragraph-level
//! 13-gram dedup and frequent-paragraph removal.
//!
//! Dedup keeps the first occurrence in input order; input order is part of
//! the contract. Paragraphs are blank-line separated. A paragraph with at
//! least 13 whitespace tokens is dropped iff any of its 13-grams was already
//! registered by a previously retained paragraph; shorter paragraphs fall
//! back to exact normalized matching. 13-grams are stored as 64-bit
//! fingerprints (a false drop needs a fingerprint collision; the test suite
//! re-checks with exact strings).
//!
//! The frequent-paragraph pass is the one two-pass stage in the pipeline:
//! callers stream the input once through [`DedupState::observe`] and then
//! again through [`DedupState::process`].

use crate::hashing::{fnv1a64, sha256};
use crate::records::DocumentRecord;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

pub const GRAM_TOKENS: usize = 13;

/// NFC plus whitespace collapse; the identity under which documents and
/// paragraphs count as duplicates.
pub fn normalize_text(s: &str) -> String {
    let nfc: String = s.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Paragraphs are maximal runs of lines that are non-blank after trimming.
pub fn split_paragraphs(text: &str) -> Vec<String> {
    let mut paras = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.split('\n') {
        if line.trim().is_empty() {
            if !current.is_empty() {
                paras.push(current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        paras.push(current.join("\n"));
    }
    paras
}

/// Fingerprint of one n-gram window, length-prefixed per token so token
/// boundaries are unambiguous.
fn gram_fingerprint(tokens: &[&str]) -> u64 {
    let mut buf = Vec::with_capacity(tokens.iter().map(|t| t.len() + 4).sum());
    for t in tokens {
        buf.extend_from_slice(&(t.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.as_bytes());
    }
    fnv1a64(&buf)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub in_docs: u64,
    pub out_docs: u64,
    pub dropped_short: u64,
    pub dropped_dup_doc: u64,
    /// Paragraph counters (units: paragraphs, tracked separately from docs).
    pub dropped_dup_para: u64,
    pub dropped_frequent_para: u64,
    /// Documents that lost every paragraph to one of the paragraph passes.
    pub dropped_empty_after_frequent: u64,
    pub dropped_empty_after_dedup: u64,
}

impl FilterStats {
    /// Document-level conservation identity.
    pub fn conserved(&self) -> bool {
        self.in_docs
            == self.out_docs
                + self.dropped_short
                + self.dropped_dup_doc
                + self.dropped_empty_after_frequent
                + self.dropped_empty_after_dedup
    }
}

/// Length filter: retain documents with at least `min_chars` characters.
pub struct LengthFilter {
    pub min_chars: usize,
    pub stats: FilterStats,
}

impl LengthFilter {
    pub fn new(min_chars: usize) -> Self {
        LengthFilter {
            min_chars,
            stats: FilterStats::default(),
        }
    }

    pub fn process(&mut self, doc: DocumentRecord) -> Option<DocumentRecord> {
        self.stats.in_docs += 1;
        if doc.text.chars().count() < self.min_chars {
            self.stats.dropped_short += 1;
            return None;
        }
        self.stats.out_docs += 1;
        Some(doc)
    }
}

/// Exact document dedup under the normalized identity.
#[derive(Default)]
pub struct ExactDocDedup {
    seen: FxHashSet<[u8; 32]>,
}

impl ExactDocDedup {
    pub fn is_new(&mut self, text: &str) -> bool {
        self.seen.insert(sha256(normalize_text(text).as_bytes()))
    }
}

/// Paragraph-level 13-gram dedup state, shared across the whole stream.
#[derive(Default)]
pub struct ParagraphDedup {
    grams: FxHashSet<u64>,
    short_exact: FxHashSet<[u8; 32]>,
}

impl ParagraphDedup {
    /// Returns the retained paragraphs of `text` and the dropped count.
    pub fn process(&mut self, text: &str) -> (Vec<String>, u64) {
        let mut kept = Vec::new();
        let mut dropped = 0;
        for para in split_paragraphs(text) {
            if self.keep_paragraph(&para) {
                kept.push(para);
            } else {
                dropped += 1;
            }
        }
        (kept, dropped)
    }

    fn keep_paragraph(&mut self, para: &str) -> bool {
        let tokens: Vec<&str> = para.split_whitespace().collect();
        if tokens.len() >= GRAM_TOKENS {
            let fps: Vec<u64> = tokens
                .windows(GRAM_TOKENS)
                .map(gram_fingerprint)
                .collect();
            if fps.iter().any(|fp| self.grams.contains(fp)) {
                return false;
            }
            self.grams.extend(fps);
            true
        } else {
            self.short_exact
                .insert(sha256(normalize_text(para).as_bytes()))
        }
    }
}

/// Per-subset paragraph occurrence counts (pass 1 of the frequent filter).
#[derive(Default)]
pub struct ParagraphFrequencies {
    counts: FxHashMap<String, FxHashMap<[u8; 32], u64>>,
}

impl ParagraphFrequencies {
    pub fn observe(&mut self, subset: &str, text: &str) {
        let per_subset = self.counts.entry(subset.to_string()).or_default();
        for para in split_paragraphs(text) {
            *per_subset
                .entry(sha256(normalize_text(&para).as_bytes()))
                .or_insert(0) += 1;
        }
    }

    pub fn count(&self, subset: &str, para: &str) -> u64 {
        self.counts
            .get(subset)
            .and_then(|m| m.get(&sha256(normalize_text(para).as_bytes())))
            .copied()
            .unwrap_or(0)
    }
}

/// Full dedup stage: exact doc dedup, optional frequent-paragraph removal,
/// then strict 13-gram paragraph dedup.
pub struct DedupState {
    exact: ExactDocDedup,
    para: ParagraphDedup,
    frequent: Option<FrequentState>,
    pub stats: FilterStats,
}

struct FrequentState {
    freqs: ParagraphFrequencies,
    threshold: u64,
    /// Mirrors the doc-dedup decisions so pass 1 counts survivors only.
    count_dedup: ExactDocDedup,
}

impl DedupState {
    /// `frequent_threshold` of 0 disables the two-pass frequent filter.
    pub fn new(frequent_threshold: u64) -> Self {
        DedupState {
            exact: ExactDocDedup::default(),
            para: ParagraphDedup::default(),
            frequent: (frequent_threshold > 0).then(|| FrequentState {
                freqs: ParagraphFrequencies::default(),
                threshold: frequent_threshold,
                count_dedup: ExactDocDedup::default(),
            }),
            stats: FilterStats::default(),
        }
    }

    pub fn needs_observe_pass(&self) -> bool {
        self.frequent.is_some()
    }

    /// Pass 1: count paragraph occurrences among doc-dedup survivors.
    pub fn observe(&mut self, doc: &DocumentRecord) {
        if let Some(f) = &mut self.frequent {
            if f.count_dedup.is_new(&doc.text) {
                f.freqs.observe(&doc.subset, &doc.text);
            }
        }
    }

    /// Pass 2: emit the deduplicated form of `doc`, or None when dropped.
    pub fn process(&mut self, doc: DocumentRecord) -> Option<DocumentRecord> {
        self.stats.in_docs += 1;
        if !self.exact.is_new(&doc.text) {
            self.stats.dropped_dup_doc += 1;
            return None;
        }

        let mut text = doc.text;
        if let Some(f) = &self.frequent {
            let mut kept = Vec::new();
            let mut dropped = 0;
            for para in split_paragraphs(&text) {
                if f.freqs.count(&doc.subset, &para) > f.threshold {
                    dropped += 1;
                } else {
                    kept.push(para);
                }
            }
            self.stats.dropped_frequent_para += dropped;
            if kept.is_empty() {
                self.stats.dropped_empty_after_frequent += 1;
                return None;
            }
            text = kept.join("\n\n");
        }

        let (kept, dropped) = self.para.process(&text);
        self.stats.dropped_dup_para += dropped;
        if kept.is_empty() {
            self.stats.dropped_empty_after_dedup += 1;
            return None;
        }
        self.stats.out_docs += 1;
        Some(DocumentRecord {
            text: kept.join("\n\n"),
            ..doc
        })
    }
}
