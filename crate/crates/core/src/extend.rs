//! Vocabulary extension: splice freshly trained target-language tokens into
//! an existing vocabulary, preserving the original tokens and their relative
//! merge order.
//!
//! Given an original vocabulary `V` of size `m` and a target increment `n`,
//! a new tokenizer `V'` of size `m + n` is trained on the target corpus.
//! `k` is the index of the n-th token of `V'` that is not in `V`. The result
//! is `V'[..=k]` followed by every token of `V` missing from that prefix, in
//! `V`'s original merge order — exactly `m + n` tokens of which exactly `n`
//! are novel.
//!
//! An optional pre-pass removes multi-character tokens containing letters
//! outside the Latin script from `V` before extension, so the freed budget
//! goes to target-language material.

use crate::error::{Error, Result};
use crate::train::{train, TrainerConfig};
use crate::vocab::{Token, TokenId, Vocabulary, BASE_TOKENS};
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};
use unicode_script::{Script, UnicodeScript};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtensionSpec {
    /// Number of novel tokens to add.
    pub n: usize,
    /// Remove non-Latin multi-character tokens from the original vocabulary
    /// before extension.
    pub latin_filter: bool,
    /// Pairs below this frequency are never merged while training the
    /// target-language tokenizer.
    pub min_frequency: u64,
}

impl Default for ExtensionSpec {
    fn default() -> Self {
        ExtensionSpec {
            n: 32_000,
            latin_filter: true,
            min_frequency: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtensionReport {
    /// Original size after the optional non-Latin filter.
    pub m: usize,
    pub removed_non_latin: usize,
    /// Splice index: the n-th novel token of the freshly trained tokenizer.
    /// Absent for the degenerate n = 0 case.
    pub k: Option<usize>,
    pub n: usize,
    /// Ids of the novel tokens in the extended vocabulary.
    pub novel_tokens: Vec<TokenId>,
}

/// True when the token would be removed by the non-Latin filter: its bytes
/// decode to at least two characters of which at least one is a letter
/// outside the Latin script. Digits, punctuation, symbols and whitespace are
/// script-neutral; undecodable bytes become U+FFFD which is not a letter.
fn is_non_latin_multichar(bytes: &[u8]) -> bool {
    let text = String::from_utf8_lossy(bytes);
    let mut chars = text.chars();
    let (Some(_), Some(_)) = (chars.next(), chars.next()) else {
        return false;
    };
    text.chars()
        .any(|c| c.is_alphabetic() && c.script() != Script::Latin)
}

/// Remove non-Latin multi-character tokens. Base bytes and specials are
/// always retained, surviving tokens keep their relative order, and merges
/// survive only when their product does (operands of surviving products
/// always survive, so the result stays derivation-closed).
pub fn filter_non_latin(vocab: &Vocabulary) -> (Vocabulary, Vec<Token>) {
    let first_special = vocab.first_special_id();
    let mut removed = Vec::new();
    let mut old_to_new: FxHashMap<TokenId, TokenId> = FxHashMap::default();
    let mut tokens: Vec<Vec<u8>> = Vec::with_capacity(vocab.len());
    let mut pairs: Vec<(TokenId, TokenId)> = Vec::new();

    for id in 0..first_special {
        let bytes = vocab.bytes_of(id).unwrap();
        if id >= BASE_TOKENS as TokenId && is_non_latin_multichar(bytes) {
            removed.push(Token {
                id,
                bytes: bytes.to_vec(),
            });
            continue;
        }
        old_to_new.insert(id, tokens.len() as TokenId);
        tokens.push(bytes.to_vec());
        if id >= BASE_TOKENS as TokenId {
            let rule = vocab.merges()[id as usize - BASE_TOKENS];
            // surviving product implies surviving operands
            let left = old_to_new[&rule.left];
            let right = old_to_new[&rule.right];
            pairs.push((left, right));
        }
    }
    for s in vocab.specials() {
        tokens.push(s.as_bytes().to_vec());
    }

    let filtered = Vocabulary::new(
        tokens,
        pairs,
        vocab.specials().to_vec(),
        vocab.pretokenizer().to_string(),
    )
    .expect("filtering a valid vocabulary preserves validity");
    (filtered, removed)
}

/// Extend `original` with `spec.n` tokens learned from `corpus`.
pub fn extend<I, S>(
    original: &Vocabulary,
    corpus: I,
    spec: &ExtensionSpec,
) -> Result<(Vocabulary, ExtensionReport)>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let (base, removed) = if spec.latin_filter {
        filter_non_latin(original)
    } else {
        (original.clone(), Vec::new())
    };
    let m = base.len();

    if spec.n == 0 {
        return Ok((
            base,
            ExtensionReport {
                m,
                removed_non_latin: removed.len(),
                k: None,
                n: 0,
                novel_tokens: Vec::new(),
            },
        ));
    }

    let target = m + spec.n;
    let trained = train(
        corpus,
        &TrainerConfig {
            target_size: target,
            min_frequency: spec.min_frequency,
            specials: base.specials().to_vec(),
        },
    )?;
    let fresh = trained.vocab;

    splice(&base, &fresh, spec.n, removed.len())
}

/// Apply the splice rule given the already trained target tokenizer.
fn splice(
    base: &Vocabulary,
    fresh: &Vocabulary,
    n: usize,
    removed_non_latin: usize,
) -> Result<(Vocabulary, ExtensionReport)> {
    let m = base.len();
    let base_bytes: FxHashSet<&[u8]> = (0..base.first_special_id())
        .map(|id| base.bytes_of(id).unwrap())
        .collect();

    // find k, the index of the n-th fresh token absent from the base
    let mut novel_seen = 0usize;
    let mut k = None;
    for id in 0..fresh.first_special_id() {
        if !base_bytes.contains(fresh.bytes_of(id).unwrap()) {
            novel_seen += 1;
            if novel_seen == n {
                k = Some(id as usize);
                break;
            }
        }
    }
    let Some(k) = k else {
        let total_novel = (0..fresh.first_special_id())
            .filter(|&id| !base_bytes.contains(fresh.bytes_of(id).unwrap()))
            .count();
        return Err(Error::data(format!(
            "corpus too small: minted {total_novel} of {n} requested novel tokens"
        )));
    };

    // prefix = fresh[..=k]; always inside the non-special range (novel
    // tokens are never specials). When k is the last fresh token the prefix
    // is the whole fresh vocabulary and nothing of the base is missing.
    debug_assert!(k < fresh.first_special_id() as usize);
    let mut tokens: Vec<Vec<u8>> = (0..=k as TokenId)
        .map(|id| fresh.bytes_of(id).unwrap().to_vec())
        .collect();
    let mut pairs: Vec<(TokenId, TokenId)> = fresh
        .merges()
        .iter()
        .take_while(|rule| (rule.produced as usize) <= k)
        .map(|rule| (rule.left, rule.right))
        .collect();

    let mut ext_ids: FxHashMap<Vec<u8>, TokenId> = tokens
        .iter()
        .enumerate()
        .map(|(id, b)| (b.clone(), id as TokenId))
        .collect();
    let prefix_bytes: FxHashSet<Vec<u8>> = tokens.iter().cloned().collect();

    // append every base token missing from the prefix, in base id order
    for id in 0..base.first_special_id() {
        let bytes = base.bytes_of(id).unwrap();
        if prefix_bytes.contains(bytes) {
            continue;
        }
        let new_id = tokens.len() as TokenId;
        if id >= BASE_TOKENS as TokenId {
            let rule = base.merges()[id as usize - BASE_TOKENS];
            let pair = remap_rule(base, rule.left, rule.right, &ext_ids, new_id, bytes)?;
            pairs.push(pair);
        }
        ext_ids.insert(bytes.to_vec(), new_id);
        tokens.push(bytes.to_vec());
    }
    for s in base.specials() {
        tokens.push(s.as_bytes().to_vec());
    }

    let extended = Vocabulary::new(
        tokens,
        pairs,
        base.specials().to_vec(),
        base.pretokenizer().to_string(),
    )?;
    if extended.len() != m + n {
        return Err(Error::audit(format!(
            "splice produced {} tokens, expected m + n = {}",
            extended.len(),
            m + n
        )));
    }

    let report = ExtensionReport {
        m,
        removed_non_latin,
        k: Some(k),
        n,
        novel_tokens: novel_ids(base, &extended),
    };
    Ok((extended, report))
}

/// Remap a base merge rule into extended-vocabulary ids. When an operand's
/// bytes are missing (not possible for structurally valid inputs), fall back
/// to the longest two-way split whose halves both already exist.
fn remap_rule(
    base: &Vocabulary,
    left: TokenId,
    right: TokenId,
    ext_ids: &FxHashMap<Vec<u8>, TokenId>,
    produced: TokenId,
    bytes: &[u8],
) -> Result<(TokenId, TokenId)> {
    let left_bytes = base.bytes_of(left).unwrap();
    let right_bytes = base.bytes_of(right).unwrap();
    if let (Some(&l), Some(&r)) = (ext_ids.get(left_bytes), ext_ids.get(right_bytes)) {
        debug_assert!(l < produced && r < produced);
        return Ok((l, r));
    }
    for split in (1..bytes.len()).rev() {
        if let (Some(&l), Some(&r)) = (ext_ids.get(&bytes[..split]), ext_ids.get(&bytes[split..]))
        {
            if l < produced && r < produced {
                return Ok((l, r));
            }
        }
    }
    Err(Error::data(format!(
        "token {:?} has no derivation in the extended vocabulary",
        String::from_utf8_lossy(bytes)
    )))
}

fn novel_ids(base: &Vocabulary, extended: &Vocabulary) -> Vec<TokenId> {
    let base_bytes: FxHashSet<&[u8]> = (0..base.first_special_id())
        .map(|id| base.bytes_of(id).unwrap())
        .collect();
    (0..extended.first_special_id())
        .filter(|&id| !base_bytes.contains(extended.bytes_of(id).unwrap()))
        .collect()
}

/// Independently re-check the extension post-conditions.
pub fn audit(original: &Vocabulary, extended: &Vocabulary) -> Result<ExtensionReport> {
    let mut violations = Vec::new();

    // every original token must be present, in original relative order
    let ext_pos: FxHashMap<&[u8], TokenId> = (0..extended.first_special_id())
        .map(|id| (extended.bytes_of(id).unwrap(), id))
        .collect();
    let mut last_pos: Option<TokenId> = None;
    let mut missing = 0usize;
    for id in 0..original.first_special_id() {
        let bytes = original.bytes_of(id).unwrap();
        match ext_pos.get(bytes) {
            None => {
                missing += 1;
                if violations.len() < 8 {
                    violations.push(format!(
                        "original token {id} ({:?}) missing",
                        String::from_utf8_lossy(bytes)
                    ));
                }
            }
            Some(&pos) => {
                if let Some(prev) = last_pos {
                    if pos < prev {
                        violations.push(format!(
                            "original token {id} ({:?}) out of order (position {pos} after {prev})",
                            String::from_utf8_lossy(bytes)
                        ));
                    }
                }
                last_pos = Some(pos);
            }
        }
    }
    for s in original.specials() {
        if extended.special_id(s).is_none() {
            violations.push(format!("special {s:?} missing"));
        }
    }

    let novel = novel_ids(original, extended);
    let n = novel.len();
    if missing == 0 && extended.len() != original.len() + n {
        violations.push(format!(
            "size identity violated: |extended| = {} but |original| + novel = {}",
            extended.len(),
            original.len() + n
        ));
    }

    if violations.is_empty() {
        Ok(ExtensionReport {
            m: original.len(),
            removed_non_latin: 0,
            k: None,
            n,
            novel_tokens: novel,
        })
    } else {
        Err(Error::audit(violations.join("; ")))
    }
}
