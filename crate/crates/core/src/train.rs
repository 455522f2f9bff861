//! Deterministic byte-level BPE training.
//!
//! Pair selection is by highest frequency, then lowest left id, then lowest
//! right id, with pair frequencies counted over all adjacent index pairs of
//! the pretokenized corpus (overlapping occurrences count). Given the same
//! corpus the trainer emits byte-identical vocabularies on every run and
//! every platform.
//!
//! The merge loop is incremental: a lazy max-heap holds candidate pairs and
//! a postings table maps pairs to the distinct pretokens containing them, so
//! each merge touches only affected words. This matches the quadratic
//! recount-everything reference trainer token for token.

use crate::error::{Error, Result};
use crate::pretok::{pretokenize, PRETOKENIZER_ID};
use crate::vocab::{TokenId, Vocabulary, BASE_TOKENS};
use rustc_hash::FxHashMap;
use std::cmp::Reverse;
use std::collections::BinaryHeap;

#[derive(Debug, Clone)]
pub struct TrainerConfig {
    /// Total vocabulary size: 256 base tokens + merges + specials.
    pub target_size: usize,
    /// Pairs below this frequency are never merged.
    pub min_frequency: u64,
    pub specials: Vec<String>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            target_size: 32_768,
            min_frequency: 2,
            specials: vec!["<|endoftext|>".to_string()],
        }
    }
}

#[derive(Debug)]
pub struct TrainResult {
    pub vocab: Vocabulary,
    /// False when the corpus ran out of mergeable pairs before the target
    /// size was reached; the vocabulary is smaller, never padded.
    pub complete: bool,
    pub merges_requested: usize,
    pub merges_done: usize,
}

/// Train a BPE vocabulary over an iterator of documents.
pub fn train<I, S>(docs: I, cfg: &TrainerConfig) -> Result<TrainResult>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let min_size = BASE_TOKENS + cfg.specials.len();
    if cfg.target_size < min_size {
        return Err(Error::config(format!(
            "target_size {} below minimum {} (256 base + {} specials)",
            cfg.target_size,
            min_size,
            cfg.specials.len()
        )));
    }

    // distinct pretokens with occurrence counts
    let mut counts: FxHashMap<Box<[u8]>, u64> = FxHashMap::default();
    let mut saw_any = false;
    for doc in docs {
        saw_any = true;
        for piece in pretokenize(doc.as_ref()) {
            *counts.entry(piece.as_bytes().into()).or_insert(0) += 1;
        }
    }
    if !saw_any || counts.is_empty() {
        return Err(Error::data("training corpus is empty"));
    }

    // fixed word order so every downstream structure is reproducible
    let mut entries: Vec<(Box<[u8]>, u64)> = counts.into_iter().collect();
    entries.sort_unstable_by(|a, b| a.0.cmp(&b.0));

    let mut words: Vec<Vec<TokenId>> = Vec::with_capacity(entries.len());
    let mut word_counts: Vec<u64> = Vec::with_capacity(entries.len());
    for (bytes, c) in entries {
        words.push(bytes.iter().map(|&b| b as TokenId).collect());
        word_counts.push(c);
    }

    let budget = cfg.target_size - min_size;
    let mut merges: Vec<(TokenId, TokenId)> = Vec::with_capacity(budget);
    let mut token_bytes: Vec<Vec<u8>> = (0u16..256).map(|b| vec![b as u8]).collect();

    let mut pair_counts: FxHashMap<(TokenId, TokenId), u64> = FxHashMap::default();
    let mut postings: FxHashMap<(TokenId, TokenId), Vec<u32>> = FxHashMap::default();
    for (w, word) in words.iter().enumerate() {
        for pair in adjacent_pairs(word) {
            *pair_counts.entry(pair).or_insert(0) += word_counts[w];
            let list = postings.entry(pair).or_default();
            if list.last() != Some(&(w as u32)) {
                list.push(w as u32);
            }
        }
    }

    // max-heap keyed (count, lowest left, lowest right); entries go stale
    // when counts change and are re-validated on pop
    let mut heap: BinaryHeap<(u64, Reverse<TokenId>, Reverse<TokenId>)> =
        pair_counts
            .iter()
            .map(|(&(l, r), &c)| (c, Reverse(l), Reverse(r)))
            .collect();

    while merges.len() < budget {
        let mut selected = None;
        while let Some((c, Reverse(l), Reverse(r))) = heap.pop() {
            if pair_counts.get(&(l, r)).copied() == Some(c) {
                selected = Some((l, r, c));
                break;
            }
        }
        let Some((l, r, count)) = selected else { break };
        if count < cfg.min_frequency {
            break;
        }

        let new_id = (BASE_TOKENS + merges.len()) as TokenId;
        let mut bytes = token_bytes[l as usize].clone();
        bytes.extend_from_slice(&token_bytes[r as usize]);
        token_bytes.push(bytes);
        merges.push((l, r));

        let affected = postings.remove(&(l, r)).unwrap_or_default();
        let mut touched: Vec<(TokenId, TokenId)> = Vec::new();
        let mut prev_w = u32::MAX;
        for w in affected {
            if w == prev_w {
                continue;
            }
            prev_w = w;
            let word = &mut words[w as usize];
            if !contains_pair(word, l, r) {
                continue; // stale posting
            }
            let wc = word_counts[w as usize];
            for pair in adjacent_pairs(word) {
                *pair_counts.get_mut(&pair).expect("counted pair") -= wc;
                touched.push(pair);
            }
            merge_in_word(word, l, r, new_id);
            for pair in adjacent_pairs(word) {
                *pair_counts.entry(pair).or_insert(0) += wc;
                touched.push(pair);
                let list = postings.entry(pair).or_default();
                if list.last() != Some(&w) {
                    list.push(w);
                }
            }
        }
        // one heap refresh per changed pair, after all words settled
        touched.sort_unstable();
        touched.dedup();
        for pair in touched {
            match pair_counts.get(&pair).copied() {
                Some(0) => {
                    pair_counts.remove(&pair);
                }
                Some(c) => heap.push((c, Reverse(pair.0), Reverse(pair.1))),
                None => {}
            }
        }
    }

    let complete = merges.len() == budget;
    for s in &cfg.specials {
        token_bytes.push(s.as_bytes().to_vec());
    }
    let vocab = Vocabulary::new(
        token_bytes,
        merges.clone(),
        cfg.specials.clone(),
        PRETOKENIZER_ID.to_string(),
    )?;
    Ok(TrainResult {
        vocab,
        complete,
        merges_requested: budget,
        merges_done: merges.len(),
    })
}

fn adjacent_pairs(word: &[TokenId]) -> impl Iterator<Item = (TokenId, TokenId)> + '_ {
    word.windows(2).map(|w| (w[0], w[1]))
}

fn contains_pair(word: &[TokenId], l: TokenId, r: TokenId) -> bool {
    word.windows(2).any(|w| w[0] == l && w[1] == r)
}

/// Rewrite greedy leftmost occurrences of (l, r) to `new_id` in place.
fn merge_in_word(word: &mut Vec<TokenId>, l: TokenId, r: TokenId, new_id: TokenId) {
    let mut out = Vec::with_capacity(word.len());
    let mut i = 0;
    while i < word.len() {
        if i + 1 < word.len() && word[i] == l && word[i + 1] == r {
            out.push(new_id);
            i += 2;
        } else {
            out.push(word[i]);
            i += 1;
        }
    }
    *word = out;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(target: usize, specials: &[&str]) -> TrainerConfig {
        TrainerConfig {
            target_size: target,
            min_frequency: 2,
            specials: specials.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn first_merge_is_most_frequent_pair() {
        // "aaab" twice: (a,a) occurs 4 times, (a,b) twice
        let specials = ["<|endoftext|>"];
        let res = train(["aaab", "aaab"], &cfg(256 + 1 + 1, &specials)).unwrap();
        assert!(res.complete);
        assert_eq!(res.vocab.merges().len(), 1);
        let rule = res.vocab.merges()[0];
        assert_eq!((rule.left, rule.right), (97, 97));
        assert_eq!(res.vocab.bytes_of(rule.produced).unwrap(), b"aa");
    }

    #[test]
    fn zero_budget_yields_base_plus_specials() {
        let specials = ["<|endoftext|>"];
        let res = train(["whatever text"], &cfg(257, &specials)).unwrap();
        assert!(res.complete);
        assert_eq!(res.vocab.len(), 257);
        assert!(res.vocab.merges().is_empty());
    }

    #[test]
    fn repeated_word_merges_once() {
        let docs = std::iter::repeat("zz").take(1000);
        let res = train(docs, &cfg(256 + 1 + 1, &["<|endoftext|>"])).unwrap();
        assert_eq!(res.vocab.merges().len(), 1);
        let rule = res.vocab.merges()[0];
        assert_eq!((rule.left, rule.right), (b'z' as u32, b'z' as u32));
    }

    #[test]
    fn exhausted_corpus_returns_smaller_vocab_with_flag() {
        // only unique pairs, min_frequency 2 stops immediately
        let res = train(["ab"], &cfg(300, &[])).unwrap();
        assert!(!res.complete);
        assert_eq!(res.merges_done, 0);
        assert_eq!(res.vocab.len(), 256);
        assert_eq!(res.merges_requested, 44);
    }

    #[test]
    fn target_below_minimum_is_config_error() {
        let err = train(["x"], &cfg(256, &["<|endoftext|>"])).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn empty_corpus_is_data_error() {
        let docs: [&str; 0] = [];
        assert!(matches!(
            train(docs, &cfg(300, &[])).unwrap_err(),
            Error::Data(_)
        ));
        assert!(matches!(
            train([""], &cfg(300, &[])).unwrap_err(),
            Error::Data(_)
        ));
    }

    #[test]
    fn deterministic_across_runs() {
        let docs = ["the quick brown fox", "the quick red fox", "the lazy dog"];
        let a = train(docs, &cfg(280, &["<|endoftext|>"])).unwrap();
        let b = train(docs, &cfg(280, &["<|endoftext|>"])).unwrap();
        assert_eq!(a.vocab, b.vocab);
    }

    #[test]
    fn tie_break_lowest_left_then_right() {
        // pretokens: "ba", " ba", " ca", " ca" -> (b,a)x2, (c,a)x2, (' ',c)x2
        // all tie at 2; lowest left id wins: (0x20, 'c')
        let res = train(["ba ba ca ca"], &cfg(256 + 1, &[])).unwrap();
        let rule = res.vocab.merges()[0];
        assert_eq!((rule.left, rule.right), (0x20, b'c' as u32));

        // without the space tokens the tie falls to (b,a) over (c,a)
        let res = train(["ba", "ba", "ca", "ca"], &cfg(256 + 1, &[])).unwrap();
        let rule = res.vocab.merges()[0];
        assert_eq!((rule.left, rule.right), (b'b' as u32, b'a' as u32));
    }
}
