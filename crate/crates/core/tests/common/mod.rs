//! Independent reference implementations used as oracles.
//!
//! Everything here recomputes results the slow, obvious way: quadratic
//! recount-everything BPE training, literal re-enactment of the extension
//! splice on token lists, exact string n-gram bookkeeping. None of it shares
//! state or shortcuts with the library code it checks.

use std::collections::{BTreeMap, HashMap, HashSet};
use tokmix_core::pretok::pretokenize;
use tokmix_core::vocab::{TokenId, Vocabulary};

/// Reference token: byte string plus role, the identity used when comparing
/// vocabularies token by token.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RefToken {
    Regular(Vec<u8>),
    Special(String),
}

/// Flatten a vocabulary into id-ordered reference tokens.
pub fn ref_tokens(vocab: &Vocabulary) -> Vec<RefToken> {
    (0..vocab.len() as TokenId)
        .map(|id| {
            if vocab.is_special(id) {
                RefToken::Special(
                    String::from_utf8(vocab.bytes_of(id).unwrap().to_vec()).unwrap(),
                )
            } else {
                RefToken::Regular(vocab.bytes_of(id).unwrap().to_vec())
            }
        })
        .collect()
}

/// Brute-force adjacent-pair counter over the pretokenized corpus:
/// every adjacent index pair counts, overlaps included.
pub fn count_pairs(words: &BTreeMap<Vec<u8>, u64>, seqs: &HashMap<Vec<u8>, Vec<TokenId>>)
    -> HashMap<(TokenId, TokenId), u64>
{
    let mut counts = HashMap::new();
    for (word, &freq) in words {
        let seq = &seqs[word];
        for w in seq.windows(2) {
            *counts.entry((w[0], w[1])).or_insert(0) += freq;
        }
    }
    counts
}

/// Quadratic reference BPE trainer: recount every pair each iteration,
/// pick (highest count, lowest left, lowest right), rewrite greedily
/// leftmost, stop below min_frequency.
pub fn reference_train(
    docs: &[String],
    target_size: usize,
    min_frequency: u64,
    specials: &[String],
) -> Vocabulary {
    let mut words: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
    for doc in docs {
        for piece in pretokenize(doc) {
            *words.entry(piece.as_bytes().to_vec()).or_insert(0) += 1;
        }
    }
    assert!(!words.is_empty(), "reference trainer needs a corpus");

    let mut seqs: HashMap<Vec<u8>, Vec<TokenId>> = words
        .keys()
        .map(|w| (w.clone(), w.iter().map(|&b| b as TokenId).collect()))
        .collect();
    let mut tokens: Vec<Vec<u8>> = (0u16..256).map(|b| vec![b as u8]).collect();
    let mut pairs: Vec<(TokenId, TokenId)> = Vec::new();

    let budget = target_size
        .checked_sub(256 + specials.len())
        .expect("target below minimum");
    for _ in 0..budget {
        let counts = count_pairs(&words, &seqs);
        let best = counts
            .iter()
            .map(|(&(l, r), &c)| (c, std::cmp::Reverse(l), std::cmp::Reverse(r)))
            .max();
        let Some((count, std::cmp::Reverse(l), std::cmp::Reverse(r))) = best else {
            break;
        };
        if count < min_frequency {
            break;
        }
        let new_id = tokens.len() as TokenId;
        let mut bytes = tokens[l as usize].clone();
        bytes.extend_from_slice(&tokens[r as usize]);
        tokens.push(bytes);
        pairs.push((l, r));
        for seq in seqs.values_mut() {
            let mut out = Vec::with_capacity(seq.len());
            let mut i = 0;
            while i < seq.len() {
                if i + 1 < seq.len() && seq[i] == l && seq[i + 1] == r {
                    out.push(new_id);
                    i += 2;
                } else {
                    out.push(seq[i]);
                    i += 1;
                }
            }
            *seq = out;
        }
    }

    for s in specials {
        tokens.push(s.as_bytes().to_vec());
    }
    Vocabulary::new(tokens, pairs, specials.to_vec(), "gpt2".into()).unwrap()
}

/// Hand-enactment of the extension splice on reference token lists:
/// train the target tokenizer with the reference trainer, find the index k
/// of the n-th token absent from the base, keep that prefix and append the
/// missing base tokens in base order.
///
/// Returns None when fewer than n novel tokens can be minted.
pub fn reference_extend(
    base: &Vocabulary,
    corpus: &[String],
    n: usize,
    min_frequency: u64,
) -> Option<Vec<RefToken>> {
    let base_tokens = ref_tokens(base);
    if n == 0 {
        return Some(base_tokens);
    }
    let target = base.len() + n;
    let fresh = reference_train(corpus, target, min_frequency, base.specials());
    let fresh_tokens = ref_tokens(&fresh);

    let base_set: HashSet<&RefToken> = base_tokens.iter().collect();
    let mut seen = 0usize;
    let mut k = None;
    for (i, t) in fresh_tokens.iter().enumerate() {
        if !base_set.contains(t) {
            seen += 1;
            if seen == n {
                k = Some(i);
                break;
            }
        }
    }
    let k = k?;

    let mut result: Vec<RefToken> = fresh_tokens[..=k].to_vec();
    let prefix: HashSet<&RefToken> = result.iter().collect();
    let appended: Vec<RefToken> = base_tokens
        .iter()
        .filter(|t| !prefix.contains(*t))
        .cloned()
        .collect();
    result.extend(appended);
    Some(result)
}

/// Exact-string 13-gram bookkeeping for cross-checking the hashed
/// implementation: returns the retained paragraphs per document.
pub fn reference_13gram_dedup(docs: &[(String, String)]) -> Vec<(String, Vec<String>)> {
    let mut grams: HashSet<Vec<String>> = HashSet::new();
    let mut short: HashSet<String> = HashSet::new();
    let mut out = Vec::new();
    for (id, text) in docs {
        let mut kept = Vec::new();
        for para in tokmix_core::filter::split_paragraphs(text) {
            let tokens: Vec<String> =
                para.split_whitespace().map(str::to_string).collect();
            if tokens.len() >= 13 {
                let windows: Vec<Vec<String>> =
                    tokens.windows(13).map(|w| w.to_vec()).collect();
                if windows.iter().any(|w| grams.contains(w)) {
                    continue;
                }
                grams.extend(windows);
                kept.push(para);
            } else {
                let norm = tokmix_core::filter::normalize_text(&para);
                if short.insert(norm) {
                    kept.push(para);
                }
            }
        }
        if !kept.is_empty() {
            out.push((id.clone(), kept));
        }
    }
    out
}

/// Deterministic pseudo-corpus generators. Two disjoint "languages" with
/// different morphology so extension has something to learn.
pub mod corpora {
    /// Small xorshift generator so fixtures need no external crate here.
    pub struct Rng(u64);

    impl Rng {
        pub fn new(seed: u64) -> Self {
            Rng(seed.max(1))
        }

        pub fn next(&mut self) -> u64 {
            let mut x = self.0;
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            self.0 = x;
            x
        }

        pub fn below(&mut self, n: usize) -> usize {
            (self.next() % n as u64) as usize
        }
    }

    const TARGET_ROOTS: &[&str] = &[
        "haz", "kert", "viz", "erdo", "mezo", "orszag", "varos", "szek", "asztal", "konyv",
        "madar", "szel", "feny", "hegy", "folyo", "utca", "ember", "gyerek", "kenyer", "alma",
    ];
    const TARGET_SUFFIXES: &[&str] = &[
        "ban", "ben", "nak", "nek", "val", "vel", "rol", "bol", "hoz", "ig", "ok", "ek", "unk",
        "etek", "sag", "seg", "os", "es", "kent", "va",
    ];
    const CONTROL_WORDS: &[&str] = &[
        "the", "of", "and", "to", "in", "house", "garden", "water", "forest", "field", "city",
        "chair", "table", "book", "bird", "wind", "light", "hill", "river", "street", "people",
        "child", "bread", "apple", "with", "from", "until", "like", "being", "was",
    ];

    /// Agglutinative pseudo-language: root plus one or two suffixes.
    pub fn target_word(rng: &mut Rng) -> String {
        let mut w = TARGET_ROOTS[rng.below(TARGET_ROOTS.len())].to_string();
        w.push_str(TARGET_SUFFIXES[rng.below(TARGET_SUFFIXES.len())]);
        if rng.below(3) == 0 {
            w.push_str(TARGET_SUFFIXES[rng.below(TARGET_SUFFIXES.len())]);
        }
        w
    }

    pub fn control_word(rng: &mut Rng) -> String {
        CONTROL_WORDS[rng.below(CONTROL_WORDS.len())].to_string()
    }

    pub fn document(rng: &mut Rng, words: usize, target: bool) -> String {
        let mut parts = Vec::with_capacity(words);
        for _ in 0..words {
            parts.push(if target {
                target_word(rng)
            } else {
                control_word(rng)
            });
        }
        parts.join(" ")
    }

    pub fn corpus(seed: u64, docs: usize, words_per_doc: usize, target: bool) -> Vec<String> {
        let mut rng = Rng::new(seed);
        (0..docs)
            .map(|_| document(&mut rng, words_per_doc, target))
            .collect()
    }
}
