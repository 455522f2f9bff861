//! Byte-level BPE vocabulary: ordered tokens, ordered merge rules, specials.
//!
//! A vocabulary is fully determined by its merge list plus the special-token
//! tail. Ids are laid out as
//!
//! ```text
//! [0..256)                      single-byte base tokens (a permutation set)
//! [256..256+|merges|)           composite tokens, id = 256 + merge rank
//! [256+|merges|..len)           special tokens, in declaration order
//! ```
//!
//! Every constructor path goes through [`Vocabulary::new`], which checks the
//! full structural contract, so a value of this type is always internally
//! consistent: each composite's bytes are the concatenation of its merge
//! operands, ranks are dense, operands precede products.

use crate::error::{Error, Result};
use crate::pretok::{self, PRETOKENIZER_ID};
use rustc_hash::{FxHashMap, FxHashSet};
use sha2::{Digest, Sha256};
use std::cmp::Reverse;
use std::collections::BinaryHeap;

pub type TokenId = u32;

/// Number of single-byte base tokens.
pub const BASE_TOKENS: usize = 256;

/// One vocabulary entry, as exposed to callers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub id: TokenId,
    pub bytes: Vec<u8>,
}

/// One merge step: `left` followed by `right` rewrites to `produced`.
/// `produced == 256 + rank` always holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergeRule {
    pub rank: u32,
    pub left: TokenId,
    pub right: TokenId,
    pub produced: TokenId,
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<Vec<u8>>,
    merges: Vec<MergeRule>,
    specials: Vec<String>,
    pretokenizer: String,
    // derived lookup tables
    byte_ids: [TokenId; BASE_TOKENS],
    token_ids: FxHashMap<Vec<u8>, TokenId>,
    pair_table: FxHashMap<(TokenId, TokenId), (u32, TokenId)>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
            && self.merges == other.merges
            && self.specials == other.specials
            && self.pretokenizer == other.pretokenizer
    }
}

impl Vocabulary {
    /// Build and validate a vocabulary from its id-ordered token bytes,
    /// rank-ordered merge pairs and special strings.
    pub fn new(
        tokens: Vec<Vec<u8>>,
        merge_pairs: Vec<(TokenId, TokenId)>,
        specials: Vec<String>,
        pretokenizer: String,
    ) -> Result<Self> {
        if pretokenizer != PRETOKENIZER_ID {
            return Err(Error::parse(format!(
                "unsupported pretokenizer {pretokenizer:?} (expected {PRETOKENIZER_ID:?})"
            )));
        }
        let expected = BASE_TOKENS + merge_pairs.len() + specials.len();
        if tokens.len() != expected {
            return Err(Error::parse(format!(
                "token count {} != 256 + {} merges + {} specials = {}",
                tokens.len(),
                merge_pairs.len(),
                specials.len(),
                expected
            )));
        }

        // ids 0..255 are exactly the 256 single-byte tokens (any order)
        let mut byte_ids = [TokenId::MAX; BASE_TOKENS];
        for (id, bytes) in tokens.iter().take(BASE_TOKENS).enumerate() {
            if bytes.len() != 1 {
                return Err(Error::parse(format!(
                    "token {id} in the base range has {} bytes (want 1)",
                    bytes.len()
                )));
            }
            let b = bytes[0] as usize;
            if byte_ids[b] != TokenId::MAX {
                return Err(Error::parse(format!(
                    "byte 0x{:02x} appears twice in the base range (ids {} and {id})",
                    bytes[0], byte_ids[b]
                )));
            }
            byte_ids[b] = id as TokenId;
        }

        let first_special = tokens.len() - specials.len();
        let mut merges = Vec::with_capacity(merge_pairs.len());
        for (rank, &(left, right)) in merge_pairs.iter().enumerate() {
            let produced = (BASE_TOKENS + rank) as TokenId;
            if left >= produced || right >= produced {
                return Err(Error::parse(format!(
                    "merge {rank}: operand id {} not defined before produced id {produced}",
                    left.max(right)
                )));
            }
            let mut expect = tokens[left as usize].clone();
            expect.extend_from_slice(&tokens[right as usize]);
            if tokens[produced as usize] != expect {
                return Err(Error::parse(format!(
                    "merge {rank}: token {produced} bytes do not equal left {left} ++ right {right}"
                )));
            }
            merges.push(MergeRule {
                rank: rank as u32,
                left,
                right,
                produced,
            });
        }

        for (i, s) in specials.iter().enumerate() {
            let id = first_special + i;
            if tokens[id] != s.as_bytes() {
                return Err(Error::parse(format!(
                    "special {i} ({s:?}) does not match token {id} bytes"
                )));
            }
        }

        // uniqueness within role
        let mut token_ids =
            FxHashMap::with_capacity_and_hasher(first_special, Default::default());
        for (id, bytes) in tokens.iter().take(first_special).enumerate() {
            if let Some(prev) = token_ids.insert(bytes.clone(), id as TokenId) {
                return Err(Error::parse(format!(
                    "duplicate token bytes at ids {prev} and {id}"
                )));
            }
        }
        let mut seen_special: FxHashSet<&str> = FxHashSet::default();
        for s in &specials {
            if !seen_special.insert(s.as_str()) {
                return Err(Error::parse(format!("duplicate special token {s:?}")));
            }
        }

        let mut pair_table =
            FxHashMap::with_capacity_and_hasher(merges.len(), Default::default());
        for rule in &merges {
            pair_table.insert((rule.left, rule.right), (rule.rank, rule.produced));
        }

        Ok(Vocabulary {
            tokens,
            merges,
            specials,
            pretokenizer,
            byte_ids,
            token_ids,
            pair_table,
        })
    }

    /// Base-bytes-only vocabulary (no merges) plus the given specials.
    pub fn base(specials: Vec<String>, pretokenizer: String) -> Result<Self> {
        let mut tokens: Vec<Vec<u8>> = (0u16..256).map(|b| vec![b as u8]).collect();
        for s in &specials {
            tokens.push(s.as_bytes().to_vec());
        }
        Vocabulary::new(tokens, Vec::new(), specials, pretokenizer)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn merges(&self) -> &[MergeRule] {
        &self.merges
    }

    pub fn specials(&self) -> &[String] {
        &self.specials
    }

    pub fn pretokenizer(&self) -> &str {
        &self.pretokenizer
    }

    /// First special id; non-special tokens are `0..first_special_id()`.
    pub fn first_special_id(&self) -> TokenId {
        (self.tokens.len() - self.specials.len()) as TokenId
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        (id as usize) < self.tokens.len() && id >= self.first_special_id()
    }

    pub fn bytes_of(&self, id: TokenId) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(|v| v.as_slice())
    }

    pub fn token(&self, id: TokenId) -> Option<Token> {
        self.bytes_of(id).map(|b| Token {
            id,
            bytes: b.to_vec(),
        })
    }

    /// Id of a non-special token with exactly these bytes.
    pub fn id_of_bytes(&self, bytes: &[u8]) -> Option<TokenId> {
        self.token_ids.get(bytes).copied()
    }

    /// Id of the single-byte base token for `b`.
    pub fn byte_id(&self, b: u8) -> TokenId {
        self.byte_ids[b as usize]
    }

    pub fn special_id(&self, s: &str) -> Option<TokenId> {
        let first = self.first_special_id();
        self.specials
            .iter()
            .position(|x| x == s)
            .map(|i| first + i as TokenId)
    }

    /// Merge rank lookup for an adjacent pair.
    pub fn pair_rank(&self, left: TokenId, right: TokenId) -> Option<(u32, TokenId)> {
        self.pair_table.get(&(left, right)).copied()
    }

    /// Content hash over the complete structure (tokens, merges, specials,
    /// pretokenizer). Embedding files carry this to prove alignment.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.pretokenizer.as_bytes());
        h.update((self.tokens.len() as u64).to_le_bytes());
        h.update((self.merges.len() as u64).to_le_bytes());
        h.update((self.specials.len() as u64).to_le_bytes());
        for t in &self.tokens {
            h.update((t.len() as u32).to_le_bytes());
            h.update(t);
        }
        for m in &self.merges {
            h.update(m.left.to_le_bytes());
            h.update(m.right.to_le_bytes());
        }
        for s in &self.specials {
            h.update((s.len() as u32).to_le_bytes());
            h.update(s.as_bytes());
        }
        let mut out = [0u8; 32];
        out.copy_from_slice(&h.finalize());
        out
    }

    /// Encode text to token ids. Merges apply in rank order within each
    /// pretoken, leftmost occurrence first at equal rank. Total: unmatched
    /// bytes stay single-byte tokens. Never emits a special token.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        for piece in pretok::pretokenize(text) {
            self.encode_piece(piece.as_bytes(), &mut out);
        }
        out
    }

    fn encode_piece(&self, piece: &[u8], out: &mut Vec<TokenId>) {
        if piece.is_empty() {
            return;
        }
        if piece.len() == 1 {
            out.push(self.byte_id(piece[0]));
            return;
        }

        // doubly linked list over the current token sequence
        let n = piece.len();
        let mut ids: Vec<TokenId> = piece.iter().map(|&b| self.byte_id(b)).collect();
        let mut next: Vec<u32> = (1..=n as u32).collect();
        let mut prev: Vec<u32> = (0..n as u32).map(|i| i.wrapping_sub(1)).collect();
        const NONE: u32 = u32::MAX;
        next[n - 1] = NONE;
        prev[0] = NONE;

        // min-heap of (rank, position); stale entries skipped on pop
        let mut heap: BinaryHeap<Reverse<(u32, u32)>> = BinaryHeap::with_capacity(n);
        let mut rank_at: Vec<u32> = vec![u32::MAX; n];
        for i in 0..n - 1 {
            if let Some((rank, _)) = self.pair_rank(ids[i], ids[i + 1]) {
                rank_at[i] = rank;
                heap.push(Reverse((rank, i as u32)));
            }
        }

        while let Some(Reverse((rank, pos))) = heap.pop() {
            let i = pos as usize;
            if rank_at[i] != rank {
                continue; // stale
            }
            let j = next[i] as usize;
            let (_, produced) = self
                .pair_rank(ids[i], ids[j])
                .expect("rank_at valid implies pair exists");
            ids[i] = produced;
            // unlink j
            let jn = next[j];
            next[i] = jn;
            if jn != NONE {
                prev[jn as usize] = i as u32;
            }
            rank_at[j] = u32::MAX; // invalidate removed node
            rank_at[i] = match (jn != NONE).then(|| self.pair_rank(ids[i], ids[jn as usize])) {
                Some(Some((r, _))) => {
                    heap.push(Reverse((r, i as u32)));
                    r
                }
                _ => u32::MAX,
            };
            let p = prev[i];
            if p != NONE {
                let p = p as usize;
                rank_at[p] = match self.pair_rank(ids[p], ids[i]) {
                    Some((r, _)) => {
                        heap.push(Reverse((r, p as u32)));
                        r
                    }
                    None => u32::MAX,
                };
            }
        }

        let mut cur = 0u32;
        while cur != NONE {
            out.push(ids[cur as usize]);
            cur = next[cur as usize];
        }
    }

    /// Decode ids to text. Unknown ids and invalid UTF-8 are errors.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let bytes = self.decode_bytes(ids)?;
        String::from_utf8(bytes)
            .map_err(|e| Error::data(format!("decoded bytes are not valid UTF-8: {e}")))
    }

    /// Decode ids to text, replacing invalid sequences with U+FFFD.
    pub fn decode_lossy(&self, ids: &[TokenId]) -> Result<String> {
        let bytes = self.decode_bytes(ids)?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    /// Concatenated token bytes. Unknown id is a range error.
    pub fn decode_bytes(&self, ids: &[TokenId]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for (i, &id) in ids.iter().enumerate() {
            match self.bytes_of(id) {
                Some(b) => out.extend_from_slice(b),
                None => {
                    return Err(Error::data(format!(
                        "id {id} at position {i} is out of range (vocab size {})",
                        self.len()
                    )))
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab_with_merges(pairs: &[(TokenId, TokenId)], specials: &[&str]) -> Vocabulary {
        let mut tokens: Vec<Vec<u8>> = (0u16..256).map(|b| vec![b as u8]).collect();
        for &(l, r) in pairs {
            let mut b = tokens[l as usize].clone();
            b.extend_from_slice(&tokens[r as usize]);
            tokens.push(b);
        }
        for s in specials {
            tokens.push(s.as_bytes().to_vec());
        }
        Vocabulary::new(
            tokens,
            pairs.to_vec(),
            specials.iter().map(|s| s.to_string()).collect(),
            "gpt2".into(),
        )
        .unwrap()
    }

    #[test]
    fn base_vocab_shape() {
        let v = Vocabulary::base(vec!["<|endoftext|>".into()], "gpt2".into()).unwrap();
        assert_eq!(v.len(), 257);
        assert_eq!(v.first_special_id(), 256);
        assert_eq!(v.special_id("<|endoftext|>"), Some(256));
        assert!(v.is_special(256));
        assert!(!v.is_special(255));
    }

    #[test]
    fn rejects_merge_referencing_undefined_id() {
        let mut tokens: Vec<Vec<u8>> = (0u16..256).map(|b| vec![b as u8]).collect();
        tokens.push(vec![b'a', b'a']);
        let err = Vocabulary::new(tokens, vec![(300, 1)], vec![], "gpt2".into()).unwrap_err();
        assert!(matches!(err, Error::Parse(_)), "{err}");
        assert!(err.to_string().contains("300"));
    }

    #[test]
    fn rejects_bad_composite_bytes() {
        let mut tokens: Vec<Vec<u8>> = (0u16..256).map(|b| vec![b as u8]).collect();
        tokens.push(vec![b'x', b'y']); // claims to be a+a
        let err =
            Vocabulary::new(tokens, vec![(97, 97)], vec![], "gpt2".into()).unwrap_err();
        assert!(err.to_string().contains("merge 0"));
    }

    #[test]
    fn encode_applies_merges_in_rank_order_leftmost_first() {
        // single merge (a,a) -> "aa": "aaa" becomes ["aa", "a"]
        let v = vocab_with_merges(&[(97, 97)], &[]);
        let aa = v.id_of_bytes(b"aa").unwrap();
        assert_eq!(v.encode("aaa"), vec![aa, 97]);
        assert_eq!(v.encode("aaaa"), vec![aa, aa]);
        assert_eq!(v.encode(""), Vec::<TokenId>::new());
    }

    #[test]
    fn encode_rank_order_beats_position() {
        // merges: rank0 (b,c), rank1 (a,b). "abc" -> a + bc
        let v = vocab_with_merges(&[(98, 99), (97, 98)], &[]);
        let bc = v.id_of_bytes(b"bc").unwrap();
        assert_eq!(v.encode("abc"), vec![97, bc]);
    }

    #[test]
    fn decode_roundtrip_and_errors() {
        let v = vocab_with_merges(&[(97, 97)], &["<|endoftext|>"]);
        let s = "árvíztűrő tükörfúrógép";
        assert_eq!(v.decode(&v.encode(s)).unwrap(), s);
        assert_eq!(v.decode(&[]).unwrap(), "");
        assert_eq!(v.decode(&v.encode("szöveg")).unwrap(), "szöveg");

        let err = v.decode(&[9999]).unwrap_err();
        assert!(matches!(err, Error::Data(_)));

        // 0xC3 alone is invalid UTF-8; lossy mode substitutes
        assert!(v.decode(&[0xC3]).is_err());
        assert_eq!(v.decode_lossy(&[0xC3]).unwrap(), "\u{FFFD}");
        // 0xC3 0xA1 is "á"
        assert_eq!(v.decode(&[0xC3, 0xA1]).unwrap(), "á");
    }

    #[test]
    fn encode_never_emits_specials() {
        let v = vocab_with_merges(&[], &["<|endoftext|>"]);
        let ids = v.encode("<|endoftext|>");
        assert!(ids.iter().all(|&id| !v.is_special(id)));
        assert_eq!(v.decode(&ids).unwrap(), "<|endoftext|>");
    }

    #[test]
    fn content_hash_tracks_structure() {
        let a = vocab_with_merges(&[(97, 97)], &["<|endoftext|>"]);
        let b = vocab_with_merges(&[(97, 97)], &["<|endoftext|>"]);
        let c = vocab_with_merges(&[(98, 98)], &["<|endoftext|>"]);
        assert_eq!(a.content_hash(), b.content_hash());
        assert_ne!(a.content_hash(), c.content_hash());
    }
}
