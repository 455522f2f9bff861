//! Vocabulary file formats.
//!
//! Native format is UTF-8 JSON:
//!
//! ```json
//! {"version":1,"pretokenizer":"gpt2","specials":["<|endoftext|>"],
//!  "tokens":["IQ==","Ig==",...],"merges":[[97,97],...]}
//! ```
//!
//! Token byte strings are base64 because merged byte sequences need not be
//! valid UTF-8. Saving is canonical (compact JSON, fixed field order,
//! trailing newline), so identical vocabularies produce byte-identical
//! files.
//!
//! [`load_vocab`] also accepts the two published upstream layouts and
//! converts them on the fly: a HuggingFace `tokenizer.json` with a BPE
//! model block, and a GPT-2-style `vocab.json` (with a sibling
//! `merges.txt`). Both store bytes via the GPT-2 byte-to-unicode table,
//! which is inverted here.

use crate::error::{Error, Result};
use crate::pretok::PRETOKENIZER_ID;
use crate::vocab::{TokenId, Vocabulary, BASE_TOKENS};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    pretokenizer: String,
    specials: Vec<String>,
    tokens: Vec<String>,
    merges: Vec<(TokenId, TokenId)>,
}

/// Canonical file bytes for a vocabulary.
pub fn to_canonical_bytes(vocab: &Vocabulary) -> Vec<u8> {
    let file = VocabFile {
        version: 1,
        pretokenizer: vocab.pretokenizer().to_string(),
        specials: vocab.specials().to_vec(),
        tokens: (0..vocab.len() as TokenId)
            .map(|id| B64.encode(vocab.bytes_of(id).unwrap()))
            .collect(),
        merges: vocab.merges().iter().map(|m| (m.left, m.right)).collect(),
    };
    let mut bytes = serde_json::to_vec(&file).expect("vocab serialization");
    bytes.push(b'\n');
    bytes
}

pub fn save_vocab(vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path.as_ref(), to_canonical_bytes(vocab))?;
    Ok(())
}

/// Load a vocabulary, auto-detecting the file layout.
pub fn load_vocab(path: impl AsRef<Path>) -> Result<Vocabulary> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path)
        .map_err(|e| Error::parse(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&raw)
        .map_err(|e| Error::parse(format!("{}: invalid JSON: {e}", path.display())))?;

    if value.get("version").is_some() && value.get("tokens").is_some() {
        return from_native(value);
    }
    if value
        .get("model")
        .and_then(|m| m.get("type"))
        .and_then(|t| t.as_str())
        == Some("BPE")
    {
        return from_hf_tokenizer(value);
    }
    if value.is_object()
        && value
            .as_object()
            .map(|o| !o.is_empty() && o.values().all(|v| v.is_u64()))
            .unwrap_or(false)
    {
        // GPT-2 style vocab.json; merge list lives in a sibling merges.txt
        let merges_path = path.with_file_name("merges.txt");
        let merges_raw = fs::read_to_string(&merges_path).map_err(|e| {
            Error::parse(format!(
                "{}: vocab.json needs sibling merges.txt: {e}",
                merges_path.display()
            ))
        })?;
        return from_gpt2_files(value, &merges_raw);
    }
    Err(Error::parse(format!(
        "{}: unrecognized vocabulary file layout",
        path.display()
    )))
}

fn from_native(value: serde_json::Value) -> Result<Vocabulary> {
    let file: VocabFile = serde_json::from_value(value)
        .map_err(|e| Error::parse(format!("vocab file: {e}")))?;
    if file.version != 1 {
        return Err(Error::parse(format!(
            "unsupported vocab file version {}",
            file.version
        )));
    }
    let mut tokens = Vec::with_capacity(file.tokens.len());
    for (i, t) in file.tokens.iter().enumerate() {
        let bytes = B64
            .decode(t)
            .map_err(|e| Error::parse(format!("token {i}: bad base64: {e}")))?;
        if bytes.is_empty() {
            return Err(Error::parse(format!("token {i}: empty byte string")));
        }
        tokens.push(bytes);
    }
    Vocabulary::new(tokens, file.merges, file.specials, file.pretokenizer)
}

// --- GPT-2 byte <-> unicode mapping ---------------------------------------

/// The 188 bytes that map to their own codepoint; the rest are remapped to
/// U+0100 + offset so every byte has a printable stand-in.
fn is_direct_byte(b: u8) -> bool {
    matches!(b, 0x21..=0x7E | 0xA1..=0xAC | 0xAE..=0xFF)
}

fn byte_to_unicode_table() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut n = 0u32;
    for b in 0..256usize {
        table[b] = if is_direct_byte(b as u8) {
            char::from_u32(b as u32).unwrap()
        } else {
            let c = char::from_u32(0x100 + n).unwrap();
            n += 1;
            c
        };
    }
    table
}

fn unicode_token_to_bytes(token: &str, inverse: &FxHashMap<char, u8>) -> Result<Vec<u8>> {
    token
        .chars()
        .map(|c| {
            inverse.get(&c).copied().ok_or_else(|| {
                Error::parse(format!("token {token:?}: char {c:?} outside byte alphabet"))
            })
        })
        .collect()
}

fn inverse_table() -> FxHashMap<char, u8> {
    byte_to_unicode_table()
        .iter()
        .enumerate()
        .map(|(b, &c)| (c, b as u8))
        .collect()
}

fn from_hf_tokenizer(value: serde_json::Value) -> Result<Vocabulary> {
    let model = &value["model"];
    let vocab_obj = model["vocab"]
        .as_object()
        .ok_or_else(|| Error::parse("tokenizer.json: model.vocab is not an object"))?;
    let merges_val = model["merges"]
        .as_array()
        .ok_or_else(|| Error::parse("tokenizer.json: model.merges is not an array"))?;

    let mut merge_pairs = Vec::with_capacity(merges_val.len());
    for (i, m) in merges_val.iter().enumerate() {
        let (a, b) = match m {
            serde_json::Value::String(s) => {
                let mut it = s.splitn(2, ' ');
                match (it.next(), it.next()) {
                    (Some(a), Some(b)) => (a.to_string(), b.to_string()),
                    _ => return Err(Error::parse(format!("merge {i}: expected \"A B\""))),
                }
            }
            serde_json::Value::Array(pair) if pair.len() == 2 => {
                match (pair[0].as_str(), pair[1].as_str()) {
                    (Some(a), Some(b)) => (a.to_string(), b.to_string()),
                    _ => return Err(Error::parse(format!("merge {i}: expected [A, B]"))),
                }
            }
            _ => return Err(Error::parse(format!("merge {i}: unsupported merge entry"))),
        };
        merge_pairs.push((a, b));
    }

    let mut specials: Vec<(u64, String)> = Vec::new();
    if let Some(added) = value.get("added_tokens").and_then(|a| a.as_array()) {
        for t in added {
            let id = t["id"]
                .as_u64()
                .ok_or_else(|| Error::parse("added token without id"))?;
            let content = t["content"]
                .as_str()
                .ok_or_else(|| Error::parse("added token without content"))?;
            if vocab_obj.contains_key(content) {
                continue; // listed in both places; the vocab entry wins
            }
            specials.push((id, content.to_string()));
        }
    }
    specials.sort_by_key(|(id, _)| *id);

    build_from_unicode_vocab(vocab_obj, &merge_pairs, specials)
}

fn from_gpt2_files(vocab_value: serde_json::Value, merges_raw: &str) -> Result<Vocabulary> {
    let vocab_obj = vocab_value
        .as_object()
        .ok_or_else(|| Error::parse("vocab.json is not an object"))?;
    let mut merge_pairs = Vec::new();
    for (lineno, line) in merges_raw.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with("#version") {
            continue;
        }
        let mut it = line.splitn(2, ' ');
        match (it.next(), it.next()) {
            (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => {
                merge_pairs.push((a.to_string(), b.to_string()))
            }
            _ => {
                return Err(Error::parse(format!(
                    "merges.txt line {}: expected \"A B\"",
                    lineno + 1
                )))
            }
        }
    }
    build_from_unicode_vocab(vocab_obj, &merge_pairs, Vec::new())
}

fn build_from_unicode_vocab(
    vocab_obj: &serde_json::Map<String, serde_json::Value>,
    merge_pairs: &[(String, String)],
    added: Vec<(u64, String)>,
) -> Result<Vocabulary> {
    let inverse = inverse_table();
    let n_vocab = vocab_obj.len();
    let n_regular = BASE_TOKENS + merge_pairs.len();
    if n_vocab < n_regular {
        return Err(Error::parse(format!(
            "vocab has {n_vocab} entries but 256 + {} merges = {n_regular} are required",
            merge_pairs.len()
        )));
    }

    // id-ordered raw token strings
    let mut raw: Vec<Option<&str>> = vec![None; n_vocab];
    for (tok, id) in vocab_obj {
        let id = id
            .as_u64()
            .ok_or_else(|| Error::parse(format!("token {tok:?}: non-integer id")))?;
        if id as usize >= n_vocab {
            return Err(Error::parse(format!(
                "token {tok:?}: id {id} not contiguous (vocab has {n_vocab} entries)"
            )));
        }
        if raw[id as usize].replace(tok).is_some() {
            return Err(Error::parse(format!("duplicate id {id}")));
        }
    }

    // ids [0, 256 + merges) are byte-mapped regular tokens; anything after
    // cannot be a merge product, so it is a special carried in the vocab
    // (GPT-2 keeps <|endoftext|> there)
    let mut tokens: Vec<Vec<u8>> = Vec::with_capacity(n_vocab + added.len());
    let mut specials: Vec<String> = Vec::new();
    let mut bytes_to_id: FxHashMap<Vec<u8>, TokenId> = FxHashMap::default();
    for (id, slot) in raw.iter().enumerate() {
        let tok = slot.ok_or_else(|| Error::parse(format!("missing id {id}")))?;
        if id < n_regular {
            let bytes = unicode_token_to_bytes(tok, &inverse)
                .map_err(|e| Error::parse(format!("id {id}: {e}")))?;
            bytes_to_id.insert(bytes.clone(), id as TokenId);
            tokens.push(bytes);
        } else {
            specials.push(tok.to_string());
            tokens.push(tok.as_bytes().to_vec());
        }
    }

    // added_tokens continue the id space after the vocab
    let mut added: Vec<(u64, String)> = added
        .into_iter()
        .filter(|(_, s)| !specials.contains(s))
        .collect();
    added.sort_by_key(|(id, _)| *id);
    for (i, (id, s)) in added.iter().enumerate() {
        if *id as usize != n_vocab + i {
            return Err(Error::parse(format!(
                "added token {s:?} has id {id}, expected {}",
                n_vocab + i
            )));
        }
        specials.push(s.clone());
        tokens.push(s.as_bytes().to_vec());
    }

    let mut id_pairs = Vec::with_capacity(merge_pairs.len());
    for (i, (a, b)) in merge_pairs.iter().enumerate() {
        let a_bytes = unicode_token_to_bytes(a, &inverse)
            .map_err(|e| Error::parse(format!("merge {i}: {e}")))?;
        let b_bytes = unicode_token_to_bytes(b, &inverse)
            .map_err(|e| Error::parse(format!("merge {i}: {e}")))?;
        let left = *bytes_to_id
            .get(a_bytes.as_slice())
            .ok_or_else(|| Error::parse(format!("merge {i}: left {a:?} not in vocab")))?;
        let right = *bytes_to_id
            .get(b_bytes.as_slice())
            .ok_or_else(|| Error::parse(format!("merge {i}: right {b:?} not in vocab")))?;
        let mut merged = a_bytes;
        merged.extend_from_slice(&b_bytes);
        let produced = *bytes_to_id.get(merged.as_slice()).ok_or_else(|| {
            Error::parse(format!("merge {i}: product of {a:?}+{b:?} not in vocab"))
        })?;
        if produced as usize != BASE_TOKENS + i {
            return Err(Error::parse(format!(
                "merge {i}: product has id {produced}, expected {}",
                BASE_TOKENS + i
            )));
        }
        id_pairs.push((left, right));
    }

    Vocabulary::new(tokens, id_pairs, specials, PRETOKENIZER_ID.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{train, TrainerConfig};

    fn trained() -> Vocabulary {
        train(
            ["alma a fa alatt", "alma alma piros alma"],
            &TrainerConfig {
                target_size: 270,
                min_frequency: 2,
                specials: vec!["<|endoftext|>".into()],
            },
        )
        .unwrap()
        .vocab
    }

    #[test]
    fn save_load_roundtrip_is_identity() {
        let v = trained();
        let dir = std::env::temp_dir().join("tokmix-vocabio-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("v.json");
        save_vocab(&v, &path).unwrap();
        let loaded = load_vocab(&path).unwrap();
        assert_eq!(loaded, v);
        // load∘save is byte-exact on canonical files
        let again = dir.join("v2.json");
        save_vocab(&loaded, &again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn malformed_merge_is_named() {
        let json = r#"{"version":1,"pretokenizer":"gpt2","specials":[],
            "tokens":[],"merges":[[300,1]]}"#;
        let err = from_native(serde_json::from_str(json).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }

    #[test]
    fn hf_layout_converts() {
        // tiny synthetic tokenizer.json-style value: bytes a..z + one merge
        let table = byte_to_unicode_table();
        let mut vocab = serde_json::Map::new();
        for b in 0..256usize {
            vocab.insert(table[b].to_string(), serde_json::json!(b));
        }
        let a = table[b'a' as usize].to_string();
        vocab.insert(format!("{a}{a}"), serde_json::json!(256));
        let value = serde_json::json!({
            "model": {"type": "BPE", "vocab": vocab, "merges": [format!("{a} {a}")]},
            "added_tokens": [{"id": 257, "content": "<|endoftext|>"}]
        });
        let v = from_hf_tokenizer(value).unwrap();
        assert_eq!(v.len(), 258);
        assert_eq!(v.merges().len(), 1);
        assert_eq!(v.specials(), ["<|endoftext|>"]);
        assert_eq!(v.bytes_of(256).unwrap(), b"aa");
        assert_eq!(v.id_of_bytes(b"a"), Some(b'a' as u32));
    }

    #[test]
    fn gpt2_unicode_table_is_bijective() {
        let table = byte_to_unicode_table();
        let inverse = inverse_table();
        assert_eq!(inverse.len(), 256);
        for b in 0..256usize {
            assert_eq!(inverse[&table[b]], b as u8);
        }
        // spot values from the published mapping
        assert_eq!(table[b'!' as usize], '!');
        assert_eq!(table[b' ' as usize], '\u{120}'); // Ġ
        assert_eq!(table[b'\n' as usize], '\u{10a}'); // Ċ
    }
}
