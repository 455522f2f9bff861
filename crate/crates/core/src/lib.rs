//! Byte-level BPE vocabulary adaptation and multilingual pretraining data
//! preparation.
//!
//! The crate covers the full data path for adapting an existing byte-level
//! BPE tokenizer to a new target language and preparing the corpus that the
//! adapted model trains on:
//!
//! - **`vocab` / `train`** — byte-level BPE training, encoding and decoding
//!   with an explicit, inspectable merge order
//! - **`extend`** — vocabulary extension: splice freshly trained
//!   target-language tokens into the original vocabulary, with optional
//!   removal of non-Latin multi-character tokens
//! - **`embed`** — embedding-row initialization for new tokens (mean of the
//!   constituent-subword embeddings under the original tokenizer)
//! - **`filter`** — length filtering, exact document dedup, paragraph-level
//!   13-gram dedup and frequent-paragraph removal
//! - **`mixture`** — weighted subset oversampling, language-stratified
//!   held-out splits and corpus composition reporting
//! - **`packer`** — linear-time next-fit packing of tokenized documents into
//!   fixed-size training windows
//! - **`fertility`** — tokens-per-word fertility evaluation and comparison
//!   tables
//! - **`pipeline`** — a declarative recipe runner with resumable stages
//!
//! All document streams are JSONL, one [`records::DocumentRecord`] per line.
//! Everything is deterministic given explicit seeds; no operation reads the
//! network or the clock.

pub mod embed;
pub mod error;
pub mod extend;
pub mod fertility;
pub mod filter;
pub mod hashing;
pub mod mixture;
pub mod packer;
pub mod pipeline;
pub mod pretok;
pub mod records;
pub mod train;
pub mod vocab;
pub mod vocab_io;

pub use error::{Error, Result};
pub use vocab::{MergeRule, Token, TokenId, Vocabulary};
