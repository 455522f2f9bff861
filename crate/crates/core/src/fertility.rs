//! Subword fertility: tokens per whitespace-delimited word.
//!
//! The corpus-level ratio (total tokens / total words) is the default; a
//! macro average over documents is available behind a flag. No delimiter or
//! other special tokens are counted: fertility measures text
//! representation, not framing. With the gpt2 pretokenizer no merge crosses
//! a whitespace boundary, so fertility never falls below 1.0.

use crate::error::{Error, Result};
use crate::hashing::round_half_away;
use crate::pretok::word_count;
use crate::vocab::Vocabulary;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Corpus-level fertility over a document stream.
pub fn fertility<I, S>(vocab: &Vocabulary, docs: I) -> Result<f64>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut tokens = 0u64;
    let mut words = 0u64;
    for doc in docs {
        let text = doc.as_ref();
        tokens += vocab.encode(text).len() as u64;
        words += word_count(text);
    }
    if words == 0 {
        return Err(Error::data("fertility needs at least one word"));
    }
    Ok(tokens as f64 / words as f64)
}

/// Macro-averaged fertility: mean of per-document ratios. Documents without
/// words are skipped.
pub fn fertility_macro<I, S>(vocab: &Vocabulary, docs: I) -> Result<f64>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut sum = 0f64;
    let mut n = 0u64;
    for doc in docs {
        let text = doc.as_ref();
        let words = word_count(text);
        if words == 0 {
            continue;
        }
        sum += vocab.encode(text).len() as f64 / words as f64;
        n += 1;
    }
    if n == 0 {
        return Err(Error::data("fertility needs at least one word"));
    }
    Ok(sum / n as f64)
}

/// Relative change in percent, (new - old) / old * 100.
pub fn change_percent(old: f64, new: f64) -> f64 {
    (new - old) / old * 100.0
}

/// The display form: rounded half away from zero to two decimals.
pub fn rounded_change_percent(old: f64, new: f64) -> f64 {
    round_half_away(change_percent(old, new), 2)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FertilityRow {
    pub lang: String,
    pub base: f64,
    pub adapted: f64,
    /// Raw relative change in percent.
    pub change_pct: f64,
    /// Display rounding of `change_pct` (half away from zero, 2 decimals).
    pub change_pct_display: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FertilityReport {
    pub base_name: String,
    pub adapted_name: String,
    pub rows: Vec<FertilityRow>,
}

impl FertilityReport {
    /// Build from measured or given per-language fertility values.
    pub fn from_values<I>(base_name: &str, adapted_name: &str, values: I) -> FertilityReport
    where
        I: IntoIterator<Item = (String, f64, f64)>,
    {
        let rows = values
            .into_iter()
            .map(|(lang, base, adapted)| FertilityRow {
                lang,
                base,
                adapted,
                change_pct: change_percent(base, adapted),
                change_pct_display: rounded_change_percent(base, adapted),
            })
            .collect();
        FertilityReport {
            base_name: base_name.to_string(),
            adapted_name: adapted_name.to_string(),
            rows,
        }
    }

    /// Aligned text table: Language, base, adapted, Change (%).
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:>12} {:>12} {:>12}",
            "Language", self.base_name, self.adapted_name, "Change (%)"
        );
        for row in &self.rows {
            let _ = writeln!(
                s,
                "{:<12} {:>12.4} {:>12.4} {:>12.2}",
                row.lang,
                round_half_away(row.base, 4),
                round_half_away(row.adapted, 4),
                row.change_pct_display
            );
        }
        s
    }
}

/// Measure fertility of two tokenizers per language and report the change.
pub fn compare(
    base: &Vocabulary,
    base_name: &str,
    adapted: &Vocabulary,
    adapted_name: &str,
    docs_by_lang: &BTreeMap<String, Vec<String>>,
    macro_average: bool,
) -> Result<FertilityReport> {
    let mut values = Vec::new();
    for (lang, docs) in docs_by_lang {
        let (b, a) = if macro_average {
            (
                fertility_macro(base, docs.iter())?,
                fertility_macro(adapted, docs.iter())?,
            )
        } else {
            (fertility(base, docs.iter())?, fertility(adapted, docs.iter())?)
        };
        values.push((lang.clone(), b, a));
    }
    Ok(FertilityReport::from_values(base_name, adapted_name, values))
}
