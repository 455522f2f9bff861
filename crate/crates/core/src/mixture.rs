//! Weighted subset oversampling, language-stratified held-out splits and
//! corpus composition accounting.
//!
//! Oversampling emits each document floor(w) times plus one extra copy with
//! probability frac(w), decided by a per-document seeded hash, so the result
//! is a deterministic function of (seed, id) and independent of stream
//! order. Splits rank documents per language by a seeded hash of their id
//! and take the lowest; sizes follow largest-remainder proportional
//! allocation over per-language document counts.
//!
//! Splits are drawn before oversampling: held-out documents must be
//! independent; oversampled copies in a validation set would leak.

use crate::error::{Error, Result};
use crate::hashing::{keyed_hash, keyed_unit, round_half_away};
use crate::records::DocumentRecord;
use crate::vocab::Vocabulary;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureSpec {
    /// Subset name -> positive weight; unknown subsets default to 1.0.
    pub weights: BTreeMap<String, f64>,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        for (subset, &w) in &self.weights {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::config(format!(
                    "weight for subset {subset:?} must be positive, got {w}"
                )));
            }
        }
        Ok(())
    }

    pub fn weight(&self, subset: &str) -> f64 {
        self.weights.get(subset).copied().unwrap_or(1.0)
    }
}

/// Number of copies of `doc` to emit under `spec`.
pub fn copies_for(spec: &MixtureSpec, doc: &DocumentRecord) -> usize {
    let w = spec.weight(&doc.subset);
    let base = w.floor() as usize;
    let frac = w - w.floor();
    let extra = frac > 0.0 && keyed_unit(spec.seed, "oversample", &doc.id) < frac;
    base + extra as usize
}

/// Emit the oversampled copies of one document. Weight exactly 1.0 passes
/// the document through untouched; otherwise ids carry a `#i` copy suffix.
pub fn oversample_doc(spec: &MixtureSpec, doc: DocumentRecord) -> Vec<DocumentRecord> {
    if spec.weight(&doc.subset) == 1.0 {
        return vec![doc];
    }
    let copies = copies_for(spec, &doc);
    (0..copies)
        .map(|i| {
            let mut c = doc.clone();
            c.id = format!("{}#{i}", doc.id);
            c
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitSpec {
    pub valid_size: usize,
    pub test_size: usize,
    /// Field to stratify on; only "lang" is supported.
    #[serde(default = "default_stratify")]
    pub stratify_by: String,
    pub seed: u64,
}

fn default_stratify() -> String {
    "lang".to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Train,
    Valid,
    Test,
}

/// Precomputed id -> split assignment.
#[derive(Debug)]
pub struct SplitPlan {
    valid: rustc_hash::FxHashSet<String>,
    test: rustc_hash::FxHashSet<String>,
}

impl SplitPlan {
    /// Build from one pass over (id, lang) pairs.
    pub fn build<I>(docs: I, spec: &SplitSpec) -> Result<SplitPlan>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        if spec.stratify_by != "lang" {
            return Err(Error::config(format!(
                "unsupported stratify_by {:?}",
                spec.stratify_by
            )));
        }
        let mut per_lang: BTreeMap<String, Vec<(u64, String)>> = BTreeMap::new();
        for (id, lang) in docs {
            let h = keyed_hash(spec.seed, "split", &id);
            per_lang.entry(lang).or_default().push((h, id));
        }

        let counts: BTreeMap<String, u64> = per_lang
            .iter()
            .map(|(l, v)| (l.clone(), v.len() as u64))
            .collect();
        let valid_alloc = allocate_proportional(&counts, spec.valid_size);
        let test_alloc = allocate_proportional(&counts, spec.test_size);

        let mut valid = rustc_hash::FxHashSet::default();
        let mut test = rustc_hash::FxHashSet::default();
        for (lang, mut ranked) in per_lang {
            let v = valid_alloc.get(&lang).copied().unwrap_or(0);
            let t = test_alloc.get(&lang).copied().unwrap_or(0);
            if (ranked.len() as u64) < (v + t) as u64 {
                return Err(Error::data(format!(
                    "language {lang:?} has {} documents, needs {} for valid + test",
                    ranked.len(),
                    v + t
                )));
            }
            ranked.sort_unstable();
            for (_, id) in ranked.iter().take(v) {
                valid.insert(id.clone());
            }
            for (_, id) in ranked.iter().skip(v).take(t) {
                test.insert(id.clone());
            }
        }
        Ok(SplitPlan { valid, test })
    }

    pub fn route(&self, id: &str) -> Route {
        if self.valid.contains(id) {
            Route::Valid
        } else if self.test.contains(id) {
            Route::Test
        } else {
            Route::Train
        }
    }

    pub fn valid_len(&self) -> usize {
        self.valid.len()
    }

    pub fn test_len(&self) -> usize {
        self.test.len()
    }
}

/// Largest-remainder allocation of `take` slots proportional to counts.
/// Every share is within one of the exact proportional value; remainder
/// ties break by lexicographic key for determinism.
pub fn allocate_proportional(
    counts: &BTreeMap<String, u64>,
    take: usize,
) -> BTreeMap<String, usize> {
    let total: u64 = counts.values().sum();
    let mut alloc: BTreeMap<String, usize> = BTreeMap::new();
    if total == 0 || take == 0 {
        return counts.keys().map(|k| (k.clone(), 0)).collect();
    }
    let mut remainders: Vec<(f64, &String)> = Vec::new();
    let mut assigned = 0usize;
    for (lang, &c) in counts {
        let exact = take as f64 * c as f64 / total as f64;
        let floor = exact.floor() as usize;
        alloc.insert(lang.clone(), floor);
        assigned += floor;
        remainders.push((exact - floor as f64, lang));
    }
    remainders.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then_with(|| a.1.cmp(b.1))
    });
    for (_, lang) in remainders.into_iter().take(take - assigned) {
        *alloc.get_mut(lang).unwrap() += 1;
    }
    alloc
}

// --- composition report ----------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CompositionCell {
    pub lang: String,
    pub subset: String,
    pub docs: u64,
    pub tokens: u64,
    /// Percentage of the grand token total.
    pub pct: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CompositionReport {
    pub cells: Vec<CompositionCell>,
    pub total_docs: u64,
    pub total_tokens: u64,
    /// Which side of oversampling the counts were taken on.
    pub stage: String,
}

impl CompositionReport {
    pub fn from_counts<I>(counts: I, stage: &str) -> CompositionReport
    where
        I: IntoIterator<Item = ((String, String), (u64, u64))>,
    {
        let counts: BTreeMap<(String, String), (u64, u64)> = counts.into_iter().collect();
        let total_docs: u64 = counts.values().map(|(d, _)| d).sum();
        let total_tokens: u64 = counts.values().map(|(_, t)| t).sum();
        let cells = counts
            .into_iter()
            .map(|((lang, subset), (docs, tokens))| CompositionCell {
                lang,
                subset,
                docs,
                tokens,
                pct: percentage(tokens, total_tokens),
            })
            .collect();
        CompositionReport {
            cells,
            total_docs,
            total_tokens,
            stage: stage.to_string(),
        }
    }

    /// Aggregate rows of one language by summing subsets.
    pub fn lang_totals(&self) -> BTreeMap<String, (u64, u64, f64)> {
        let mut out: BTreeMap<String, (u64, u64, f64)> = BTreeMap::new();
        for c in &self.cells {
            let e = out.entry(c.lang.clone()).or_insert((0, 0, 0.0));
            e.0 += c.docs;
            e.1 += c.tokens;
        }
        for (_, e) in out.iter_mut() {
            e.2 = percentage(e.1, self.total_tokens);
        }
        out
    }

    /// Plain-text table, aligned, one row per (lang, subset) plus a total.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8} {:<14} {:>14} {:>16} {:>10}",
            "Language", "Subset", "Documents", "Tokens", "Ratio"
        );
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{:<8} {:<14} {:>14} {:>16} {:>9.3}%",
                c.lang,
                c.subset,
                c.docs,
                c.tokens,
                round_half_away(c.pct, 3)
            );
        }
        let _ = writeln!(
            s,
            "{:<8} {:<14} {:>14} {:>16} {:>9.3}%",
            "Total",
            "",
            self.total_docs,
            self.total_tokens,
            100.0
        );
        s
    }
}

/// Token percentage of the grand total.
pub fn percentage(tokens: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        tokens as f64 / total as f64 * 100.0
    }
}

/// Count documents and encoded tokens per (lang, subset).
pub fn compose_report<I>(docs: I, vocab: &Vocabulary, stage: &str) -> CompositionReport
where
    I: IntoIterator<Item = DocumentRecord>,
{
    let mut counts: BTreeMap<(String, String), (u64, u64)> = BTreeMap::new();
    for doc in docs {
        let tokens = vocab.encode(&doc.text).len() as u64;
        let e = counts
            .entry((doc.lang.clone(), doc.subset.clone()))
            .or_insert((0, 0));
        e.0 += 1;
        e.1 += tokens;
    }
    CompositionReport::from_counts(counts, stage)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, subset: &str) -> DocumentRecord {
        DocumentRecord::new(id, "szöveg itt", "hu", subset)
    }

    fn spec(pairs: &[(&str, f64)], seed: u64) -> MixtureSpec {
        MixtureSpec {
            weights: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            seed,
        }
    }

    #[test]
    fn integer_weight_is_exact() {
        let spec = spec(&[("news", 2.0)], 7);
        for i in 0..500 {
            let copies = oversample_doc(&spec, doc(&format!("d{i}"), "news"));
            assert_eq!(copies.len(), 2);
            assert_eq!(copies[0].id, format!("d{i}#0"));
            assert_eq!(copies[1].id, format!("d{i}#1"));
        }
    }

    #[test]
    fn weight_one_passes_through_unsuffixed() {
        let spec = spec(&[("wiki", 3.0)], 7);
        let out = oversample_doc(&spec, doc("plain", "news"));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, "plain");
    }

    #[test]
    fn fractional_weight_within_binomial_bound() {
        let spec = spec(&[("academic", 1.5)], 42);
        let total: usize = (0..10_000)
            .map(|i| oversample_doc(&spec, doc(&format!("d{i}"), "academic")).len())
            .sum();
        // 15000 ± 3σ, σ = sqrt(10000 * 0.25) = 50
        assert!((14_850..=15_150).contains(&total), "total {total}");
    }

    #[test]
    fn non_positive_weight_is_config_error() {
        assert!(spec(&[("news", 0.0)], 1).validate().is_err());
        assert!(spec(&[("news", -2.0)], 1).validate().is_err());
        assert!(spec(&[("news", 2.0)], 1).validate().is_ok());
    }

    #[test]
    fn proportional_allocation_examples() {
        // equal counts: valid 10000 over 4 languages -> 2500 each
        let counts: BTreeMap<String, u64> =
            [("code", 100), ("de", 100), ("en", 100), ("hu", 100)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect();
        let alloc = allocate_proportional(&counts, 10_000);
        assert!(alloc.values().all(|&v| v == 2500));

        // 44/24/21/11 document shares
        let counts: BTreeMap<String, u64> = [
            ("hu", 4400u64),
            ("en", 2400),
            ("de", 2100),
            ("code", 1100),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let alloc = allocate_proportional(&counts, 10_000);
        assert_eq!(alloc["hu"], 4400);
        assert_eq!(alloc["en"], 2400);
        assert_eq!(alloc["de"], 2100);
        assert_eq!(alloc["code"], 1100);
        assert_eq!(alloc.values().sum::<usize>(), 10_000);
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let docs: Vec<(String, String)> = (0..1000)
            .map(|i| {
                let lang = ["hu", "en", "de", "code"][i % 4];
                (format!("d{i}"), lang.to_string())
            })
            .collect();
        let spec = SplitSpec {
            valid_size: 100,
            test_size: 100,
            stratify_by: "lang".into(),
            seed: 5,
        };
        let plan = SplitPlan::build(docs.clone(), &spec).unwrap();
        assert_eq!(plan.valid_len(), 100);
        assert_eq!(plan.test_len(), 100);

        let mut trains = 0;
        let mut valids = 0;
        let mut tests = 0;
        for (id, _) in &docs {
            match plan.route(id) {
                Route::Train => trains += 1,
                Route::Valid => valids += 1,
                Route::Test => tests += 1,
            }
        }
        assert_eq!((trains, valids, tests), (800, 100, 100));

        // per-language share: 25 each
        for lang in ["hu", "en", "de", "code"] {
            let v = docs
                .iter()
                .filter(|(id, l)| l == lang && plan.route(id) == Route::Valid)
                .count();
            assert_eq!(v, 25);
        }

        // stable under re-runs
        let plan2 = SplitPlan::build(docs.clone(), &spec).unwrap();
        for (id, _) in &docs {
            assert_eq!(plan.route(id), plan2.route(id));
        }
    }

    #[test]
    fn split_zero_valid_size() {
        let docs: Vec<(String, String)> =
            (0..50).map(|i| (format!("d{i}"), "hu".to_string())).collect();
        let spec = SplitSpec {
            valid_size: 0,
            test_size: 10,
            stratify_by: "lang".into(),
            seed: 1,
        };
        let plan = SplitPlan::build(docs, &spec).unwrap();
        assert_eq!(plan.valid_len(), 0);
        assert_eq!(plan.test_len(), 10);
    }

    #[test]
    fn split_insufficient_language_names_it() {
        let docs = vec![
            ("a".to_string(), "hu".to_string()),
            ("b".to_string(), "rare".to_string()),
        ];
        let spec = SplitSpec {
            valid_size: 2,
            test_size: 1,
            stratify_by: "lang".into(),
            seed: 1,
        };
        let err = SplitPlan::build(docs, &spec).unwrap_err();
        assert!(err.to_string().contains("rare") || err.to_string().contains("hu"));
    }

    #[test]
    fn composition_percentages() {
        // Table-1 style: 70/38/34/18 billions -> 43.75/23.75/21.25/11.25
        let report = CompositionReport::from_counts(
            [
                (("hu".into(), "all".into()), (1, 70_000_000_000u64)),
                (("en".into(), "all".into()), (1, 38_000_000_000)),
                (("de".into(), "all".into()), (1, 34_000_000_000)),
                (("code".into(), "all".into()), (1, 18_000_000_000)),
            ],
            "post-mix",
        );
        let langs = report.lang_totals();
        assert_eq!(round_half_away(langs["hu"].2, 2), 43.75);
        assert_eq!(round_half_away(langs["en"].2, 2), 23.75);
        assert_eq!(round_half_away(langs["de"].2, 2), 21.25);
        assert_eq!(round_half_away(langs["code"].2, 2), 11.25);
        // paper rounding to integers
        assert_eq!(round_half_away(langs["hu"].2, 0), 44.0);
        assert_eq!(round_half_away(langs["en"].2, 0), 24.0);
        assert_eq!(round_half_away(langs["de"].2, 0), 21.0);
        assert_eq!(round_half_away(langs["code"].2, 0), 11.0);
    }

    #[test]
    fn single_document_is_its_whole_cell() {
        let v = Vocabulary::base(vec![], "gpt2".into()).unwrap();
        let report = compose_report(
            [DocumentRecord::new("only", "egy dokumentum", "hu", "news")],
            &v,
            "pre-mix",
        );
        assert_eq!(report.cells.len(), 1);
        assert_eq!(report.cells[0].pct, 100.0);
    }
}
