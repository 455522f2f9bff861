//! Declarative end-to-end recipe: filter -> dedup -> split -> oversample ->
//! extend -> vipi -> pack -> fertility, with content-hashed, resumable stage
//! outputs.
//!
//! Splits are drawn from deduplicated, pre-oversampling data so held-out
//! documents stay independent, and oversampled copies are never re-deduped.
//! Every stage writes its outputs under `<root>/stages/` and records an
//! input fingerprint (parameters plus upstream content hashes) in
//! `<root>/manifest.json`. Re-running skips stages whose fingerprint and
//! outputs are unchanged; outputs edited behind the manifest's back refuse
//! to be overwritten without `--force`. No stage reads the clock, so two
//! runs from identical inputs produce byte-identical outputs and manifests.

use crate::embed::{vipi_init, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::extend::{extend, ExtensionSpec};
use crate::fertility::compare;
use crate::filter::{DedupState, LengthFilter};
use crate::hashing::to_hex;
use crate::mixture::{compose_report, oversample_doc, MixtureSpec, Route, SplitPlan, SplitSpec};
use crate::packer::{LongDocPolicy, Packer, PackerConfig, ShardWriter, SidecarLine};
use crate::records::{write_record, JsonlReader};
use crate::vocab_io::{load_vocab, save_vocab};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const WORKSPACE_ENV: &str = "TKMX_WORKSPACE";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecipeConfig {
    pub inputs: RecipeInputs,
    #[serde(default)]
    pub filter: FilterParams,
    #[serde(default)]
    pub dedup: DedupParams,
    pub split: SplitSpec,
    pub mixture: MixtureSpec,
    pub extend: ExtendParams,
    #[serde(default)]
    pub pack: PackParams,
    #[serde(default)]
    pub fertility: FertilityParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecipeInputs {
    pub corpus: PathBuf,
    pub base_vocab: PathBuf,
    pub base_embeddings: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterParams {
    pub min_chars: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams { min_chars: 500 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DedupParams {
    /// 0 disables the frequent-paragraph pass.
    pub frequent_threshold: u64,
}

impl Default for DedupParams {
    fn default() -> Self {
        DedupParams {
            frequent_threshold: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtendParams {
    pub n: usize,
    #[serde(default = "default_true")]
    pub latin_filter: bool,
    #[serde(default = "default_min_frequency")]
    pub min_frequency: u64,
    /// Train the target tokenizer only on this language's train documents;
    /// absent means the whole train split.
    #[serde(default)]
    pub corpus_lang: Option<String>,
}

fn default_true() -> bool {
    true
}

fn default_min_frequency() -> u64 {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PackParams {
    pub window: usize,
    pub delimiter: String,
    pub long_doc: LongDocPolicy,
}

impl Default for PackParams {
    fn default() -> Self {
        PackParams {
            window: 4096,
            delimiter: "<|endoftext|>".to_string(),
            long_doc: LongDocPolicy::Split,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FertilityParams {
    #[serde(default)]
    pub macro_average: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub inputs_hash: String,
    pub outputs: Vec<OutputRecord>,
    pub stats: serde_json::Value,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
    pub manifest_path: String,
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RecipeConfig> {
    let raw = fs::read_to_string(path.as_ref())
        .map_err(|e| Error::config(format!("{}: {e}", path.as_ref().display())))?;
    let cfg: RecipeConfig = serde_json::from_str(&raw)
        .map_err(|e| Error::config(format!("{}: {e}", path.as_ref().display())))?;
    cfg.mixture.validate()?;
    Ok(cfg)
}

fn hash_file(path: &Path) -> Result<String> {
    let mut f = File::open(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(to_hex(&h.finalize()))
}

fn fingerprint(name: &str, params: &impl Serialize, upstream: &[(&str, &str)]) -> String {
    let mut h = Sha256::new();
    h.update(name.as_bytes());
    h.update(serde_json::to_vec(params).expect("params serialize"));
    for (label, hash) in upstream {
        h.update(label.as_bytes());
        h.update(hash.as_bytes());
    }
    to_hex(&h.finalize())
}

struct Runner {
    root: PathBuf,
    previous: Manifest,
    manifest: Manifest,
    force: bool,
    executed: Vec<String>,
    skipped: Vec<String>,
}

impl Runner {
    fn stage_dir(&self) -> PathBuf {
        self.root.join("stages")
    }

    fn out_hash(&self, name: &str, path_label: usize) -> &str {
        &self
            .manifest
            .stages
            .iter()
            .find(|s| s.name == name)
            .unwrap_or_else(|| panic!("stage {name} not yet recorded"))
            .outputs[path_label]
            .sha256
    }

    /// Skip when fingerprint and outputs match the previous run; error when
    /// outputs were edited out from under the manifest.
    fn reusable(&self, name: &str, inputs_hash: &str, outputs: &[PathBuf]) -> Result<bool> {
        if self.force {
            return Ok(false);
        }
        let Some(prev) = self.previous.stages.iter().find(|s| s.name == name) else {
            return Ok(false);
        };
        if prev.inputs_hash != inputs_hash || prev.outputs.len() != outputs.len() {
            return Ok(false);
        }
        for (rec, path) in prev.outputs.iter().zip(outputs) {
            if !path.exists() {
                return Ok(false);
            }
            if hash_file(path)? != rec.sha256 {
                return Err(Error::data(format!(
                    "stage {name}: output {} changed since the recorded run; \
                     pass --force to overwrite",
                    path.display()
                )));
            }
        }
        Ok(true)
    }

    fn record(
        &mut self,
        name: &str,
        inputs_hash: String,
        outputs: &[PathBuf],
        stats: serde_json::Value,
        reused: bool,
    ) -> Result<()> {
        let mut recs = Vec::with_capacity(outputs.len());
        for path in outputs {
            recs.push(OutputRecord {
                path: path
                    .strip_prefix(&self.root)
                    .unwrap_or(path)
                    .to_string_lossy()
                    .into_owned(),
                sha256: hash_file(path)?,
            });
        }
        self.manifest.stages.push(StageRecord {
            name: name.to_string(),
            inputs_hash,
            outputs: recs,
            stats,
        });
        if reused {
            self.skipped.push(name.to_string());
        } else {
            self.executed.push(name.to_string());
        }
        Ok(())
    }
}

fn open_jsonl(path: &Path) -> Result<JsonlReader<BufReader<File>>> {
    Ok(JsonlReader::new(BufReader::new(File::open(path).map_err(
        |e| Error::data(format!("{}: {e}", path.display())),
    )?)))
}

/// Execute the recipe. Stage outputs land under `<root>/stages/`, the
/// manifest at `<root>/manifest.json`.
pub fn run(cfg: &RecipeConfig, root: &Path, force: bool) -> Result<RunSummary> {
    fs::create_dir_all(root.join("stages"))?;
    let manifest_path = root.join("manifest.json");
    let previous: Manifest = if manifest_path.exists() {
        serde_json::from_str(&fs::read_to_string(&manifest_path)?)
            .map_err(|e| Error::parse(format!("manifest.json: {e}")))?
    } else {
        Manifest::default()
    };

    let mut r = Runner {
        root: root.to_path_buf(),
        previous,
        manifest: Manifest::default(),
        force,
        executed: Vec::new(),
        skipped: Vec::new(),
    };

    let corpus_path = root.join(&cfg.inputs.corpus);
    let base_vocab_path = root.join(&cfg.inputs.base_vocab);
    let base_emb_path = root.join(&cfg.inputs.base_embeddings);
    let corpus_hash = hash_file(&corpus_path)?;
    let base_vocab_hash = hash_file(&base_vocab_path)?;
    let base_emb_hash = hash_file(&base_emb_path)?;

    // 1. filter
    let filter_out = r.stage_dir().join("01_filter.jsonl");
    {
        let fp = fingerprint("filter", &cfg.filter, &[("corpus", &corpus_hash)]);
        if r.reusable("filter", &fp, std::slice::from_ref(&filter_out))? {
            let stats = stage_stats(&r.previous, "filter");
            r.record("filter", fp, &[filter_out.clone()], stats, true)?;
        } else {
            let mut stage = LengthFilter::new(cfg.filter.min_chars);
            let mut w = BufWriter::new(File::create(&filter_out)?);
            for doc in open_jsonl(&corpus_path)? {
                if let Some(doc) = stage.process(doc?) {
                    write_record(&mut w, &doc)?;
                }
            }
            w.flush()?;
            let stats = serde_json::to_value(&stage.stats).unwrap();
            r.record("filter", fp, &[filter_out.clone()], stats, false)?;
        }
    }

    // 2. dedup
    let dedup_out = r.stage_dir().join("02_dedup.jsonl");
    {
        let upstream = r.out_hash("filter", 0).to_string();
        let fp = fingerprint("dedup", &cfg.dedup, &[("filter", &upstream)]);
        if r.reusable("dedup", &fp, std::slice::from_ref(&dedup_out))? {
            let stats = stage_stats(&r.previous, "dedup");
            r.record("dedup", fp, &[dedup_out.clone()], stats, true)?;
        } else {
            let mut state = DedupState::new(cfg.dedup.frequent_threshold);
            if state.needs_observe_pass() {
                for doc in open_jsonl(&filter_out)? {
                    state.observe(&doc?);
                }
            }
            let mut w = BufWriter::new(File::create(&dedup_out)?);
            for doc in open_jsonl(&filter_out)? {
                if let Some(doc) = state.process(doc?) {
                    write_record(&mut w, &doc)?;
                }
            }
            w.flush()?;
            let stats = serde_json::to_value(&state.stats).unwrap();
            r.record("dedup", fp, &[dedup_out.clone()], stats, false)?;
        }
    }

    // 3. split
    let train_out = r.stage_dir().join("03_train.jsonl");
    let valid_out = r.stage_dir().join("03_valid.jsonl");
    let test_out = r.stage_dir().join("03_test.jsonl");
    {
        let upstream = r.out_hash("dedup", 0).to_string();
        let fp = fingerprint("split", &cfg.split, &[("dedup", &upstream)]);
        let outs = vec![train_out.clone(), valid_out.clone(), test_out.clone()];
        if r.reusable("split", &fp, &outs)? {
            let stats = stage_stats(&r.previous, "split");
            r.record("split", fp, &outs, stats, true)?;
        } else {
            let ids = open_jsonl(&dedup_out)?
                .map(|d| d.map(|d| (d.id, d.lang)))
                .collect::<Result<Vec<_>>>()?;
            let plan = SplitPlan::build(ids, &cfg.split)?;
            let mut train_w = BufWriter::new(File::create(&train_out)?);
            let mut valid_w = BufWriter::new(File::create(&valid_out)?);
            let mut test_w = BufWriter::new(File::create(&test_out)?);
            let (mut n_train, mut n_valid, mut n_test) = (0u64, 0u64, 0u64);
            for doc in open_jsonl(&dedup_out)? {
                let doc = doc?;
                match plan.route(&doc.id) {
                    Route::Train => {
                        n_train += 1;
                        write_record(&mut train_w, &doc)?
                    }
                    Route::Valid => {
                        n_valid += 1;
                        write_record(&mut valid_w, &doc)?
                    }
                    Route::Test => {
                        n_test += 1;
                        write_record(&mut test_w, &doc)?
                    }
                }
            }
            train_w.flush()?;
            valid_w.flush()?;
            test_w.flush()?;
            let stats = serde_json::json!({
                "train": n_train, "valid": n_valid, "test": n_test
            });
            r.record("split", fp, &outs, stats, false)?;
        }
    }

    // 4. oversample
    let mixed_out = r.stage_dir().join("04_mixed.jsonl");
    {
        let upstream = r.out_hash("split", 0).to_string();
        let fp = fingerprint("oversample", &cfg.mixture, &[("train", &upstream)]);
        if r.reusable("oversample", &fp, std::slice::from_ref(&mixed_out))? {
            let stats = stage_stats(&r.previous, "oversample");
            r.record("oversample", fp, &[mixed_out.clone()], stats, true)?;
        } else {
            let mut w = BufWriter::new(File::create(&mixed_out)?);
            let (mut n_in, mut n_out) = (0u64, 0u64);
            for doc in open_jsonl(&train_out)? {
                n_in += 1;
                for copy in oversample_doc(&cfg.mixture, doc?) {
                    n_out += 1;
                    write_record(&mut w, &copy)?;
                }
            }
            w.flush()?;
            let stats = serde_json::json!({"in_docs": n_in, "out_docs": n_out});
            r.record("oversample", fp, &[mixed_out.clone()], stats, false)?;
        }
    }

    // 5. extend
    let ext_vocab_out = r.stage_dir().join("05_extended_vocab.json");
    let ext_report_out = r.stage_dir().join("05_extension_report.json");
    {
        let upstream = r.out_hash("split", 0).to_string();
        let fp = fingerprint(
            "extend",
            &cfg.extend,
            &[("train", &upstream), ("base_vocab", &base_vocab_hash)],
        );
        let outs = vec![ext_vocab_out.clone(), ext_report_out.clone()];
        if r.reusable("extend", &fp, &outs)? {
            let stats = stage_stats(&r.previous, "extend");
            r.record("extend", fp, &outs, stats, true)?;
        } else {
            let base = load_vocab(&base_vocab_path)?;
            let spec = ExtensionSpec {
                n: cfg.extend.n,
                latin_filter: cfg.extend.latin_filter,
                min_frequency: cfg.extend.min_frequency,
            };
            let lang = cfg.extend.corpus_lang.clone();
            let texts = open_jsonl(&train_out)?
                .filter_map(|d| match d {
                    Ok(d) => match &lang {
                        Some(l) if &d.lang != l => None,
                        _ => Some(Ok(d.text)),
                    },
                    Err(e) => Some(Err(e)),
                })
                .collect::<Result<Vec<_>>>()?;
            let (ext, report) = extend(&base, texts, &spec)?;
            save_vocab(&ext, &ext_vocab_out)?;
            let mut report_json = serde_json::to_vec_pretty(&report).unwrap();
            report_json.push(b'\n');
            fs::write(&ext_report_out, report_json)?;
            let stats = serde_json::json!({
                "m": report.m,
                "removed_non_latin": report.removed_non_latin,
                "k": report.k,
                "n": report.n,
                "extended_size": ext.len(),
            });
            r.record("extend", fp, &outs, stats, false)?;
        }
    }

    // 6. vipi
    let emb_out = r.stage_dir().join("06_embeddings.tkmx");
    {
        let upstream = r.out_hash("extend", 0).to_string();
        let fp = fingerprint(
            "vipi",
            &serde_json::json!({}),
            &[
                ("extended_vocab", &upstream),
                ("base_vocab", &base_vocab_hash),
                ("base_embeddings", &base_emb_hash),
            ],
        );
        if r.reusable("vipi", &fp, std::slice::from_ref(&emb_out))? {
            let stats = stage_stats(&r.previous, "vipi");
            r.record("vipi", fp, &[emb_out.clone()], stats, true)?;
        } else {
            let base = load_vocab(&base_vocab_path)?;
            let emb = EmbeddingMatrix::load(&base_emb_path)?;
            let ext = load_vocab(&ext_vocab_out)?;
            let (out, report) = vipi_init(&base, &emb, &ext)?;
            out.save(&emb_out)?;
            let stats = serde_json::to_value(&report).unwrap();
            r.record("vipi", fp, &[emb_out.clone()], stats, false)?;
        }
    }

    // 7. pack
    let shard_out = r.stage_dir().join("07_windows.tkpk");
    let sidecar_out = r.stage_dir().join("07_spans.jsonl");
    {
        let mixed_hash = r.out_hash("oversample", 0).to_string();
        let vocab_hash = r.out_hash("extend", 0).to_string();
        let fp = fingerprint(
            "pack",
            &cfg.pack,
            &[("mixed", &mixed_hash), ("extended_vocab", &vocab_hash)],
        );
        let outs = vec![shard_out.clone(), sidecar_out.clone()];
        if r.reusable("pack", &fp, &outs)? {
            let stats = stage_stats(&r.previous, "pack");
            r.record("pack", fp, &outs, stats, true)?;
        } else {
            let ext = load_vocab(&ext_vocab_out)?;
            let pcfg = PackerConfig::for_vocab(
                &ext,
                cfg.pack.window,
                &cfg.pack.delimiter,
                cfg.pack.long_doc,
            )?;
            let mut packer = Packer::new(pcfg)?;
            let mut writer =
                ShardWriter::new(BufWriter::new(File::create(&shard_out)?), cfg.pack.window)?;
            let mut sidecar = BufWriter::new(File::create(&sidecar_out)?);
            let mut windows = 0u64;
            let mut tokens = 0u64;
            let mut emit = |w: &crate::packer::PackedWindow,
                            windows: &mut u64,
                            sidecar: &mut BufWriter<File>|
             -> Result<()> {
                writer.write_window(w)?;
                let line = SidecarLine {
                    window: *windows,
                    spans: w.doc_spans.clone(),
                };
                serde_json::to_writer(&mut *sidecar, &line)
                    .map_err(|e| Error::data(e.to_string()))?;
                sidecar.write_all(b"\n")?;
                *windows += 1;
                Ok(())
            };
            for doc in open_jsonl(&mixed_out)? {
                let doc = doc?;
                let ids = ext.encode(&doc.text);
                tokens += ids.len() as u64;
                for w in packer.push(&doc.id, &ids) {
                    emit(&w, &mut windows, &mut sidecar)?;
                }
            }
            let dropped_long = packer.dropped_long;
            if let Some(w) = packer.finish() {
                emit(&w, &mut windows, &mut sidecar)?;
            }
            sidecar.flush()?;
            writer.into_inner().flush()?;
            let stats = serde_json::json!({
                "windows": windows,
                "tokens": tokens,
                "dropped_long": dropped_long,
            });
            r.record("pack", fp, &outs, stats, false)?;
        }
    }

    // 8. fertility
    let fert_json_out = r.stage_dir().join("08_fertility.json");
    let fert_txt_out = r.stage_dir().join("08_fertility.txt");
    {
        let valid_hash = r.out_hash("split", 1).to_string();
        let vocab_hash = r.out_hash("extend", 0).to_string();
        let fp = fingerprint(
            "fertility",
            &cfg.fertility,
            &[
                ("valid", &valid_hash),
                ("extended_vocab", &vocab_hash),
                ("base_vocab", &base_vocab_hash),
            ],
        );
        let outs = vec![fert_json_out.clone(), fert_txt_out.clone()];
        if r.reusable("fertility", &fp, &outs)? {
            let stats = stage_stats(&r.previous, "fertility");
            r.record("fertility", fp, &outs, stats, true)?;
        } else {
            let base = load_vocab(&base_vocab_path)?;
            let ext = load_vocab(&ext_vocab_out)?;
            let mut by_lang: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for doc in open_jsonl(&valid_out)? {
                let doc = doc?;
                by_lang.entry(doc.lang).or_default().push(doc.text);
            }
            let report = compare(
                &base,
                "base",
                &ext,
                "adapted",
                &by_lang,
                cfg.fertility.macro_average,
            )?;
            let mut json = serde_json::to_vec_pretty(&report).unwrap();
            json.push(b'\n');
            fs::write(&fert_json_out, json)?;
            fs::write(&fert_txt_out, report.render_table())?;
            let stats = serde_json::to_value(&report).unwrap();
            r.record("fertility", fp, &outs, stats, false)?;
        }
    }

    let mut manifest_json = serde_json::to_vec_pretty(&r.manifest).unwrap();
    manifest_json.push(b'\n');
    fs::write(&manifest_path, manifest_json)?;

    Ok(RunSummary {
        executed: r.executed,
        skipped: r.skipped,
        manifest_path: manifest_path.to_string_lossy().into_owned(),
    })
}

fn stage_stats(manifest: &Manifest, name: &str) -> serde_json::Value {
    manifest
        .stages
        .iter()
        .find(|s| s.name == name)
        .map(|s| s.stats.clone())
        .unwrap_or(serde_json::Value::Null)
}

/// Composition report over a JSONL file, used by the `report` subcommand.
pub fn composition_of_file(
    path: &Path,
    vocab: &crate::vocab::Vocabulary,
    stage: &str,
) -> Result<crate::mixture::CompositionReport> {
    let docs = open_jsonl(path)?.collect::<Result<Vec<_>>>()?;
    Ok(compose_report(docs, vocab, stage))
}
