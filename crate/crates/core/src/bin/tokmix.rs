//! tokmix: vocabulary adaptation and pretraining-data pipeline CLI.
//!
//! Every subcommand is deterministic given its flags and inputs. Document
//! streams are JSONL; `-` means stdin/stdout. `--json` prints a
//! machine-readable result envelope to stdout (to stderr when documents
//! already stream to stdout). Exit codes: 0 ok, 2 usage/config error,
//! 3 data error.

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use tokmix_core::embed::{vipi_init, EmbeddingMatrix};
use tokmix_core::extend::{extend, filter_non_latin, ExtensionSpec};
use tokmix_core::fertility::compare;
use tokmix_core::filter::{DedupState, LengthFilter};
use tokmix_core::mixture::{oversample_doc, MixtureSpec, Route, SplitPlan, SplitSpec};
use tokmix_core::packer::{
    unpack, LongDocPolicy, PackedWindow, Packer, PackerConfig, ShardReader, ShardWriter,
    SidecarLine,
};
use tokmix_core::pipeline::{self, composition_of_file, load_config, WORKSPACE_ENV};
use tokmix_core::records::{write_record, DocumentRecord, JsonlReader};
use tokmix_core::train::{train, TrainerConfig};
use tokmix_core::vocab_io::{load_vocab, save_vocab};
use tokmix_core::Error;

#[derive(Parser)]
#[command(name = "tokmix", version, about = "BPE vocabulary adaptation and corpus pipeline")]
struct Cli {
    /// Emit a machine-readable JSON result envelope.
    #[arg(long, global = true)]
    json: bool,

    /// Worker threads for parallel stages (0 = library default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a byte-level BPE vocabulary from a JSONL corpus.
    TrainBpe(TrainBpeArgs),
    /// Extend a vocabulary with tokens learned from a target-language corpus.
    ExtendVocab(ExtendVocabArgs),
    /// Remove non-Latin multi-character tokens from a vocabulary.
    FilterLatin(FilterLatinArgs),
    /// Initialize embeddings for an extended vocabulary.
    VipiInit(VipiInitArgs),
    /// Drop documents shorter than a character minimum.
    Filter(FilterArgs),
    /// Exact document dedup, frequent-paragraph removal, 13-gram dedup.
    Dedup(DedupArgs),
    /// Language-stratified train/valid/test split.
    Split(SplitArgs),
    /// Weighted subset oversampling.
    Mix(MixArgs),
    /// Pack tokenized documents into fixed-size windows.
    Pack(PackArgs),
    /// Recover documents from packed windows.
    Unpack(UnpackArgs),
    /// Per-language fertility comparison of two vocabularies.
    Fertility(FertilityArgs),
    /// Corpus composition accounting under a vocabulary.
    Report(ReportArgs),
    /// Run the full recipe from a JSON config.
    Run(RunArgs),
}

#[derive(Args)]
struct TrainBpeArgs {
    /// Input JSONL corpus ('-' for stdin).
    #[arg(long)]
    corpus: String,
    /// Target vocabulary size (256 base + merges + specials).
    #[arg(long)]
    size: usize,
    /// Special tokens, repeatable.
    #[arg(long = "special", default_values_t = [String::from("<|endoftext|>")])]
    specials: Vec<String>,
    #[arg(long, default_value_t = 2)]
    min_frequency: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtendVocabArgs {
    /// Base vocabulary (native, tokenizer.json or vocab.json layout).
    #[arg(long)]
    base: PathBuf,
    /// Target-language JSONL corpus ('-' for stdin).
    #[arg(long)]
    corpus: String,
    /// Number of novel tokens to add.
    #[arg(long)]
    n: usize,
    /// Skip the non-Latin token removal pre-pass.
    #[arg(long)]
    no_latin_filter: bool,
    #[arg(long, default_value_t = 2)]
    min_frequency: u64,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the extension report (default: <out>.report.json).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct FilterLatinArgs {
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON list of removed tokens.
    #[arg(long)]
    removed: Option<PathBuf>,
}

#[derive(Args)]
struct VipiInitArgs {
    #[arg(long)]
    base_vocab: PathBuf,
    #[arg(long)]
    base_emb: PathBuf,
    #[arg(long)]
    extended_vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long, default_value = "-")]
    input: String,
    #[arg(long, default_value = "-")]
    output: String,
    #[arg(long, default_value_t = 500)]
    min_chars: usize,
    /// Sidecar stats file.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct DedupArgs {
    #[arg(long, default_value = "-")]
    input: String,
    #[arg(long, default_value = "-")]
    output: String,
    /// Paragraphs occurring more than this often per subset are removed
    /// (0 disables the pass and keeps the command single-pass).
    #[arg(long, default_value_t = 10)]
    frequent_threshold: u64,
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long, default_value = "-")]
    input: String,
    #[arg(long, default_value_t = 10_000)]
    valid_size: usize,
    #[arg(long, default_value_t = 10_000)]
    test_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional SplitSpec JSON file; flags override its seed.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: PathBuf,
    #[arg(long)]
    test: PathBuf,
}

#[derive(Args)]
struct MixArgs {
    #[arg(long, default_value = "-")]
    input: String,
    #[arg(long, default_value = "-")]
    output: String,
    /// MixtureSpec JSON file ({"weights": {...}, "seed": N}).
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Inline weight, subset=factor, repeatable.
    #[arg(long = "weight", value_parser = parse_weight)]
    inline_weights: Vec<(String, f64)>,
    /// Overrides the seed from --weights.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PackArgs {
    #[arg(long, default_value = "-")]
    input: String,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value_t = 4096)]
    window: usize,
    #[arg(long, default_value = "<|endoftext|>")]
    delimiter: String,
    #[arg(long = "long-doc", value_enum, default_value_t = LongDocArg::Split)]
    long_doc: LongDocArg,
    #[arg(long)]
    out: PathBuf,
    /// Span provenance sidecar (default: <out>.spans.jsonl).
    #[arg(long)]
    sidecar: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum LongDocArg {
    Split,
    Drop,
}

impl From<LongDocArg> for LongDocPolicy {
    fn from(v: LongDocArg) -> Self {
        match v {
            LongDocArg::Split => LongDocPolicy::Split,
            LongDocArg::Drop => LongDocPolicy::Drop,
        }
    }
}

#[derive(Args)]
struct UnpackArgs {
    #[arg(long)]
    input: PathBuf,
    /// Span sidecar written by pack (default: <input>.spans.jsonl).
    #[arg(long)]
    sidecar: Option<PathBuf>,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value = "<|endoftext|>")]
    delimiter: String,
    #[arg(long, default_value = "-")]
    output: String,
    /// Decode token ids back to text instead of emitting id lists.
    #[arg(long)]
    decode: bool,
}

#[derive(Args)]
struct FertilityArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    adapted: PathBuf,
    /// Evaluation documents, JSONL ('-' for stdin).
    #[arg(long)]
    docs: String,
    /// Mean of per-document ratios instead of the corpus-level ratio.
    #[arg(long)]
    per_doc: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    input: String,
    #[arg(long)]
    vocab: PathBuf,
    /// Label recorded in the report: which side of oversampling this is.
    #[arg(long, default_value = "pre-mix")]
    stage: String,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Workspace root (default: $TKMX_WORKSPACE, then the config's directory).
    #[arg(long)]
    workspace: Option<PathBuf>,
    /// Re-run everything, overwriting tampered outputs.
    #[arg(long)]
    force: bool,
}

fn parse_weight(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected subset=factor, got {s:?}"))?;
    let w: f64 = v.parse().map_err(|e| format!("bad factor {v:?}: {e}"))?;
    Ok((k.to_string(), w))
}

// --- io plumbing -------------------------------------------------------------

fn reader(path: &str) -> anyhow::Result<Box<dyn BufRead>> {
    Ok(match path {
        "-" => Box::new(BufReader::new(io::stdin())),
        p => Box::new(BufReader::new(
            File::open(p).with_context(|| format!("open {p}"))?,
        )),
    })
}

fn writer(path: &str) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        "-" => Box::new(BufWriter::new(io::stdout())),
        p => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("create {p}"))?,
        )),
    })
}

fn docs_from(path: &str) -> anyhow::Result<Vec<DocumentRecord>> {
    let docs: Result<Vec<_>, Error> = JsonlReader::new(reader(path)?).collect();
    Ok(docs?)
}

/// Result envelope; lands on stderr when documents stream to stdout.
struct Reporter {
    json: bool,
    command: &'static str,
    to_stderr: bool,
}

impl Reporter {
    fn emit(&self, data: serde_json::Value, human: String) {
        if self.json {
            let envelope = serde_json::json!({
                "command": self.command,
                "ok": true,
                "data": data,
            });
            let line = serde_json::to_string(&envelope).expect("envelope");
            if self.to_stderr {
                eprintln!("{line}");
            } else {
                println!("{line}");
            }
        } else if self.to_stderr {
            eprint!("{human}");
        } else {
            print!("{human}");
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .ok();
    }
    let json = cli.json;
    let command_name = command_name(&cli.command);
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            let kind = classify(&err);
            if json {
                let envelope = serde_json::json!({
                    "command": command_name,
                    "ok": false,
                    "error": {"kind": error_kind_name(kind), "message": err.to_string()},
                });
                println!("{}", serde_json::to_string(&envelope).expect("envelope"));
            } else {
                eprintln!("tokmix: error: {err:#}");
            }
            ExitCode::from(kind)
        }
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::TrainBpe(_) => "train-bpe",
        Command::ExtendVocab(_) => "extend-vocab",
        Command::FilterLatin(_) => "filter-latin",
        Command::VipiInit(_) => "vipi-init",
        Command::Filter(_) => "filter",
        Command::Dedup(_) => "dedup",
        Command::Split(_) => "split",
        Command::Mix(_) => "mix",
        Command::Pack(_) => "pack",
        Command::Unpack(_) => "unpack",
        Command::Fertility(_) => "fertility",
        Command::Report(_) => "report",
        Command::Run(_) => "run",
    }
}

/// 2 for configuration problems, 3 for data problems.
fn classify(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        Some(_) => 3,
        None => 3,
    }
}

fn error_kind_name(code: u8) -> &'static str {
    match code {
        2 => "config",
        _ => "data",
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    let json = cli.json;
    match cli.command {
        Command::TrainBpe(args) => {
            let rep = Reporter {
                json,
                command: "train-bpe",
                to_stderr: false,
            };
            let texts: Vec<String> = docs_from(&args.corpus)?
                .into_iter()
                .map(|d| d.text)
                .collect();
            let result = train(
                texts,
                &TrainerConfig {
                    target_size: args.size,
                    min_frequency: args.min_frequency,
                    specials: args.specials,
                },
            )?;
            save_vocab(&result.vocab, &args.out)?;
            if !result.complete {
                eprintln!(
                    "tokmix: warning: corpus exhausted after {} of {} merges; \
                     vocabulary is smaller than requested",
                    result.merges_done, result.merges_requested
                );
            }
            rep.emit(
                serde_json::json!({
                    "vocab_size": result.vocab.len(),
                    "merges": result.merges_done,
                    "complete": result.complete,
                    "out": args.out,
                }),
                format!(
                    "trained vocabulary of {} tokens ({} merges) -> {}\n",
                    result.vocab.len(),
                    result.merges_done,
                    args.out.display()
                ),
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::ExtendVocab(args) => {
            let rep = Reporter {
                json,
                command: "extend-vocab",
                to_stderr: false,
            };
            let base = load_vocab(&args.base)?;
            let texts: Vec<String> = docs_from(&args.corpus)?
                .into_iter()
                .map(|d| d.text)
                .collect();
            let spec = ExtensionSpec {
                n: args.n,
                latin_filter: !args.no_latin_filter,
                min_frequency: args.min_frequency,
            };
            let (ext, report) = extend(&base, texts, &spec)?;
            save_vocab(&ext, &args.out)?;
            let report_path = args
                .report
                .unwrap_or_else(|| args.out.with_extension("report.json"));
            let mut buf = serde_json::to_vec_pretty(&report)?;
            buf.push(b'\n');
            std::fs::write(&report_path, buf)?;
            rep.emit(
                serde_json::json!({
                    "m": report.m,
                    "removed_non_latin": report.removed_non_latin,
                    "k": report.k,
                    "n": report.n,
                    "extended_size": ext.len(),
                    "out": args.out,
                    "report": report_path,
                }),
                format!(
                    "extended vocabulary: {} = {} + {} novel tokens -> {}\n",
                    ext.len(),
                    report.m,
                    report.n,
                    args.out.display()
                ),
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::FilterLatin(args) => {
            let rep = Reporter {
                json,
                command: "filter-latin",
                to_stderr: false,
            };
            let vocab = load_vocab(&args.vocab)?;
            let (filtered, removed) = filter_non_latin(&vocab);
            save_vocab(&filtered, &args.out)?;
            if let Some(path) = &args.removed {
                let entries: Vec<serde_json::Value> = removed
                    .iter()
                    .map(|t| {
                        serde_json::json!({
                            "id": t.id,
                            "text": String::from_utf8_lossy(&t.bytes),
                        })
                    })
                    .collect();
                let mut buf = serde_json::to_vec_pretty(&entries)?;
                buf.push(b'\n');
                std::fs::write(path, buf)?;
            }
            rep.emit(
                serde_json::json!({
                    "in_size": vocab.len(),
                    "out_size": filtered.len(),
                    "removed": removed.len(),
                    "out": args.out,
                }),
                format!(
                    "removed {} non-Latin tokens: {} -> {}\n",
                    removed.len(),
                    vocab.len(),
                    filtered.len()
                ),
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::VipiInit(args) => {
            let rep = Reporter {
                json,
                command: "vipi-init",
                to_stderr: false,
            };
            let base_vocab = load_vocab(&args.base_vocab)?;
            let base_emb = EmbeddingMatrix::load(&args.base_emb)?;
            let ext_vocab = load_vocab(&args.extended_vocab)?;
            let (out, report) = vipi_init(&base_vocab, &base_emb, &ext_vocab)?;
            out.save(&args.out)?;
            rep.emit(
                serde_json::json!({
                    "rows": out.rows(),
                    "dim": out.dim(),
                    "copied": report.copied,
                    "averaged": report.averaged,
                    "byte_fallback": report.byte_fallback,
                    "out": args.out,
                }),
                format!(
                    "initialized {} x {} embeddings ({} copied, {} averaged, {} byte-fallback)\n",
                    out.rows(),
                    out.dim(),
                    report.copied,
                    report.averaged,
                    report.byte_fallback
                ),
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Filter(args) => {
            let rep = Reporter {
                json,
                command: "filter",
                to_stderr: args.output == "-",
            };
            let mut stage = LengthFilter::new(args.min_chars);
            let mut out = writer(&args.output)?;
            for doc in JsonlReader::new(reader(&args.input)?) {
                if let Some(doc) = stage.process(doc?) {
                    write_record(&mut out, &doc)?;
                }
            }
            out.flush()?;
            write_stats_sidecar(&args.stats, &stage.stats)?;
            rep.emit(
                serde_json::to_value(&stage.stats)?,
                format!(
                    "kept {} of {} documents ({} below {} chars)\n",
                    stage.stats.out_docs,
                    stage.stats.in_docs,
                    stage.stats.dropped_short,
                    args.min_chars
                ),
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Dedup(args) => {
            let rep = Reporter {
                json,
                command: "dedup",
                to_stderr: args.output == "-",
            };
            let mut state = DedupState::new(args.frequent_threshold);
            let mut out = writer(&args.output)?;
            if state.needs_observe_pass() {
                if args.input == "-" {
                    // stdin cannot be re-read: buffer it (the documented
                    // exception to streaming)
                    let docs = docs_from(&args.input)?;
                    for doc in &docs {
                        state.observe(doc);
                    }
                    for doc in docs {
                        if let Some(doc) = state.process(doc) {
                            write_record(&mut out, &doc)?;
                        }
                    }
                } else {
                    for doc in JsonlReader::new(reader(&args.input)?) {
                        state.observe(&doc?);
                    }
                    for doc in JsonlReader::new(reader(&args.input)?) {
                        if let Some(doc) = state.process(doc?) {
                            write_record(&mut out, &doc)?;
                        }
                    }
                }
            } else {
                for doc in JsonlReader::new(reader(&args.input)?) {
                    if let Some(doc) = state.process(doc?) {
                        write_record(&mut out, &doc)?;
                    }
                }
            }
            out.flush()?;
            write_stats_sidecar(&args.stats, &state.stats)?;
            rep.emit(
                serde_json::to_value(&state.stats)?,
                format!(
                    "kept {} of {} documents ({} dup docs, {} dup paragraphs, {} frequent paragraphs)\n",
                    state.stats.out_docs,
                    state.stats.in_docs,
                    state.stats.dropped_dup_doc,
                    state.stats.dropped_dup_para,
                    state.stats.dropped_frequent_para
                ),
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Split(args) => {
            let rep = Reporter {
                json,
                command: "split",
                to_stderr: false,
            };
            let mut spec = match &args.spec {
                Some(path) => {
                    let raw = std::fs::read_to_string(path)?;
                    serde_json::from_str::<SplitSpec>(&raw)
                        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?
                }
                None => SplitSpec {
                    valid_size: args.valid_size,
                    test_size: args.test_size,
                    stratify_by: "lang".into(),
                    seed: args.seed,
                },
            };
            if args.spec.is_some() {
                // flags override the file's seed when explicitly given
                if args.seed != 0 {
                    spec.seed = args.seed;
                }
            }
            let docs = docs_from(&args.input)?;
            let plan = SplitPlan::build(
                docs.iter().map(|d| (d.id.clone(), d.lang.clone())),
                &spec,
            )?;
            let mut train_w = writer(&args.train.to_string_lossy())?;
            let mut valid_w = writer(&args.valid.to_string_lossy())?;
            let mut test_w = writer(&args.test.to_string_lossy())?;
            let (mut n_train, mut n_valid, mut n_test) = (0u64, 0u64, 0u64);
            for doc in &docs {
                match plan.route(&doc.id) {
                    Route::Train => {
                        n_train += 1;
                        write_record(&mut train_w, doc)?
                    }
                    Route::Valid => {
                        n_valid += 1;
                        write_record(&mut valid_w, doc)?
                    }
                    Route::Test => {
                        n_test += 1;
                        write_record(&mut test_w, doc)?
                    }
                }
            }
            train_w.flush()?;
            valid_w.flush()?;
            test_w.flush()?;
            rep.emit(
                serde_json::json!({"train": n_train, "valid": n_valid, "test": n_test}),
                format!("split: {n_train} train, {n_valid} valid, {n_test} test\n"),
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Mix(args) => {
            let rep = Reporter {
                json,
                command: "mix",
                to_stderr: args.output == "-",
            };
            let mut spec = match &args.weights {
                Some(path) => {
                    let raw = std::fs::read_to_string(path)?;
                    serde_json::from_str::<MixtureSpec>(&raw)
                        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?
                }
                None => MixtureSpec {
                    weights: BTreeMap::new(),
                    seed: 0,
                },
            };
            for (subset, w) in args.inline_weights {
                spec.weights.insert(subset, w);
            }
            if let Some(seed) = args.seed {
                spec.seed = seed;
            }
            spec.validate()?;
            let mut out = writer(&args.output)?;
            let (mut n_in, mut n_out) = (0u64, 0u64);
            for doc in JsonlReader::new(reader(&args.input)?) {
                n_in += 1;
                for copy in oversample_doc(&spec, doc?) {
                    n_out += 1;
                    write_record(&mut out, &copy)?;
                }
            }
            out.flush()?;
            rep.emit(
                serde_json::json!({"in_docs": n_in, "out_docs": n_out, "seed": spec.seed}),
                format!("oversampled {n_in} documents into {n_out}\n"),
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Pack(args) => {
            let rep = Reporter {
                json,
                command: "pack",
                to_stderr: false,
            };
            let vocab = load_vocab(&args.vocab)?;
            let cfg = PackerConfig::for_vocab(
                &vocab,
                args.window,
                &args.delimiter,
                args.long_doc.into(),
            )?;
            let mut packer = Packer::new(cfg)?;
            let sidecar_path = args
                .sidecar
                .clone()
                .unwrap_or_else(|| sidecar_default(&args.out));
            let mut shard = ShardWriter::new(
                BufWriter::new(File::create(&args.out)?),
                args.window,
            )?;
            let mut sidecar = BufWriter::new(File::create(&sidecar_path)?);
            let mut windows = 0u64;
            let mut tokens = 0u64;
            for doc in JsonlReader::new(reader(&args.input)?) {
                let doc = doc?;
                let ids = vocab.encode(&doc.text);
                tokens += ids.len() as u64;
                for w in packer.push(&doc.id, &ids) {
                    emit_window(&mut shard, &mut sidecar, &mut windows, &w)?;
                }
            }
            let dropped_long = packer.dropped_long;
            if let Some(w) = packer.finish() {
                emit_window(&mut shard, &mut sidecar, &mut windows, &w)?;
            }
            sidecar.flush()?;
            shard.into_inner().flush()?;
            rep.emit(
                serde_json::json!({
                    "windows": windows,
                    "tokens": tokens,
                    "dropped_long": dropped_long,
                    "out": args.out,
                    "sidecar": sidecar_path,
                }),
                format!(
                    "packed {tokens} tokens into {windows} windows of <= {} -> {}\n",
                    args.window,
                    args.out.display()
                ),
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Unpack(args) => {
            let rep = Reporter {
                json,
                command: "unpack",
                to_stderr: args.output == "-",
            };
            let vocab = load_vocab(&args.vocab)?;
            let delimiter = vocab.special_id(&args.delimiter).ok_or_else(|| {
                Error::config(format!("delimiter {:?} not in vocabulary", args.delimiter))
            })?;
            let sidecar_path = args
                .sidecar
                .clone()
                .unwrap_or_else(|| sidecar_default(&args.input));
            let spans: Vec<SidecarLine> = {
                let mut v = Vec::new();
                for line in BufReader::new(File::open(&sidecar_path)?).lines() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    v.push(
                        serde_json::from_str(&line)
                            .map_err(|e| Error::parse(format!("sidecar: {e}")))?,
                    );
                }
                v
            };
            let mut reader_ =
                ShardReader::new(BufReader::new(File::open(&args.input)?))?;
            let mut windows = Vec::new();
            let mut idx = 0usize;
            while let Some(ids) = reader_.next_ids()? {
                let line = spans.get(idx).ok_or_else(|| {
                    Error::data(format!("sidecar has no entry for window {idx}"))
                })?;
                windows.push(PackedWindow {
                    ids,
                    doc_spans: line.spans.clone(),
                });
                idx += 1;
            }
            let docs = unpack(windows, delimiter)?;
            let mut out = writer(&args.output)?;
            let n = docs.len();
            for (id, ids) in docs {
                let value = if args.decode {
                    serde_json::json!({"id": id, "text": vocab.decode(&ids)?})
                } else {
                    serde_json::json!({"id": id, "tokens": ids})
                };
                serde_json::to_writer(&mut out, &value)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
            rep.emit(
                serde_json::json!({"documents": n}),
                format!("unpacked {n} documents\n"),
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Fertility(args) => {
            let rep = Reporter {
                json,
                command: "fertility",
                to_stderr: false,
            };
            let base = load_vocab(&args.base)?;
            let adapted = load_vocab(&args.adapted)?;
            let mut by_lang: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for doc in docs_from(&args.docs)? {
                by_lang.entry(doc.lang).or_default().push(doc.text);
            }
            let report = compare(&base, "base", &adapted, "adapted", &by_lang, args.per_doc)?;
            rep.emit(serde_json::to_value(&report)?, report.render_table());
            Ok(ExitCode::SUCCESS)
        }

        Command::Report(args) => {
            let rep = Reporter {
                json,
                command: "report",
                to_stderr: false,
            };
            let vocab = load_vocab(&args.vocab)?;
            let report = if args.input == "-" {
                let docs = docs_from(&args.input)?;
                tokmix_core::mixture::compose_report(docs, &vocab, &args.stage)
            } else {
                composition_of_file(Path::new(&args.input), &vocab, &args.stage)?
            };
            rep.emit(serde_json::to_value(&report)?, report.render_table());
            Ok(ExitCode::SUCCESS)
        }

        Command::Run(args) => {
            let rep = Reporter {
                json,
                command: "run",
                to_stderr: false,
            };
            let cfg = load_config(&args.config)?;
            let root = args
                .workspace
                .or_else(|| std::env::var_os(WORKSPACE_ENV).map(PathBuf::from))
                .or_else(|| args.config.parent().map(Path::to_path_buf))
                .unwrap_or_else(|| PathBuf::from("."));
            let summary = pipeline::run(&cfg, &root, args.force)?;
            rep.emit(
                serde_json::to_value(&summary)?,
                format!(
                    "executed {} stages, skipped {} (manifest: {})\n",
                    summary.executed.len(),
                    summary.skipped.len(),
                    summary.manifest_path
                ),
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn emit_window(
    shard: &mut ShardWriter<BufWriter<File>>,
    sidecar: &mut BufWriter<File>,
    windows: &mut u64,
    w: &PackedWindow,
) -> anyhow::Result<()> {
    shard.write_window(w)?;
    let line = SidecarLine {
        window: *windows,
        spans: w.doc_spans.clone(),
    };
    serde_json::to_writer(&mut *sidecar, &line)?;
    sidecar.write_all(b"\n")?;
    *windows += 1;
    Ok(())
}

fn sidecar_default(shard: &Path) -> PathBuf {
    let mut name = shard.file_name().unwrap_or_default().to_os_string();
    name.push(".spans.jsonl");
    shard.with_file_name(name)
}

fn write_stats_sidecar(
    path: &Option<PathBuf>,
    stats: &tokmix_core::filter::FilterStats,
) -> anyhow::Result<()> {
    if let Some(path) = path {
        let mut buf = serde_json::to_vec_pretty(stats)?;
        buf.push(b'\n');
        std::fs::write(path, buf)?;
    }
    Ok(())
}
