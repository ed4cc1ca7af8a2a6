//! Command-line entry point.
//!
//! Every subcommand reads its inputs, writes under `--out`, and never writes
//! to an input path. Failures print one line `error[<kind>]: <message>` to
//! stderr and exit 1; usage errors print usage and exit 2.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{
    normalized_logits, overlap_distribution, pair_stability, solvability_report, write_csv,
    write_solvability_csv, write_stability_csv,
};
use crate::baseline::{grid_search, BaselineGrid, BaselineSelection, LogisticModel, OverlapMode};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::corpus::{
    corpus_stats, import_eraser, read_native, read_native_with_labels, write_native, Dataset,
};
use crate::error::{Error, Result};
use crate::experiment::{curve_csv, learning_curve, run};
use crate::metrics::{evaluate, GoldScope, MetricReport, PredictionRecord};
use crate::stopwords::Stoplist;
use crate::synthgen::{generate, Family, SynthConfig};
use crate::trainer::predict_dataset;

#[derive(Debug, Parser)]
#[command(
    name = "faithsel",
    version,
    about = "Faithful sentence-selecting text classifier"
)]
struct Cli {
    /// Seed for generation, initialization and batch order.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file or run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus in the native JSONL format.
    GenSynthetic(GenArgs),
    /// Convert ERASER documents and annotations to the native format.
    ImportEraser(ImportArgs),
    /// Train a model; writes a run directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint; writes a JSON report and a per-sample CSV.
    Eval(EvalArgs),
    /// Write prediction records (JSONL) for a dataset.
    Predict(PredictArgs),
    /// Grid-search and fit the lexical-overlap logistic-regression baseline.
    Baseline(BaselineArgs),
    /// Train on nested fractions of the training set over several seeds.
    LearningCurve(CurveArgs),
    /// Export analysis tables from prediction records.
    Analyze(AnalyzeArgs),
    /// Print corpus statistics.
    Stats(StatsArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FamilyArg {
    SingleEvidence,
    TwoHop,
    Discussion,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::SingleEvidence => Family::SingleEvidence,
            FamilyArg::TwoHop => Family::TwoHop,
            FamilyArg::Discussion => Family::Discussion,
        }
    }
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    #[arg(long, default_value_t = 2000)]
    num_samples: usize,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    sentences_per_doc: Option<usize>,
    #[arg(long)]
    query_len: Option<usize>,
    #[arg(long)]
    sentence_len: Option<usize>,
    #[arg(long)]
    num_labels: Option<usize>,
}

#[derive(Debug, Args)]
struct ImportArgs {
    /// Directory of per-docid sentence-per-line files.
    #[arg(long)]
    docs: PathBuf,
    /// JSONL annotation file.
    #[arg(long)]
    annotations: PathBuf,
    /// Comma-separated label names in id order.
    #[arg(long, value_delimiter = ',', required = true)]
    labels: Vec<String>,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Configuration override, key=value (repeatable).
    #[arg(long = "set")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScopeArg {
    BestMatch,
    AllGold,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Gold rationales scored by IOU and token F1.
    #[arg(long, value_enum, default_value = "best-match")]
    gold_scope: ScopeArg,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    test: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CurveArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1.0")]
    fractions: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum What {
    Logits,
    Overlap,
    Split,
    Stability,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Prediction records of the analysed model.
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    what: What,
    /// Reference records: single-sentence models for `split`, one
    /// single-sentence model for `stability`.
    #[arg(long = "reference")]
    references: Vec<PathBuf>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    data: PathBuf,
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `argv` (program name first), runs the subcommand, and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = match cli.threads {
        Some(0) => Err(Failure::Usage("--threads must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(&cli)),
            Err(e) => Err(Failure::Run(Error::Config(format!("thread pool: {e}")))),
        },
        None => execute(&cli),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            2
        }
        Err(Failure::Run(e)) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            1
        }
    }
}

fn execute(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::GenSynthetic(a) => gen_synthetic(cli, a),
        Command::ImportEraser(a) => import(cli, a),
        Command::Train(a) => train_cmd(cli, a),
        Command::Eval(a) => eval_cmd(cli, a),
        Command::Predict(a) => predict_cmd(cli, a),
        Command::Baseline(a) => baseline_cmd(cli, a),
        Command::LearningCurve(a) => curve_cmd(cli, a),
        Command::Analyze(a) => analyze_cmd(cli, a),
        Command::Stats(a) => stats_cmd(cli, a),
    }
}

fn out_path<'a>(cli: &'a Cli, inputs: &[&Path]) -> std::result::Result<&'a Path, Failure> {
    let out = cli.out.as_deref().ok_or_else(|| {
        Failure::Usage("the following required argument was not provided: --out <OUT>".into())
    })?;
    for input in inputs {
        if same_file(out, input) {
            return Err(Failure::Usage(format!(
                "--out {} would overwrite an input",
                out.display()
            )));
        }
    }
    Ok(out)
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn resolve_config(cli: &Cli, args: &ConfigArgs) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        config.apply_text(&text)?;
    }
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
    }
    config.apply_overrides(&args.overrides)?;
    config.validate()?;
    Ok(config)
}

/// Training split with its own labels and vocabulary, validation split with the same labels.
fn read_pair(train: &Path, val: &Path) -> Result<(Dataset, Dataset)> {
    let train_set = read_native(train)?;
    let val_set = read_native_with_labels(val, &train_set.label_names)?;
    Ok((train_set, val_set))
}

fn read_records(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            location: format!("{}:{}", path.display(), n + 1),
            message: e.to_string(),
        })?);
    }
    Ok(records)
}

fn records_jsonl(records: &[PredictionRecord]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

#[derive(Serialize)]
struct ManifestEntry {
    file: String,
    bytes: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    inputs: Vec<String>,
    files: Vec<ManifestEntry>,
}

/// Writes `files` under `dir` followed by `manifest.json` listing them.
fn write_run_dir(
    dir: &Path,
    command: &str,
    inputs: &[&Path],
    files: Vec<(&str, Vec<u8>)>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        write_file(&dir.join(name), &bytes)?;
        entries.push(ManifestEntry {
            file: name.to_owned(),
            bytes: bytes.len(),
        });
    }
    let manifest = Manifest {
        command,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        files: entries,
    };
    write_file(&dir.join("manifest.json"), to_json(&manifest)?)
}

fn gen_synthetic(cli: &Cli, a: &GenArgs) -> CmdResult {
    let out = out_path(cli, &[])?;
    let mut config = SynthConfig::reference(a.family.into(), a.num_samples, cli.seed.unwrap_or(1));
    if let Some(v) = a.vocab_size {
        config.vocab_size = v;
    }
    if let Some(v) = a.sentences_per_doc {
        config.sentences_per_doc = v;
    }
    if let Some(v) = a.query_len {
        config.query_len = v;
    }
    if let Some(v) = a.sentence_len {
        config.sentence_len = v;
    }
    if let Some(v) = a.num_labels {
        config.num_labels = v;
    }
    let dataset = generate(&config)?;
    write_native(&dataset, out)?;
    Ok(())
}

fn import(cli: &Cli, a: &ImportArgs) -> CmdResult {
    let out = out_path(cli, &[&a.annotations])?;
    let label_map: BTreeMap<String, usize> = a
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.clone(), i))
        .collect();
    if label_map.len() != a.labels.len() {
        return Err(Failure::Usage("--labels contains duplicates".into()));
    }
    let dataset = import_eraser(&a.docs, &a.annotations, &label_map)?;
    write_native(&dataset, out)?;
    Ok(())
}

#[derive(Serialize)]
struct TrainReport<'a> {
    best_step: Option<usize>,
    steps: usize,
    validation: &'a MetricReport,
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> CmdResult {
    let mut inputs: Vec<&Path> = vec![&a.train, &a.val];
    if let Some(c) = &a.config.config {
        inputs.push(c);
    }
    let dir = out_path(cli, &inputs)?;
    let config = resolve_config(cli, &a.config)?;
    let (train_set, val_set) = read_pair(&a.train, &a.val)?;
    let outcome = run(&train_set, &val_set, &config)?;
    let checkpoint = Checkpoint::new(
        outcome.params,
        config.train.hops,
        config.train.objective.tau,
        train_set.label_names.clone(),
        &train_set.vocabulary,
    )?;
    let report = TrainReport {
        best_step: outcome.history.best_step,
        steps: outcome.history.step_losses.len(),
        validation: &outcome.report,
    };
    let stoplist = Stoplist::default();
    let mut files = vec![
        ("config.txt", config.echo().into_bytes()),
        ("checkpoint.json", checkpoint.to_json()?.into_bytes()),
        ("history.csv", outcome.history.to_csv().into_bytes()),
        ("report.json", to_json(&report)?.into_bytes()),
        ("predictions.jsonl", records_jsonl(&outcome.records)?),
    ];
    if !val_set.is_empty() {
        let logits = normalized_logits(&outcome.records, &val_set.samples)?;
        files.push(("logits.csv", csv_bytes(|b| write_csv(&logits, b))?));
        let overlap = overlap_distribution(&outcome.records, &val_set.samples, &stoplist)?;
        files.push(("overlap.csv", csv_bytes(|b| write_csv(&overlap, b))?));
    }
    write_run_dir(dir, "train", &inputs, files)?;
    Ok(())
}

/// Loads a checkpoint and a dataset encoded with its vocabulary.
fn load_for_checkpoint(checkpoint: &Path, data: &Path) -> Result<(Checkpoint, Dataset)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let dataset = read_native_with_labels(data, &ckpt.labels).map_err(|e| match e {
        Error::UnknownLabel(l) => Error::VocabMismatch(format!(
            "dataset label '{l}' is not among the checkpoint labels {:?}",
            ckpt.labels
        )),
        other => other,
    })?;
    let dataset = ckpt.attach(dataset)?;
    Ok((ckpt, dataset))
}

#[derive(Serialize)]
struct SampleRow<'a> {
    id: &'a str,
    gold: usize,
    predicted: usize,
    selected: String,
    weight: f64,
}

fn eval_cmd(cli: &Cli, a: &EvalArgs) -> CmdResult {
    let out = out_path(cli, &[&a.checkpoint, &a.data])?;
    let (ckpt, dataset) = load_for_checkpoint(&a.checkpoint, &a.data)?;
    let records = predict_dataset(&ckpt.params, &dataset, ckpt.hops, ckpt.tau)?;
    let scope = match a.gold_scope {
        ScopeArg::BestMatch => GoldScope::BestMatch,
        ScopeArg::AllGold => GoldScope::AllGold,
    };
    let report = evaluate(&records, &dataset.samples, dataset.num_labels(), scope)?;
    let rows: Vec<SampleRow> = records
        .iter()
        .zip(&dataset.samples)
        .map(|(r, s)| SampleRow {
            id: &r.sample_id,
            gold: s.label,
            predicted: r.predicted_label,
            selected: r
                .selected
                .indices()
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(" "),
            weight: r.selected_weight(),
        })
        .collect();
    write_file(out, to_json(&report)?)?;
    write_file(
        &out.with_extension("samples.csv"),
        csv_bytes(|b| write_csv(&rows, b))?,
    )?;
    Ok(())
}

fn predict_cmd(cli: &Cli, a: &PredictArgs) -> CmdResult {
    let out = out_path(cli, &[&a.checkpoint, &a.data])?;
    let (ckpt, dataset) = load_for_checkpoint(&a.checkpoint, &a.data)?;
    let records = predict_dataset(&ckpt.params, &dataset, ckpt.hops, ckpt.tau)?;
    write_file(out, records_jsonl(&records)?)?;
    Ok(())
}

#[derive(Serialize)]
struct SplitScore {
    f1a: f64,
    accuracy: f64,
    selections: Vec<BaselineSelection>,
}

#[derive(Serialize)]
struct BaselineReport {
    w_q: f64,
    w_a: f64,
    mode: OverlapMode,
    model: LogisticModel,
    val_f1a: f64,
    splits: BTreeMap<String, SplitScore>,
}

fn baseline_cmd(cli: &Cli, a: &BaselineArgs) -> CmdResult {
    let mut inputs: Vec<&Path> = vec![&a.train, &a.val];
    if let Some(t) = &a.test {
        inputs.push(t);
    }
    let out = out_path(cli, &inputs)?;
    let (train_set, val_set) = read_pair(&a.train, &a.val)?;
    let stoplist = Stoplist::default();
    let result = grid_search(&train_set, &val_set, &BaselineGrid::default(), &stoplist)?;
    let mut splits = BTreeMap::new();
    let mut score = |name: &str, d: &Dataset| -> Result<()> {
        let (f1a, accuracy) = result.best.score(d, &stoplist)?;
        let selections = result.best.predict(d, &stoplist)?;
        splits.insert(
            name.to_owned(),
            SplitScore {
                f1a,
                accuracy,
                selections,
            },
        );
        Ok(())
    };
    score("train", &train_set)?;
    score("val", &val_set)?;
    if let Some(t) = &a.test {
        let test_set = read_native_with_labels(t, &train_set.label_names)?;
        score("test", &test_set)?;
    }
    let report = BaselineReport {
        w_q: result.best.w_q,
        w_a: result.best.w_a,
        mode: result.best.mode,
        model: result.best.model,
        val_f1a: result.val_f1a,
        splits,
    };
    write_file(out, to_json(&report)?)?;
    Ok(())
}

fn curve_cmd(cli: &Cli, a: &CurveArgs) -> CmdResult {
    let mut inputs: Vec<&Path> = vec![&a.train, &a.val];
    if let Some(c) = &a.config.config {
        inputs.push(c);
    }
    let out = out_path(cli, &inputs)?;
    let config = resolve_config(cli, &a.config)?;
    let (train_set, val_set) = read_pair(&a.train, &a.val)?;
    let rows = learning_curve(&train_set, &val_set, &a.fractions, &a.seeds, &config)?;
    write_file(out, curve_csv(&rows))?;
    Ok(())
}

fn analyze_cmd(cli: &Cli, a: &AnalyzeArgs) -> CmdResult {
    let mut inputs: Vec<&Path> = vec![&a.records, &a.data];
    inputs.extend(a.references.iter().map(PathBuf::as_path));
    let out = out_path(cli, &inputs)?;
    let dataset = read_native(&a.data)?;
    let records = read_records(&a.records)?;
    let samples = &dataset.samples;
    let bytes = match a.what {
        What::Logits => {
            let rows = normalized_logits(&records, samples)?;
            csv_bytes(|b| write_csv(&rows, b))?
        }
        What::Overlap => {
            let rows = overlap_distribution(&records, samples, &Stoplist::default())?;
            csv_bytes(|b| write_csv(&rows, b))?
        }
        What::Split => {
            if a.references.is_empty() {
                return Err(Failure::Usage(
                    "--what split needs at least one --reference".into(),
                ));
            }
            let references = a
                .references
                .iter()
                .map(|p| read_records(p))
                .collect::<Result<Vec<_>>>()?;
            let groups = solvability_report(&references, &records, samples, dataset.num_labels())?;
            csv_bytes(|b| write_solvability_csv(&groups, b))?
        }
        What::Stability => {
            let [reference] = a.references.as_slice() else {
                return Err(Failure::Usage(
                    "--what stability needs exactly one --reference".into(),
                ));
            };
            let single = read_records(reference)?;
            let table = pair_stability(&records, &single, samples, dataset.num_labels())?;
            eprintln!(
                "evaluated {} samples; skipped {} non-pair and {} without a shared sentence",
                table.evaluated, table.skipped_not_pair, table.skipped_no_shared
            );
            csv_bytes(|b| write_stability_csv(&table, b))?
        }
    };
    write_file(out, bytes)?;
    Ok(())
}

fn stats_cmd(cli: &Cli, a: &StatsArgs) -> CmdResult {
    let dataset = read_native(&a.data)?;
    let stats = corpus_stats(&dataset);
    let stdout = std::io::stdout();
    let mut w = BufWriter::new(stdout.lock());
    write!(w, "{stats}").map_err(|e| Error::io("<stdout>", e))?;
    w.flush().map_err(|e| Error::io("<stdout>", e))?;
    if cli.out.is_some() {
        let out = out_path(cli, &[&a.data])?;
        write_file(out, to_json(&stats)?)?;
    }
    Ok(())
}
