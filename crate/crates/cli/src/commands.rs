use crate::config::FileConfig;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use std::fmt;
use std::path::{Path, PathBuf};
use topognn::ablation::{run_ablation, Rewiring};
use topognn::analysis::{build_report, compare_classes};
use topognn::checks;
use topognn::graph::{split_dataset, GraphDataset, GraphError, Split};
use topognn::io::{self, IoError};
use topognn::model::ModelKind;
use topognn::synth::{self, SynthError};
use topognn::topo::{augment_features, summarize, AUGMENTED_COLUMNS};
use topognn::training::{
    self, epoch_log_csv, evaluate_split, is_augmented, prepare_dataset, Checkpoint, TrainConfig, TrainError, TrainState,
};

#[derive(Debug, Parser)]
#[command(name = "topognn", version, about = "Topology-augmented classification of news propagation graphs")]
pub struct Cli {
    /// Seed for every random choice (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    Gen(GenArgs),
    /// Append degree centrality and clustering columns to node features.
    Augment(InOut),
    /// Write per-graph topology summaries as CSV.
    Summarize(InOut),
    /// Build the topology report from a summaries CSV.
    Analyze(AnalyzeArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Run the feature/structure ablation.
    Ablate(AblateArgs),
    /// Finite-difference gradient checks of every layer and model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Output dataset file.
    #[arg(long)]
    out: PathBuf,
    /// Graphs per class.
    #[arg(long)]
    graphs: Option<usize>,
    #[arg(long)]
    min_nodes: Option<usize>,
    #[arg(long)]
    max_nodes: Option<usize>,
    #[arg(long)]
    feat_dim: Option<usize>,
    #[arg(long)]
    structure_signal: Option<f64>,
    #[arg(long)]
    feature_signal: Option<f64>,
    #[arg(long)]
    closure_base: Option<f64>,
    /// Train/val/test fractions, e.g. 0.7,0.1,0.2.
    #[arg(long, value_parser = parse_split)]
    split: Option<[f64; 3]>,
    /// Leave the dataset without a split assignment.
    #[arg(long, conflicts_with = "split")]
    no_split: bool,
}

#[derive(Debug, Args)]
struct InOut {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Summaries CSV written by `summarize`.
    #[arg(long)]
    input: PathBuf,
    /// Directory for report.json and the plot CSVs.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Baselines: append the root node's features to the pooled vector.
    #[arg(long)]
    concat_news: bool,
    /// Split fractions used when the dataset has no split.
    #[arg(long, value_parser = parse_split)]
    split: Option<[f64; 3]>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Directory for best.json, last.json, state.json and epochs.csv.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Continue from a state.json written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    rewiring: Option<Rewiring>,
    /// Name recorded in the report (default: input file stem).
    #[arg(long)]
    dataset_id: Option<String>,
    /// Append the report as a CSV row to this file (header written if new).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
}

fn parse_split(s: &str) -> std::result::Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<std::result::Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|_| "expected three comma-separated fractions".to_string())
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    /// A check ran and failed; carries the full JSON result.
    Check(Value),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Check(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Check(_) => "check",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
            CliError::Check(_) => f.write_str("gradient check failed"),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::BadFractions(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::BadConfig(_) => CliError::Usage(e.to_string()),
            TrainError::Graph(g) => g.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<Value> {
    let cfg = FileConfig::load(cli.config.as_deref()).map_err(CliError::Usage)?;
    let seed = cli.seed;
    match cli.command {
        Command::Gen(a) => gen(&cfg, seed, a),
        Command::Augment(a) => augment(a),
        Command::Summarize(a) => summarize_cmd(a),
        Command::Analyze(a) => analyze(a),
        Command::Train(a) => train(&cfg, seed, a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(&cfg, seed, a),
        Command::Gradcheck(a) => gradcheck(&cfg, seed, a),
    }
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, body).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn split_counts(ds: &GraphDataset) -> Value {
    if !ds.is_split() {
        return Value::Null;
    }
    let n = |s| ds.split_graphs(s).len();
    json!({ "train": n(Split::Train), "val": n(Split::Val), "test": n(Split::Test) })
}

fn gen(cfg: &FileConfig, seed: Option<u64>, a: GenArgs) -> Result<Value> {
    let mut c = cfg.synth.clone();
    c.seed = cfg.seed(seed, c.seed);
    c.graphs_per_class = a.graphs.unwrap_or(c.graphs_per_class);
    c.min_nodes = a.min_nodes.unwrap_or(c.min_nodes);
    c.max_nodes = a.max_nodes.unwrap_or(c.max_nodes);
    c.feat_dim = a.feat_dim.unwrap_or(c.feat_dim);
    c.structure_signal = a.structure_signal.unwrap_or(c.structure_signal);
    c.feature_signal = a.feature_signal.unwrap_or(c.feature_signal);
    c.closure_base = a.closure_base.unwrap_or(c.closure_base);
    let mut ds = synth::generate(&c)?;
    if !a.no_split {
        let [tr, va, te] = cfg.split(a.split);
        ds = split_dataset(&ds, (tr, va, te), c.seed)?;
    }
    io::save_dataset(&ds, &a.out)?;
    Ok(json!({
        "status": "ok",
        "command": "gen",
        "out": a.out,
        "seed": c.seed,
        "num_graphs": ds.len(),
        "feat_dim": c.feat_dim,
        "splits": split_counts(&ds),
    }))
}

fn augment(a: InOut) -> Result<Value> {
    let ds = io::load_dataset(&a.input)?;
    let out = ds.map_graphs(augment_features);
    io::save_dataset(&out, &a.out)?;
    Ok(json!({
        "status": "ok",
        "command": "augment",
        "out": a.out,
        "num_graphs": out.len(),
        "feat_dim": out.feat_dim().unwrap_or(0),
    }))
}

fn summarize_cmd(a: InOut) -> Result<Value> {
    let ds = io::load_dataset(&a.input)?;
    let summaries: Vec<_> = ds.graphs.iter().map(summarize).collect();
    io::save_summaries(&summaries, &a.out)?;
    Ok(json!({ "status": "ok", "command": "summarize", "out": a.out, "num_graphs": summaries.len() }))
}

fn analyze(a: AnalyzeArgs) -> Result<Value> {
    let summaries = io::load_summaries(&a.input)?;
    let report = build_report(&summaries).map_err(|e| CliError::Data(e.to_string()))?;
    io::save_report(&report, &a.out_dir)?;
    Ok(json!({
        "status": "ok",
        "command": "analyze",
        "out_dir": a.out_dir,
        "files": io::REPORT_FILES,
        "num_graphs": summaries.len(),
        "comparison": compare_classes(&report),
        "degenerate_features": report.degenerate_features,
    }))
}

/// Drops topology columns from a dataset whose every graph carries them, so
/// that raw and augmented inputs are handled alike.
fn raw_features(ds: GraphDataset) -> GraphDataset {
    let augmented = !ds.is_empty() && ds.graphs.iter().all(is_augmented);
    if !augmented {
        return ds;
    }
    let keep = ds.feat_dim().unwrap_or(0) - AUGMENTED_COLUMNS;
    ds.map_graphs(|g| g.with_features(g.features.hsplit(keep).0))
}

fn model_config(cfg: &FileConfig, seed: Option<u64>, m: &ModelArgs) -> TrainConfig {
    let mut c = cfg.train.clone();
    c.seed = cfg.seed(seed, c.seed);
    c.model = m.model.unwrap_or(c.model);
    c.epochs = m.epochs.unwrap_or(c.epochs);
    c.learning_rate = m.lr.unwrap_or(c.learning_rate);
    c.weight_decay = m.weight_decay.unwrap_or(c.weight_decay);
    c.batch_size = m.batch_size.unwrap_or(c.batch_size);
    c.hidden_dim = m.hidden_dim.unwrap_or(c.hidden_dim);
    c.dropout_rate = m.dropout.unwrap_or(c.dropout_rate);
    c.concat_news |= m.concat_news;
    c
}

/// Loads a dataset as raw features with a split assignment.
fn load_split_dataset(cfg: &FileConfig, path: &Path, split: Option<[f64; 3]>, seed: u64) -> Result<GraphDataset> {
    let ds = raw_features(io::load_dataset(path)?);
    if ds.is_split() {
        return Ok(ds);
    }
    let [tr, va, te] = cfg.split(split);
    Ok(split_dataset(&ds, (tr, va, te), seed)?)
}

fn train(cfg: &FileConfig, seed: Option<u64>, a: TrainArgs) -> Result<Value> {
    let tc = model_config(cfg, seed, &a.model);
    tc.validate()?;
    let raw = load_split_dataset(cfg, &a.input, a.model.split, tc.seed)?;
    let ds = prepare_dataset(&raw, tc.model);
    let mut state = match &a.resume {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            training::resume(&ds, &tc, TrainState::from_json(&text)?)?
        }
        None => training::train(&ds, &tc)?,
    };
    let test = if ds.split_graphs(Split::Test).is_empty() {
        Value::Null
    } else {
        json!(evaluate_split(&mut state.best.model, &ds, Split::Test)?)
    };
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
        state.best.save(&dir.join("best.json"))?;
        state.last.save(&dir.join("last.json"))?;
        write_file(&dir.join("state.json"), state.to_json()?)?;
        write_file(&dir.join("epochs.csv"), epoch_log_csv(&state.log))?;
    }
    Ok(json!({
        "status": "ok",
        "command": "train",
        "model": tc.model,
        "seed": tc.seed,
        "epochs_completed": state.last.epochs_completed,
        "best_epoch": state.best.best_epoch,
        "best_val_macro_f1": state.best.best_val_macro_f1,
        "final_train_loss": state.log.last().map(|e| e.train_loss),
        "splits": split_counts(&ds),
        "test": test,
        "out_dir": a.out_dir,
    }))
}

fn eval(a: EvalArgs) -> Result<Value> {
    let mut ck = Checkpoint::load(&a.checkpoint)?;
    let raw = raw_features(io::load_dataset(&a.input)?);
    if !raw.is_split() {
        return Err(CliError::Data("dataset has no split assignment; evaluate a split dataset".into()));
    }
    let ds = prepare_dataset(&raw, ck.model.kind());
    let report = evaluate_split(&mut ck.model, &ds, a.split)?;
    Ok(json!({
        "status": "ok",
        "command": "eval",
        "model": ck.model.kind(),
        "split": a.split,
        "report": report,
    }))
}

fn ablate(cfg: &FileConfig, seed: Option<u64>, a: AblateArgs) -> Result<Value> {
    let tc = model_config(cfg, seed, &a.model);
    tc.validate()?;
    let ds = load_split_dataset(cfg, &a.input, a.model.split, tc.seed)?;
    let rewiring = a.rewiring.unwrap_or(cfg.ablation.rewiring);
    let id = a
        .dataset_id
        .or_else(|| cfg.ablation.dataset_id.clone())
        .unwrap_or_else(|| a.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    let report = run_ablation(&ds, &tc, rewiring, &id)?;
    if let Some(path) = &a.csv {
        use std::io::Write;
        let fresh = !path.exists();
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let mut text = String::new();
        if fresh {
            text.push_str(topognn::ablation::ABLATION_CSV_HEADER);
            text.push('\n');
        }
        text.push_str(&report.csv_row());
        text.push('\n');
        f.write_all(text.as_bytes()).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }
    let mut out = json!({ "status": "ok", "command": "ablate", "rewiring": rewiring });
    out["report"] = json!(report);
    Ok(out)
}

fn gradcheck(cfg: &FileConfig, seed: Option<u64>, a: GradcheckArgs) -> Result<Value> {
    let seed = cfg.seed(seed, 0);
    let epsilon = a.epsilon.unwrap_or(cfg.gradcheck.epsilon);
    let tolerance = a.tolerance.unwrap_or(cfg.gradcheck.tolerance);
    if !(epsilon > 0.0 && tolerance > 0.0) {
        return Err(CliError::Usage("epsilon and tolerance must be positive".into()));
    }
    let outcomes = checks::full_suite(seed, epsilon, tolerance);
    let passed = outcomes.iter().all(|o| o.passed);
    let out = json!({
        "status": if passed { "ok" } else { "failed" },
        "command": "gradcheck",
        "seed": seed,
        "epsilon": epsilon,
        "tolerance": tolerance,
        "passed": passed,
        "checks": outcomes,
    });
    if passed {
        Ok(out)
    } else {
        Err(CliError::Check(out))
    }
}
