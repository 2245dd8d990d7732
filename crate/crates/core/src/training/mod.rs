//! Mini-batch training with Adam, best-on-validation model selection,
//! resumable checkpoints and evaluation.

mod adam;
pub mod metrics;

pub use adam::{adam_step, BETA1, BETA2, EPSILON as ADAM_EPSILON};
pub use metrics::{accuracy, macro_f1, predict_label, roc_auc, ClassMetrics, Confusion, EvalReport};

use crate::graph::{batch_graphs, GraphDataset, GraphError, PropagationGraph, Split};
use crate::model::{Model, ModelConfig, ModelError, ModelKind};
use crate::nn::{cross_entropy, Mode, Module};
use crate::rng::{self, STREAM_DROPOUT, STREAM_SHUFFLE};
use crate::topo::{augment_features, degree_centrality, local_clustering, AUGMENTED_COLUMNS};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_FORMAT: &str = "topognn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("the {} split is empty", .0.as_str())]
    EmptySplit(Split),
    #[error("no graphs to evaluate")]
    NoGraphs,
    #[error("dataset has no train/val/test assignment")]
    Unsplit,
    #[error("parameter {0} has no gradient; run a backward pass before stepping")]
    NoGradient(String),
    #[error("graph {0}: node features are not topology-augmented")]
    NotAugmented(String),
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<crate::nn::NnError> for TrainError {
    fn from(e: crate::nn::NnError) -> Self {
        TrainError::Model(e.into())
    }
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub hidden_dim: usize,
    pub dropout_rate: f64,
    pub concat_news: bool,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::BetterGnn,
            hidden_dim: 128,
            dropout_rate: 0.5,
            concat_news: false,
            learning_rate: 1e-3,
            weight_decay: 5e-4,
            batch_size: 64,
            epochs: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TrainError::BadConfig(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be finite and >= 0, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if self.batch_size == 0 || self.hidden_dim == 0 || self.epochs == 0 {
            return bad("batch_size, hidden_dim and epochs must be positive".into());
        }
        Ok(())
    }

    /// Model configuration for node features of width `input_dim`.
    pub fn model_config(&self, input_dim: usize) -> Result<ModelConfig> {
        let raw = if self.model.uses_augmented_features() {
            input_dim.checked_sub(AUGMENTED_COLUMNS).ok_or_else(|| {
                TrainError::BadConfig(format!("{} needs at least {AUGMENTED_COLUMNS} feature columns", self.model))
            })?
        } else {
            input_dim
        };
        let mut cfg = ModelConfig::new(self.model, raw);
        cfg.hidden_dim = self.hidden_dim;
        cfg.dropout_rate = self.dropout_rate;
        cfg.concat_news = self.concat_news;
        Ok(cfg)
    }
}

/// Augments the dataset's node features when `kind` consumes topology
/// columns; returns it unchanged otherwise.
pub fn prepare_dataset(ds: &GraphDataset, kind: ModelKind) -> GraphDataset {
    if kind.uses_augmented_features() {
        ds.map_graphs(augment_features)
    } else {
        ds.clone()
    }
}

/// True when the last two feature columns equal the graph's degree
/// centrality and clustering coefficient bit for bit.
pub fn is_augmented(g: &PropagationGraph) -> bool {
    let d = g.feat_dim();
    if d < AUGMENTED_COLUMNS {
        return false;
    }
    let (dc, cc) = (degree_centrality(g), local_clustering(g));
    (0..g.num_nodes).all(|v| {
        g.features.get(v, d - 2).to_bits() == dc[v].to_bits() && g.features.get(v, d - 1).to_bits() == cc[v].to_bits()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
    pub val_auc: f64,
}

pub const EPOCH_LOG_HEADER: &str = "epoch,train_loss,val_accuracy,val_macro_f1,val_auc";

pub fn epoch_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from(EPOCH_LOG_HEADER);
    out.push('\n');
    for e in log {
        let _ = writeln!(out, "{},{},{},{},{}", e.epoch, e.train_loss, e.val_accuracy, e.val_macro_f1, e.val_auc);
    }
    out
}

/// Model weights, optimizer moments and batch-norm statistics together with
/// the bookkeeping needed to resume training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub epochs_completed: usize,
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
    pub model: Model,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| TrainError::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Checkpoint> {
        let ck: Checkpoint = serde_json::from_str(s).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(TrainError::Checkpoint(format!("not a checkpoint (format '{}')", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(TrainError::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| TrainError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let s = std::fs::read_to_string(path).map_err(|e| TrainError::Checkpoint(format!("{}: {e}", path.display())))?;
        Checkpoint::from_json(&s)
    }
}

/// Everything produced by a training run; also the state a run resumes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainState {
    /// Parameters of the epoch with the highest validation macro-F1 (earliest on ties).
    pub best: Checkpoint,
    /// Parameters after the last completed epoch.
    pub last: Checkpoint,
    pub log: Vec<EpochLog>,
}

impl TrainState {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| TrainError::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<TrainState> {
        let st: TrainState = serde_json::from_str(s).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        // Re-run the header checks.
        Checkpoint::from_json(&st.last.to_json()?)?;
        Ok(st)
    }
}

/// Train/val graphs after checking the dataset matches the configuration.
fn training_splits<'a>(
    ds: &'a GraphDataset,
    config: &TrainConfig,
) -> Result<(Vec<&'a PropagationGraph>, Vec<&'a PropagationGraph>)> {
    config.validate()?;
    ds.validate()?;
    if !ds.is_split() {
        return Err(TrainError::Unsplit);
    }
    let train = ds.split_graphs(Split::Train);
    let val = ds.split_graphs(Split::Val);
    if train.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit(Split::Val));
    }
    if config.model.uses_augmented_features() {
        if let Some(g) = ds.graphs.iter().find(|g| !is_augmented(g)) {
            return Err(TrainError::NotAugmented(g.id.clone()));
        }
    }
    Ok((train, val))
}

/// Trains a fresh model on the train split of a prepared dataset (node
/// features augmented iff the model kind requires it) and selects the epoch
/// with the best validation macro-F1.
pub fn train(ds: &GraphDataset, config: &TrainConfig) -> Result<TrainState> {
    let (train_graphs, val_graphs) = training_splits(ds, config)?;
    let model_config = config.model_config(ds.feat_dim().unwrap_or(0))?;
    let model = Model::new(model_config, config.seed)?;
    let start = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: config.clone(),
        epochs_completed: 0,
        best_epoch: 0,
        best_val_macro_f1: f64::NEG_INFINITY,
        model,
    };
    run_epochs(start, None, Vec::new(), &train_graphs, &val_graphs, config)
}

/// Continues a run up to `config.epochs` total epochs. Resuming after `k`
/// epochs reproduces an uninterrupted run exactly, provided the dataset and
/// every setting except `epochs` are unchanged.
pub fn resume(ds: &GraphDataset, config: &TrainConfig, state: TrainState) -> Result<TrainState> {
    let (train_graphs, val_graphs) = training_splits(ds, config)?;
    let prev = &state.last.config;
    if (TrainConfig { epochs: config.epochs, ..prev.clone() }) != *config {
        return Err(TrainError::BadConfig("only the epoch count may change when resuming".into()));
    }
    if state.last.epochs_completed > config.epochs {
        return Err(TrainError::BadConfig(format!(
            "checkpoint already has {} epochs, more than the requested {}",
            state.last.epochs_completed, config.epochs
        )));
    }
    let TrainState { best, last, log } = state;
    run_epochs(last, Some(best), log, &train_graphs, &val_graphs, config)
}

/// Splits a shuffled index order into batches, folding a trailing
/// single-graph batch into its predecessor (train-mode batch norm needs at
/// least two rows).
fn batch_ranges(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = (0..n).step_by(batch_size).map(|s| s..(s + batch_size).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let tail = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").end = tail.end;
    }
    out
}

fn run_epochs(
    mut current: Checkpoint,
    mut best: Option<Checkpoint>,
    mut log: Vec<EpochLog>,
    train_graphs: &[&PropagationGraph],
    val_graphs: &[&PropagationGraph],
    config: &TrainConfig,
) -> Result<TrainState> {
    current.config = config.clone();
    let seed = config.seed;
    for epoch in current.epochs_completed..config.epochs {
        let mut order: Vec<usize> = (0..train_graphs.len()).collect();
        order.shuffle(&mut rng::rng_from(seed, &[STREAM_SHUFFLE, epoch as u64]));
        let mut loss_sum = 0.0;
        for (b, range) in batch_ranges(order.len(), config.batch_size).into_iter().enumerate() {
            let members: Vec<&PropagationGraph> = order[range].iter().map(|&i| train_graphs[i]).collect();
            let batch = batch_graphs(&members)?;
            let labels: Vec<usize> = batch.labels.iter().map(|&l| l as usize).collect();
            let model = &mut current.model;
            model.zero_grad();
            let dropout_seed = rng::derive_seed(seed, &[STREAM_DROPOUT, epoch as u64, b as u64]);
            let probs = model.forward(&batch, Mode::Train, dropout_seed)?;
            loss_sum += cross_entropy(&probs, &labels)? * labels.len() as f64;
            model.backward_labels(&labels)?;
            adam_step(model.parameters_mut(), config.learning_rate, config.weight_decay)?;
        }
        let val = evaluate(&mut current.model, val_graphs)?;
        current.epochs_completed = epoch + 1;
        log.push(EpochLog {
            epoch: epoch + 1,
            train_loss: loss_sum / train_graphs.len() as f64,
            val_accuracy: val.accuracy,
            val_macro_f1: val.macro_f1,
            val_auc: val.auc,
        });
        if best.as_ref().is_none_or(|b| val.macro_f1 > b.best_val_macro_f1) {
            current.best_epoch = epoch + 1;
            current.best_val_macro_f1 = val.macro_f1;
            best = Some(current.clone());
        } else if let Some(b) = &best {
            current.best_epoch = b.best_epoch;
            current.best_val_macro_f1 = b.best_val_macro_f1;
        }
    }
    let mut best = best.ok_or_else(|| TrainError::BadConfig("no epochs were run".into()))?;
    best.config = config.clone();
    Ok(TrainState { best, last: current, log })
}

/// Graphs per forward pass during evaluation. Eval-mode outputs do not
/// depend on how graphs are grouped.
const EVAL_BATCH: usize = 256;

/// Fake-class probability of every graph, in input order.
pub fn predict_scores(model: &mut Model, graphs: &[&PropagationGraph]) -> Result<Vec<f64>> {
    let mut scores = Vec::with_capacity(graphs.len());
    for chunk in graphs.chunks(EVAL_BATCH) {
        let batch = batch_graphs(chunk)?;
        let probs = model.forward(&batch, Mode::Eval, 0)?;
        scores.extend(probs.row_iter().map(|r| r[1]));
    }
    Ok(scores)
}

/// Eval-mode metrics on the given graphs.
pub fn evaluate(model: &mut Model, graphs: &[&PropagationGraph]) -> Result<EvalReport> {
    if graphs.is_empty() {
        return Err(TrainError::NoGraphs);
    }
    let scores = predict_scores(model, graphs)?;
    let labels: Vec<u8> = graphs.iter().map(|g| g.label).collect();
    Ok(EvalReport::from_scores(&labels, &scores))
}

/// Eval-mode metrics on one split of a prepared dataset.
pub fn evaluate_split(model: &mut Model, ds: &GraphDataset, split: Split) -> Result<EvalReport> {
    if !ds.is_split() {
        return Err(TrainError::Unsplit);
    }
    let graphs = ds.split_graphs(split);
    if graphs.is_empty() {
        return Err(TrainError::EmptySplit(split));
    }
    evaluate(model, &graphs)
}
