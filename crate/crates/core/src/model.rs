//! Graph classifiers: the topology-augmented GIN/attention model and the
//! GCN / GraphSAGE / GAT max-pool baselines.

use crate::graph::BatchedGraph;
use crate::nn::{
    self, softmax_ce_backward, softmax_rows, AttentionPool, BatchNorm, Dropout, GatConv, GcnConv, GinConv, Linear, MaxPool,
    Mode, Module, NnError, Parameter, Relu, SageConv,
};
use crate::rng::{self, STREAM_INIT};
use crate::topo::AUGMENTED_COLUMNS;
use crate::Tensor;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{model} expects node features of width {expected}, got {found}{hint}")]
    DimMismatch { model: ModelKind, expected: usize, found: usize, hint: &'static str },
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    BetterGnn,
    Gcn,
    Sage,
    Gat,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::BetterGnn, ModelKind::Gcn, ModelKind::Sage, ModelKind::Gat];

    /// Whether the model consumes topology-augmented node features.
    pub fn uses_augmented_features(self) -> bool {
        self == ModelKind::BetterGnn
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::BetterGnn => "better-gnn",
            ModelKind::Gcn => "gcn",
            ModelKind::Sage => "sage",
            ModelKind::Gat => "gat",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown model '{s}' (expected better-gnn, gcn, sage or gat)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Width of the dataset's node features before augmentation.
    pub raw_feat_dim: usize,
    pub hidden_dim: usize,
    pub dropout_rate: f64,
    /// Baselines only: append the root node's raw features to the pooled vector.
    pub concat_news: bool,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, raw_feat_dim: usize) -> Self {
        ModelConfig { kind, raw_feat_dim, hidden_dim: 128, dropout_rate: 0.5, concat_news: false }
    }

    /// Node-feature width the model accepts.
    pub fn input_dim(&self) -> usize {
        if self.kind.uses_augmented_features() {
            self.raw_feat_dim + AUGMENTED_COLUMNS
        } else {
            self.raw_feat_dim
        }
    }
}

/// GIN encoder, attention readout and a batch-normalised MLP head:
/// `H = ReLU(GIN(X, A))`, `z = AttnPool(H)`, `ŷ = softmax(head(z))`, with
/// head = linear → batchnorm → ReLU → dropout → linear(2).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BetterGnn {
    pub gin: GinConv,
    act: Relu,
    pub pool: AttentionPool,
    pub head_fc: Linear,
    pub head_bn: BatchNorm,
    head_act: Relu,
    pub head_dropout: Dropout,
    pub head_out: Linear,
    #[serde(skip)]
    last_alphas: Option<Vec<f64>>,
}

impl BetterGnn {
    pub fn new(input_dim: usize, hidden: usize, dropout_rate: f64, seed: u64) -> nn::Result<Self> {
        let mut rng = rng::rng_from(seed, &[STREAM_INIT]);
        Ok(BetterGnn {
            gin: GinConv::new("gin", input_dim, hidden, &mut rng),
            act: Relu::default(),
            pool: AttentionPool::new("pool", hidden, &mut rng),
            head_fc: Linear::new("head.fc", hidden, hidden, &mut rng),
            head_bn: BatchNorm::new("head.bn", hidden),
            head_act: Relu::default(),
            head_dropout: Dropout::new(dropout_rate)?,
            head_out: Linear::new("head.out", hidden, NUM_CLASSES, &mut rng),
            last_alphas: None,
        })
    }

    fn forward_logits(&mut self, batch: &BatchedGraph, mode: Mode, seed: u64) -> nn::Result<Tensor> {
        let h = self.act.forward(&self.gin.forward(&batch.features, &batch.adjacency)?);
        let (z, alphas) = self.pool.forward(&h, &batch.membership, batch.num_graphs())?;
        self.last_alphas = Some(alphas);
        let f = self.head_fc.forward(&z)?;
        let f = self.head_act.forward(&self.head_bn.forward(&f, mode)?);
        let f = self.head_dropout.forward(&f, mode, seed)?;
        self.head_out.forward(&f)
    }

    fn backward_logits(&mut self, d: &Tensor) -> nn::Result<()> {
        let d = self.head_out.backward(d)?;
        let d = self.head_dropout.backward(&d)?;
        let d = self.head_bn.backward(&self.head_act.backward(&d)?)?;
        let d = self.head_fc.backward(&d)?;
        let d = self.pool.backward(&d)?;
        self.gin.backward(&self.act.backward(&d)?)?;
        Ok(())
    }

    /// Attention weights of the most recent forward pass.
    pub fn last_attention(&self) -> Option<&[f64]> {
        self.last_alphas.as_deref()
    }
}

impl Module for BetterGnn {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut p = self.gin.parameters();
        p.extend(self.pool.parameters());
        p.extend(self.head_fc.parameters());
        p.extend(self.head_bn.parameters());
        p.extend(self.head_out.parameters());
        p
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.gin.parameters_mut();
        p.extend(self.pool.parameters_mut());
        p.extend(self.head_fc.parameters_mut());
        p.extend(self.head_bn.parameters_mut());
        p.extend(self.head_out.parameters_mut());
        p
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaselineConv {
    Gcn(GcnConv),
    Sage(SageConv),
    Gat(GatConv),
}

impl BaselineConv {
    fn forward(&mut self, x: &Tensor, adj: &crate::graph::Adjacency) -> nn::Result<Tensor> {
        match self {
            BaselineConv::Gcn(c) => c.forward(x, adj),
            BaselineConv::Sage(c) => c.forward(x, adj),
            BaselineConv::Gat(c) => c.forward(x, adj),
        }
    }

    fn backward(&mut self, d: &Tensor) -> nn::Result<Tensor> {
        match self {
            BaselineConv::Gcn(c) => c.backward(d),
            BaselineConv::Sage(c) => c.backward(d),
            BaselineConv::Gat(c) => c.backward(d),
        }
    }

    fn module(&self) -> &dyn Module {
        match self {
            BaselineConv::Gcn(c) => c,
            BaselineConv::Sage(c) => c,
            BaselineConv::Gat(c) => c,
        }
    }

    fn module_mut(&mut self) -> &mut dyn Module {
        match self {
            BaselineConv::Gcn(c) => c,
            BaselineConv::Sage(c) => c,
            BaselineConv::Gat(c) => c,
        }
    }
}

/// One convolution, rectifier, global max pool, optional root-feature
/// concatenation, and a linear classifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Baseline {
    pub conv: BaselineConv,
    act: Relu,
    pool: MaxPool,
    pub concat_news: bool,
    pub head: Linear,
}

impl Baseline {
    pub fn new(kind: ModelKind, input_dim: usize, hidden: usize, concat_news: bool, seed: u64) -> Self {
        let mut rng = rng::rng_from(seed, &[STREAM_INIT]);
        let conv = match kind {
            ModelKind::Gcn => BaselineConv::Gcn(GcnConv::new("conv", input_dim, hidden, &mut rng)),
            ModelKind::Sage => BaselineConv::Sage(SageConv::new("conv", input_dim, hidden, &mut rng)),
            ModelKind::Gat => BaselineConv::Gat(GatConv::new("conv", input_dim, hidden, &mut rng)),
            ModelKind::BetterGnn => panic!("better-gnn is not a baseline encoder"),
        };
        let head_in = if concat_news { hidden + input_dim } else { hidden };
        Baseline {
            conv,
            act: Relu::default(),
            pool: MaxPool::default(),
            concat_news,
            head: Linear::new("head", head_in, NUM_CLASSES, &mut rng),
        }
    }

    pub fn head_input_dim(&self) -> usize {
        self.head.in_dim()
    }

    fn forward_logits(&mut self, batch: &BatchedGraph) -> nn::Result<Tensor> {
        let h = self.act.forward(&self.conv.forward(&batch.features, &batch.adjacency)?);
        let mut z = self.pool.forward(&h, &batch.membership, batch.num_graphs())?;
        if self.concat_news {
            z = z.hstack(&batch.features.select_rows(&batch.roots));
        }
        self.head.forward(&z)
    }

    fn backward_logits(&mut self, d: &Tensor) -> nn::Result<()> {
        let mut d = self.head.backward(d)?;
        if self.concat_news {
            d = d.hsplit(self.pool_width()).0;
        }
        let d = self.pool.backward(&d)?;
        self.conv.backward(&self.act.backward(&d)?)?;
        Ok(())
    }

    fn pool_width(&self) -> usize {
        match &self.conv {
            BaselineConv::Gcn(c) => c.out_dim(),
            BaselineConv::Sage(c) => c.out_dim(),
            BaselineConv::Gat(c) => c.out_dim(),
        }
    }
}

impl Module for Baseline {
    fn parameters(&self) -> Vec<&Parameter> {
        let mut p = self.conv.module().parameters();
        p.extend(self.head.parameters());
        p
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.conv.module_mut().parameters_mut();
        p.extend(self.head.parameters_mut());
        p
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum Network {
    BetterGnn(BetterGnn),
    Baseline(Baseline),
}

/// A configured classifier. Forward passes return class probabilities
/// (`num_graphs x 2`, column 1 = fake); the logits gradient of the last
/// forward pass is back-propagated by [`Model::backward_labels`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub network: Network,
    #[serde(skip)]
    last_probs: Option<Tensor>,
}

impl Model {
    /// Fresh model with seeded Glorot initialisation.
    pub fn new(config: ModelConfig, seed: u64) -> nn::Result<Self> {
        let network = match config.kind {
            ModelKind::BetterGnn => {
                Network::BetterGnn(BetterGnn::new(config.input_dim(), config.hidden_dim, config.dropout_rate, seed)?)
            }
            kind => Network::Baseline(Baseline::new(kind, config.input_dim(), config.hidden_dim, config.concat_news, seed)),
        };
        Ok(Model { config, network, last_probs: None })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim()
    }

    fn check_input(&self, batch: &BatchedGraph) -> Result<()> {
        let expected = self.input_dim();
        let found = batch.feat_dim();
        if expected == found {
            return Ok(());
        }
        let hint = match (self.kind().uses_augmented_features(), found + AUGMENTED_COLUMNS == expected) {
            (true, true) => " (features are not topology-augmented)",
            (false, _) if found == expected + AUGMENTED_COLUMNS => " (baselines take raw, unaugmented features)",
            _ => "",
        };
        Err(ModelError::DimMismatch { model: self.kind(), expected, found, hint })
    }

    /// Class probabilities for every graph in the batch. `dropout_seed`
    /// fixes the dropout mask in train mode.
    pub fn forward(&mut self, batch: &BatchedGraph, mode: Mode, dropout_seed: u64) -> Result<Tensor> {
        self.check_input(batch)?;
        let logits = match &mut self.network {
            Network::BetterGnn(m) => m.forward_logits(batch, mode, dropout_seed)?,
            Network::Baseline(m) => m.forward_logits(batch)?,
        };
        let probs = softmax_rows(&logits);
        nn::check_finite("model output", &probs)?;
        self.last_probs = Some(probs.clone());
        Ok(probs)
    }

    /// Back-propagates an upstream gradient with respect to the logits.
    pub fn backward_logits(&mut self, d_logits: &Tensor) -> Result<()> {
        match &mut self.network {
            Network::BetterGnn(m) => m.backward_logits(d_logits)?,
            Network::Baseline(m) => m.backward_logits(d_logits)?,
        }
        Ok(())
    }

    /// Back-propagates the mean cross-entropy of the last forward pass.
    pub fn backward_labels(&mut self, labels: &[usize]) -> Result<()> {
        let probs = self.last_probs.take().ok_or(NnError::NoForwardPass("model"))?;
        let d = softmax_ce_backward(&probs, labels)?;
        self.backward_logits(&d)
    }

    /// Eval-mode probabilities; convenience for inference.
    pub fn predict(&mut self, batch: &BatchedGraph) -> Result<Tensor> {
        self.forward(batch, Mode::Eval, 0)
    }

    pub fn as_better_gnn(&self) -> Option<&BetterGnn> {
        match &self.network {
            Network::BetterGnn(m) => Some(m),
            Network::Baseline(_) => None,
        }
    }

    pub fn as_baseline(&self) -> Option<&Baseline> {
        match &self.network {
            Network::Baseline(m) => Some(m),
            Network::BetterGnn(_) => None,
        }
    }

    /// Batch-norm layers whose running statistics persist in checkpoints.
    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm> {
        match &mut self.network {
            Network::BetterGnn(m) => vec![&mut m.head_bn],
            Network::Baseline(_) => Vec::new(),
        }
    }
}

impl Module for Model {
    fn parameters(&self) -> Vec<&Parameter> {
        match &self.network {
            Network::BetterGnn(m) => m.parameters(),
            Network::Baseline(m) => m.parameters(),
        }
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        match &mut self.network {
            Network::BetterGnn(m) => m.parameters_mut(),
            Network::Baseline(m) => m.parameters_mut(),
        }
    }
}

/// Gradient-check objective: mean cross-entropy of an eval-mode model on a
/// fixed batch.
pub struct ModelObjective<'a> {
    pub model: &'a mut Model,
    pub batch: &'a BatchedGraph,
    pub labels: Vec<usize>,
}

impl<'a> ModelObjective<'a> {
    pub fn new(model: &'a mut Model, batch: &'a BatchedGraph) -> Self {
        let labels = batch.labels.iter().map(|&l| l as usize).collect();
        ModelObjective { model, batch, labels }
    }
}

impl nn::Objective for ModelObjective<'_> {
    fn loss(&mut self) -> nn::Result<f64> {
        let probs = self.model.forward(self.batch, Mode::Eval, 0).map_err(into_nn)?;
        nn::cross_entropy(&probs, &self.labels)
    }

    fn loss_and_backward(&mut self) -> nn::Result<f64> {
        let loss = self.loss()?;
        self.model.backward_labels(&self.labels).map_err(into_nn)?;
        Ok(loss)
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.model.parameters_mut()
    }
}

fn into_nn(e: ModelError) -> NnError {
    match e {
        ModelError::Nn(e) => e,
        ModelError::DimMismatch { expected, found, .. } => {
            NnError::ShapeMismatch { context: "model input", expected: (0, expected), found: (0, found) }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{batch_graphs, PropagationGraph};

    fn toy_graph(id: &str, n: usize, dim: usize, salt: f64) -> PropagationGraph {
        let edges: Vec<(usize, usize)> = (1..n).map(|v| ((v - 1) / 2, v)).collect();
        let feats = (0..n * dim).map(|i| ((i as f64 + salt) * 0.37).sin()).collect();
        PropagationGraph::new(id, n, edges, Tensor::from_vec(n, dim, feats).unwrap(), 0, (salt as u8) % 2).unwrap()
    }

    #[test]
    fn head_widths() {
        let mut cfg = ModelConfig::new(ModelKind::Gcn, 5);
        cfg.hidden_dim = 8;
        let m = Model::new(cfg.clone(), 0).unwrap();
        assert_eq!(m.as_baseline().unwrap().head_input_dim(), 8);
        cfg.concat_news = true;
        let m = Model::new(cfg, 0).unwrap();
        assert_eq!(m.as_baseline().unwrap().head_input_dim(), 8 + 5);
    }

    #[test]
    fn width_checks_are_hard_errors() {
        let g = toy_graph("a", 4, 3, 1.0);
        let raw = batch_graphs(std::slice::from_ref(&g)).unwrap();
        let aug = batch_graphs(&[crate::topo::augment_features(&g)]).unwrap();
        let mut better = Model::new(ModelConfig::new(ModelKind::BetterGnn, 3), 0).unwrap();
        assert!(matches!(better.predict(&raw), Err(ModelError::DimMismatch { expected: 5, found: 3, .. })));
        assert!(better.predict(&aug).is_ok());
        let mut gcn = Model::new(ModelConfig::new(ModelKind::Gcn, 3), 0).unwrap();
        assert!(matches!(gcn.predict(&aug), Err(ModelError::DimMismatch { .. })));
        assert!(gcn.predict(&raw).is_ok());
    }

    #[test]
    fn outputs_are_probabilities() {
        let gs: Vec<_> = (0..3).map(|i| crate::topo::augment_features(&toy_graph(&format!("g{i}"), 3 + i, 4, i as f64))).collect();
        let batch = batch_graphs(&gs).unwrap();
        let mut m = Model::new(ModelConfig::new(ModelKind::BetterGnn, 4), 5).unwrap();
        let p = m.forward(&batch, Mode::Train, 1).unwrap();
        assert_eq!(p.shape(), (3, 2));
        for r in p.row_iter() {
            assert!((r[0] + r[1] - 1.0).abs() < 1e-12);
        }
        let alphas = m.as_better_gnn().unwrap().last_attention().unwrap();
        assert_eq!(alphas.len(), batch.total_nodes);
    }

    #[test]
    fn backward_before_forward_fails() {
        let mut m = Model::new(ModelConfig::new(ModelKind::Sage, 4), 5).unwrap();
        assert!(matches!(m.backward_labels(&[0]), Err(ModelError::Nn(NnError::NoForwardPass(_)))));
    }

    #[test]
    fn kind_round_trips_through_strings() {
        for k in ModelKind::ALL {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
        }
        assert!("gin".parse::<ModelKind>().is_err());
    }
}
