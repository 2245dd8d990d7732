//! Finite-difference gradient checks for every layer and every model on a
//! small deterministic toy batch.
//!
//! Layer probes treat the layer input as an extra parameter, so the check
//! covers input gradients as well as weight gradients. The scalar being
//! differentiated is `Σ R ⊙ layer(X)` for a fixed random `R`.

use crate::graph::{batch_graphs, Adjacency, BatchedGraph, PropagationGraph};
use crate::model::{Model, ModelConfig, ModelKind, ModelObjective};
use crate::nn::{
    self, grad_check, AttentionPool, BatchNorm, GatConv, GcnConv, GinConv, GradCheckReport, Linear, MaxPool, Mlp, Mode,
    Module, Objective, Parameter,
};
use crate::rng::{self, Rng};
use crate::topo::augment_features;
use crate::Tensor;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_SAMPLES: usize = 100;

const TOY_FEAT_DIM: usize = 4;
const TOY_HIDDEN: usize = 6;

fn normal_tensor(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()).expect("sized")
}

/// Four small graphs (sizes 3..=6) with one triangle each and normal features.
pub fn toy_graphs(seed: u64) -> Vec<PropagationGraph> {
    let mut rng = rng::rng_from(seed, &[0x70]);
    (0..4)
        .map(|k| {
            let n = 3 + k;
            let mut edges: Vec<(usize, usize)> = (1..n).map(|v| ((v - 1) / 2, v)).collect();
            edges.push((1, 2));
            let features = normal_tensor(n, TOY_FEAT_DIM, &mut rng);
            PropagationGraph::new(format!("toy{k}"), n, edges, features, 0, (k % 2) as u8).expect("valid toy graph")
        })
        .collect()
}

pub fn toy_batch(seed: u64, augmented: bool) -> BatchedGraph {
    let gs = toy_graphs(seed);
    let gs: Vec<_> = if augmented { gs.iter().map(augment_features).collect() } else { gs };
    batch_graphs(&gs).expect("uniform toy batch")
}

enum Probe {
    Linear(Linear),
    Mlp(Mlp),
    Gin(GinConv),
    Gcn(GcnConv),
    Sage(crate::nn::SageConv),
    Gat(GatConv),
    AttentionPool(AttentionPool),
    MaxPool(MaxPool),
    BatchNorm(BatchNorm, Mode),
}

/// A single layer wrapped as a scalar objective of its weights and input.
pub struct LayerObjective {
    probe: Probe,
    input: Parameter,
    adj: Adjacency,
    membership: Vec<usize>,
    num_graphs: usize,
    projection: Tensor,
}

impl LayerObjective {
    fn new(probe: Probe, batch: &BatchedGraph, input: Tensor, rng: &mut Rng) -> nn::Result<Self> {
        let mut obj = LayerObjective {
            probe,
            input: Parameter::new("input", input, false),
            adj: batch.adjacency.clone(),
            membership: batch.membership.clone(),
            num_graphs: batch.num_graphs(),
            projection: Tensor::zeros(0, 0),
        };
        let out = obj.output()?;
        obj.projection = normal_tensor(out.rows(), out.cols(), rng);
        Ok(obj)
    }

    fn output(&mut self) -> nn::Result<Tensor> {
        let x = &self.input.value;
        match &mut self.probe {
            Probe::Linear(l) => l.forward(x),
            Probe::Mlp(m) => m.forward(x),
            Probe::Gin(c) => c.forward(x, &self.adj),
            Probe::Gcn(c) => c.forward(x, &self.adj),
            Probe::Sage(c) => c.forward(x, &self.adj),
            Probe::Gat(c) => c.forward(x, &self.adj),
            Probe::AttentionPool(p) => Ok(p.forward(x, &self.membership, self.num_graphs)?.0),
            Probe::MaxPool(p) => p.forward(x, &self.membership, self.num_graphs),
            Probe::BatchNorm(b, mode) => b.forward(x, *mode),
        }
    }

    fn backward(&mut self, d: &Tensor) -> nn::Result<Tensor> {
        match &mut self.probe {
            Probe::Linear(l) => l.backward(d),
            Probe::Mlp(m) => m.backward(d),
            Probe::Gin(c) => c.backward(d),
            Probe::Gcn(c) => c.backward(d),
            Probe::Sage(c) => c.backward(d),
            Probe::Gat(c) => c.backward(d),
            Probe::AttentionPool(p) => p.backward(d),
            Probe::MaxPool(p) => p.backward(d),
            Probe::BatchNorm(b, _) => b.backward(d),
        }
    }
}

fn probe_module(probe: &mut Probe) -> Option<&mut dyn Module> {
    Some(match probe {
        Probe::Linear(l) => l,
        Probe::Mlp(m) => m,
        Probe::Gin(c) => c,
        Probe::Gcn(c) => c,
        Probe::Sage(c) => c,
        Probe::Gat(c) => c,
        Probe::AttentionPool(p) => p,
        Probe::BatchNorm(b, _) => b,
        Probe::MaxPool(_) => return None,
    })
}

impl Objective for LayerObjective {
    fn loss(&mut self) -> nn::Result<f64> {
        let y = self.output()?;
        Ok(y.data().iter().zip(self.projection.data()).map(|(a, b)| a * b).sum())
    }

    fn loss_and_backward(&mut self) -> nn::Result<f64> {
        let loss = self.loss()?;
        let d = self.projection.clone();
        let dx = self.backward(&d)?;
        self.input.accumulate(&dx);
        Ok(loss)
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut params = probe_module(&mut self.probe).map(|m| m.parameters_mut()).unwrap_or_default();
        params.push(&mut self.input);
        params
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub report: Option<GradCheckReport>,
    pub error: Option<String>,
}

impl CheckOutcome {
    fn from_result(name: &str, r: nn::Result<GradCheckReport>) -> Self {
        match r {
            Ok(report) => CheckOutcome { name: name.into(), passed: true, report: Some(report), error: None },
            Err(e) => CheckOutcome { name: name.into(), passed: false, report: None, error: Some(e.to_string()) },
        }
    }
}

/// Gradient check of each layer type in isolation.
pub fn layer_checks(seed: u64, epsilon: f64, tolerance: f64) -> Vec<CheckOutcome> {
    let batch = toy_batch(seed, false);
    let mut rng = rng::rng_from(seed, &[0x71]);
    let n = batch.total_nodes;
    let (d, h) = (TOY_FEAT_DIM, TOY_HIDDEN);

    let mut eval_bn = BatchNorm::new("bn", h);
    eval_bn.running_mean = (0..h).map(|_| rng.sample(StandardNormal)).collect();
    eval_bn.running_var = (0..h).map(|_| rng.random_range(0.5..2.0)).collect();
    eval_bn.gamma.value = normal_tensor(1, h, &mut rng);
    let mut train_bn = eval_bn.clone();
    train_bn.beta.value = normal_tensor(1, h, &mut rng);

    let probes: Vec<(&str, Probe, Tensor)> = vec![
        ("linear", Probe::Linear(Linear::new("linear", d, h, &mut rng)), normal_tensor(n, d, &mut rng)),
        ("mlp", Probe::Mlp(Mlp::new("mlp", &[d, h, h], &mut rng)), normal_tensor(n, d, &mut rng)),
        ("gin", Probe::Gin(GinConv::new("gin", d, h, &mut rng)), normal_tensor(n, d, &mut rng)),
        ("gcn", Probe::Gcn(GcnConv::new("gcn", d, h, &mut rng)), normal_tensor(n, d, &mut rng)),
        ("sage", Probe::Sage(crate::nn::SageConv::new("sage", d, h, &mut rng)), normal_tensor(n, d, &mut rng)),
        ("gat", Probe::Gat(GatConv::new("gat", d, h, &mut rng)), normal_tensor(n, d, &mut rng)),
        ("attention_pool", Probe::AttentionPool(AttentionPool::new("pool", h, &mut rng)), normal_tensor(n, h, &mut rng)),
        ("global_max_pool", Probe::MaxPool(MaxPool::default()), normal_tensor(n, h, &mut rng)),
        ("batchnorm_eval", Probe::BatchNorm(eval_bn, Mode::Eval), normal_tensor(batch.num_graphs(), h, &mut rng)),
        ("batchnorm_train", Probe::BatchNorm(train_bn, Mode::Train), normal_tensor(batch.num_graphs(), h, &mut rng)),
    ];

    probes
        .into_iter()
        .enumerate()
        .map(|(i, (name, probe, input))| {
            let result = LayerObjective::new(probe, &batch, input, &mut rng)
                .and_then(|mut obj| grad_check(&mut obj, epsilon, tolerance, DEFAULT_SAMPLES, rng::derive_seed(seed, &[i as u64])));
            CheckOutcome::from_result(name, result)
        })
        .collect()
}

/// Toy-sized model with dropout disabled and non-trivial running statistics,
/// so that the eval-mode forward pass is a smooth deterministic function.
pub fn toy_model(kind: ModelKind, concat_news: bool, seed: u64) -> Model {
    let mut cfg = ModelConfig::new(kind, TOY_FEAT_DIM);
    cfg.hidden_dim = TOY_HIDDEN;
    cfg.dropout_rate = 0.0;
    cfg.concat_news = concat_news;
    let mut model = Model::new(cfg, seed).expect("valid toy config");
    let mut rng = rng::rng_from(seed, &[0x72]);
    for bn in model.batch_norms_mut() {
        bn.running_mean = (0..bn.dim()).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
        bn.running_var = (0..bn.dim()).map(|_| rng.random_range(0.5..2.0)).collect();
    }
    model
}

/// Gradient check of the full models (cross-entropy loss, eval mode).
pub fn model_checks(seed: u64, epsilon: f64, tolerance: f64) -> Vec<CheckOutcome> {
    let variants: [(&str, ModelKind, bool); 5] = [
        ("model:better-gnn", ModelKind::BetterGnn, false),
        ("model:gcn", ModelKind::Gcn, false),
        ("model:sage", ModelKind::Sage, false),
        ("model:gat", ModelKind::Gat, false),
        ("model:gcn+news", ModelKind::Gcn, true),
    ];
    variants
        .iter()
        .enumerate()
        .map(|(i, &(name, kind, concat))| {
            let mut model = toy_model(kind, concat, seed);
            let batch = toy_batch(seed, kind.uses_augmented_features());
            let mut obj = ModelObjective::new(&mut model, &batch);
            let r = grad_check(&mut obj, epsilon, tolerance, DEFAULT_SAMPLES, rng::derive_seed(seed, &[100 + i as u64]));
            CheckOutcome::from_result(name, r)
        })
        .collect()
}

/// Layer checks followed by model checks.
pub fn full_suite(seed: u64, epsilon: f64, tolerance: f64) -> Vec<CheckOutcome> {
    let mut out = layer_checks(seed, epsilon, tolerance);
    out.extend(model_checks(seed, epsilon, tolerance));
    out
}
