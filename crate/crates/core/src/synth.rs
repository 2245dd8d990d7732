//! Seeded synthetic cascades with controllable class signal in topology
//! (wedge closure) and in node features (mean shift).

use crate::graph::{GraphDataset, PropagationGraph};
use crate::rng::{self, STREAM_SYNTH};
use crate::Tensor;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Feature coordinates that carry the class mean shift.
pub const SHIFTED_COORDS: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub graphs_per_class: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub feat_dim: usize,
    /// Added to the wedge-closure probability of fake cascades.
    pub structure_signal: f64,
    /// Mean of the first feature coordinates for fake cascades (real: 0).
    pub feature_signal: f64,
    /// Wedge-closure probability of real cascades.
    pub closure_base: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            graphs_per_class: 200,
            min_nodes: 10,
            max_nodes: 40,
            feat_dim: 16,
            structure_signal: 0.4,
            feature_signal: 1.0,
            closure_base: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::BadConfig(m));
        if self.min_nodes < 2 || self.max_nodes < self.min_nodes {
            return bad(format!("node range {}..={} must satisfy 2 <= min <= max", self.min_nodes, self.max_nodes));
        }
        if self.feat_dim == 0 {
            return bad("feat_dim must be positive".into());
        }
        for (name, v) in [("structure_signal", self.structure_signal), ("feature_signal", self.feature_signal)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.closure_base) {
            return bad(format!("closure_base must lie in [0, 1], got {}", self.closure_base));
        }
        Ok(())
    }

    /// Wedge-closure probability for a class, capped at 1.
    pub fn closure_probability(&self, label: u8) -> f64 {
        (self.closure_base + f64::from(label) * self.structure_signal).min(1.0)
    }
}

/// Graph `index` of the dataset: labels alternate real/fake, and each graph
/// draws from its own derived stream so graphs can be built independently.
pub fn generate_graph(config: &SynthConfig, index: usize) -> PropagationGraph {
    let label = (index % 2) as u8;
    let mut rng = rng::rng_from(config.seed, &[STREAM_SYNTH, index as u64]);
    let n = rng.random_range(config.min_nodes..=config.max_nodes);

    // Random recursive tree: node v attaches to a uniform earlier node.
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(n - 1);
    for v in 1..n {
        let parent = rng.random_range(0..v);
        children[parent].push(v);
        edges.push((parent, v));
    }
    // Every wedge of a tree is a pair of neighbours of its centre; each
    // endpoint pair has exactly one centre, so closures never duplicate.
    let p = config.closure_probability(label);
    let tree_neighbors: Vec<Vec<usize>> = (0..n)
        .map(|c| {
            let mut nb = children[c].clone();
            if c > 0 {
                nb.insert(0, edges[c - 1].0);
            }
            nb
        })
        .collect();
    for nb in &tree_neighbors {
        for (i, &a) in nb.iter().enumerate() {
            for &b in &nb[i + 1..] {
                if rng.random::<f64>() < p {
                    edges.push((a.min(b), a.max(b)));
                }
            }
        }
    }

    let shift = f64::from(label) * config.feature_signal;
    let d = config.feat_dim;
    let features = (0..n * d)
        .map(|k| {
            let z: f64 = rng.sample(StandardNormal);
            if k % d < SHIFTED_COORDS {
                z + shift
            } else {
                z
            }
        })
        .collect();
    let features = Tensor::from_vec(n, d, features).expect("sized");
    PropagationGraph::new(format!("synth-{index:05}"), n, edges, features, 0, label).expect("generated graph is valid")
}

/// `2 · graphs_per_class` cascades rooted at node 0, without a split.
pub fn generate(config: &SynthConfig) -> Result<GraphDataset, SynthError> {
    config.validate()?;
    let graphs = (0..2 * config.graphs_per_class).map(|i| generate_graph(config, i)).collect();
    Ok(GraphDataset::new(graphs).expect("generated dataset is valid"))
}
