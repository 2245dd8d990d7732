//! Feature-importance ablation: retrain on randomized topology (features
//! kept) and on Gaussian-noise features (topology kept), and compare test
//! accuracy with the untouched data.

use crate::graph::{GraphDataset, GraphError, PropagationGraph, Split};
use crate::rng::{self, STREAM_EDGES, STREAM_NOISE};
use crate::training::{self, evaluate_split, prepare_dataset, TrainConfig, TrainError};
use crate::Tensor;
use rand::seq::index;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt::Write as _;

/// How topology is randomized in the feature-only setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rewiring {
    /// Same edge count, pairs drawn uniformly without replacement.
    #[default]
    Uniform,
    /// Same degree sequence, by repeated double-edge swaps.
    DegreePreserving,
}

impl std::str::FromStr for Rewiring {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uniform" => Ok(Rewiring::Uniform),
            "degree-preserving" => Ok(Rewiring::DegreePreserving),
            _ => Err(format!("unknown rewiring '{s}' (expected uniform or degree-preserving)")),
        }
    }
}

/// Unordered pair `k` of `0..n(n-1)/2`, enumerated row by row.
fn pair_from_index(mut k: usize, n: usize) -> (usize, usize) {
    for u in 0..n {
        let row = n - 1 - u;
        if k < row {
            return (u, u + 1 + k);
        }
        k -= row;
    }
    unreachable!("pair index out of range")
}

/// Replaces the edges with as many pairs drawn uniformly without
/// replacement from all unordered non-self pairs.
pub fn randomize_edges(g: &PropagationGraph, seed: u64) -> Result<PropagationGraph, GraphError> {
    let n = g.num_nodes;
    let m = g.num_edges();
    let pairs = n * n.saturating_sub(1) / 2;
    if m > pairs {
        return Err(GraphError::TooDense { graph: g.id.clone(), edges: m, num_nodes: n });
    }
    let mut rng = rng::rng_from(seed, &[STREAM_EDGES]);
    let mut edges: Vec<(usize, usize)> = index::sample(&mut rng, pairs, m).into_iter().map(|k| pair_from_index(k, n)).collect();
    edges.sort_unstable();
    Ok(g.with_edges(edges))
}

/// Degree-preserving rewiring: `10·m` attempted double-edge swaps
/// `(a,b),(c,d) → (a,d),(c,b)`, each rejected if it would create a self-loop
/// or a duplicate edge.
pub fn rewire_preserving_degrees(g: &PropagationGraph, seed: u64) -> PropagationGraph {
    let mut rng = rng::rng_from(seed, &[STREAM_EDGES, 1]);
    let norm = |(u, v): (usize, usize)| (u.min(v), u.max(v));
    let mut edges: Vec<(usize, usize)> = g.edges.iter().copied().map(norm).collect();
    let mut present: HashSet<(usize, usize)> = edges.iter().copied().collect();
    let m = edges.len();
    if m >= 2 {
        for _ in 0..10 * m {
            let i = rng.random_range(0..m);
            let j = rng.random_range(0..m);
            let (a, b) = edges[i];
            let (c, d) = if rng.random::<bool>() { edges[j] } else { (edges[j].1, edges[j].0) };
            if i == j || a == d || c == b {
                continue;
            }
            let (e1, e2) = (norm((a, d)), norm((c, b)));
            if present.contains(&e1) || present.contains(&e2) {
                continue;
            }
            present.remove(&edges[i]);
            present.remove(&edges[j]);
            present.insert(e1);
            present.insert(e2);
            edges[i] = e1;
            edges[j] = e2;
        }
    }
    edges.sort_unstable();
    g.with_edges(edges)
}

/// Replaces every feature with an independent standard normal sample.
pub fn gaussian_features(g: &PropagationGraph, seed: u64) -> PropagationGraph {
    let mut rng = rng::rng_from(seed, &[STREAM_NOISE]);
    let (r, c) = g.features.shape();
    let data = (0..r * c).map(|_| rng.sample(StandardNormal)).collect();
    g.with_features(Tensor::from_vec(r, c, data).expect("sized"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub dataset_id: String,
    pub model: String,
    pub seed: u64,
    pub accuracy_original: f64,
    /// Topology randomized, features kept.
    pub accuracy_feature_only: f64,
    /// Features replaced by noise, topology kept.
    pub accuracy_structure_only: f64,
    /// `accuracy_original − accuracy_feature_only`
    pub degradation_structure: f64,
    /// `accuracy_original − accuracy_structure_only`
    pub degradation_features: f64,
}

pub const ABLATION_CSV_HEADER: &str = "dataset_id,model,seed,accuracy_original,accuracy_feature_only,\
accuracy_structure_only,degradation_structure,degradation_features";

impl AblationReport {
    pub fn new(dataset_id: &str, config: &TrainConfig, original: f64, feature_only: f64, structure_only: f64) -> Self {
        AblationReport {
            dataset_id: dataset_id.into(),
            model: config.model.as_str().into(),
            seed: config.seed,
            accuracy_original: original,
            accuracy_feature_only: feature_only,
            accuracy_structure_only: structure_only,
            degradation_structure: original - feature_only,
            degradation_features: original - structure_only,
        }
    }

    /// One CSV row matching [`ABLATION_CSV_HEADER`], without a newline.
    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{}",
            self.dataset_id,
            self.model,
            self.seed,
            self.accuracy_original,
            self.accuracy_feature_only,
            self.accuracy_structure_only,
            self.degradation_structure,
            self.degradation_features
        );
        s
    }
}

/// The three datasets of the protocol, all derived from the raw (unaugmented)
/// input: original, feature-only (rewired) and structure-only (noise).
/// Topology columns are computed last, so they follow the rewired edges in
/// the feature-only setting and the true edges in the structure-only one.
pub fn ablation_datasets(
    ds: &GraphDataset,
    config: &TrainConfig,
    rewiring: Rewiring,
) -> Result<[GraphDataset; 3], GraphError> {
    let seed = config.seed;
    let rewired = GraphDataset {
        graphs: ds
            .graphs
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let s = rng::derive_seed(seed, &[STREAM_EDGES, i as u64]);
                match rewiring {
                    Rewiring::Uniform => randomize_edges(g, s),
                    Rewiring::DegreePreserving => Ok(rewire_preserving_degrees(g, s)),
                }
            })
            .collect::<Result<_, _>>()?,
        splits: ds.splits.clone(),
    };
    let noised = GraphDataset {
        graphs: ds
            .graphs
            .iter()
            .enumerate()
            .map(|(i, g)| gaussian_features(g, rng::derive_seed(seed, &[STREAM_NOISE, i as u64])))
            .collect(),
        splits: ds.splits.clone(),
    };
    let kind = config.model;
    Ok([prepare_dataset(ds, kind), prepare_dataset(&rewired, kind), prepare_dataset(&noised, kind)])
}

/// Trains and tests one model per setting (three threads) with the same
/// configuration and seed. `ds` must be split and carry raw features.
pub fn run_ablation(
    ds: &GraphDataset,
    config: &TrainConfig,
    rewiring: Rewiring,
    dataset_id: &str,
) -> Result<AblationReport, TrainError> {
    let settings = ablation_datasets(ds, config, rewiring)?;
    let accuracies: Vec<Result<f64, TrainError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = settings
            .iter()
            .map(|d| {
                scope.spawn(move || {
                    let mut state = training::train(d, config)?;
                    Ok(evaluate_split(&mut state.best.model, d, Split::Test)?.accuracy)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("ablation worker panicked")).collect()
    });
    let mut acc = accuracies.into_iter();
    let (a, b, c) = (acc.next().expect("3")?, acc.next().expect("3")?, acc.next().expect("3")?);
    Ok(AblationReport::new(dataset_id, config, a, b, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::split_dataset;
    use crate::model::ModelKind;
    use crate::synth::{generate, SynthConfig};

    fn path_graph(n: usize) -> PropagationGraph {
        let edges = (1..n).map(|v| (v - 1, v)).collect();
        let features = Tensor::from_vec(n, 3, (0..3 * n).map(|k| k as f64 * 0.25).collect()).unwrap();
        PropagationGraph::new("p", n, edges, features, 0, 1).unwrap()
    }

    #[test]
    fn forced_triangle() {
        let tri = PropagationGraph::new("t", 3, vec![(0, 1), (1, 2), (0, 2)], Tensor::zeros(3, 1), 0, 0).unwrap();
        let out = randomize_edges(&tri, 9).unwrap();
        assert_eq!(out.edges, vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn randomized_tree_keeps_counts() {
        let g = path_graph(50);
        let out = randomize_edges(&g, 1).unwrap();
        out.validate().unwrap();
        assert_eq!(out.num_edges(), 49);
        assert_eq!(out.features, g.features);
        assert_eq!((out.root, out.label, out.num_nodes), (g.root, g.label, g.num_nodes));
        assert_eq!(out, randomize_edges(&g, 1).unwrap());
        assert_ne!(out.edges, randomize_edges(&g, 2).unwrap().edges);
    }

    #[test]
    fn too_dense_rejected() {
        let mut g = path_graph(3);
        g.edges = vec![(0, 1), (1, 2), (0, 2), (1, 0)];
        assert!(matches!(randomize_edges(&g, 0), Err(GraphError::TooDense { .. })));
    }

    #[test]
    fn pair_enumeration_is_bijective() {
        let n = 7;
        let pairs: HashSet<_> = (0..n * (n - 1) / 2).map(|k| pair_from_index(k, n)).collect();
        assert_eq!(pairs.len(), 21);
        assert!(pairs.iter().all(|&(u, v)| u < v && v < n));
    }

    #[test]
    fn degree_preserving_rewiring() {
        let ds = generate(&SynthConfig { graphs_per_class: 3, structure_signal: 0.5, ..SynthConfig::default() }).unwrap();
        for g in &ds.graphs {
            let out = rewire_preserving_degrees(g, 4);
            out.validate().unwrap();
            assert_eq!(out.adjacency().degrees(), g.adjacency().degrees());
        }
    }

    #[test]
    fn noise_features_keep_topology() {
        let g = path_graph(4);
        let out = gaussian_features(&g, 3);
        assert_eq!(out.edges, g.edges);
        assert_eq!(out.features.shape(), g.features.shape());
        assert_ne!(out.features, g.features);
        let big = PropagationGraph::new("b", 100, vec![], Tensor::zeros(100, 100), 0, 0).unwrap();
        let noise = gaussian_features(&big, 11);
        let mean = noise.features.data().iter().sum::<f64>() / 10_000.0;
        assert!(mean.abs() < 0.05, "{mean}");
    }

    #[test]
    fn report_deltas() {
        let r = AblationReport::new("d", &TrainConfig::default(), 0.9, 0.85, 0.5);
        assert_eq!(r.degradation_structure, 0.9 - 0.85);
        assert_eq!(r.degradation_features, 0.9 - 0.5);
        assert_eq!(r.csv_row().split(',').count(), ABLATION_CSV_HEADER.split(',').count());
    }

    #[test]
    fn settings_recompute_topology_columns() {
        let raw = generate(&SynthConfig { graphs_per_class: 4, ..SynthConfig::default() }).unwrap();
        let ds = split_dataset(&raw, (0.5, 0.25, 0.25), 1).unwrap();
        let cfg = TrainConfig { model: ModelKind::BetterGnn, ..TrainConfig::default() };
        let [orig, rewired, noised] = ablation_datasets(&ds, &cfg, Rewiring::Uniform).unwrap();
        for d in [&orig, &rewired, &noised] {
            assert!(d.graphs.iter().all(training::is_augmented));
            assert_eq!(d.splits, ds.splits);
        }
        // Structure-only keeps the true edges and hence the original topology columns.
        let w = orig.feat_dim().unwrap();
        for (a, b) in orig.graphs.iter().zip(&noised.graphs) {
            assert_eq!(a.edges, b.edges);
            for r in 0..a.num_nodes {
                assert_eq!(a.features.row(r)[w - 2..], b.features.row(r)[w - 2..]);
            }
        }
        for (a, b) in orig.graphs.iter().zip(&rewired.graphs) {
            assert_eq!(a.features.row(0)[..w - 2], b.features.row(0)[..w - 2]);
        }
    }

    #[test]
    fn small_ablation_runs() {
        let raw = generate(&SynthConfig { graphs_per_class: 10, ..SynthConfig::default() }).unwrap();
        let ds = split_dataset(&raw, (0.6, 0.2, 0.2), 2).unwrap();
        let cfg = TrainConfig { model: ModelKind::Gcn, hidden_dim: 8, epochs: 2, ..TrainConfig::default() };
        let r = run_ablation(&ds, &cfg, Rewiring::Uniform, "tiny").unwrap();
        for a in [r.accuracy_original, r.accuracy_feature_only, r.accuracy_structure_only] {
            assert!((0.0..=1.0).contains(&a));
        }
        assert_eq!(r, run_ablation(&ds, &cfg, Rewiring::Uniform, "tiny").unwrap());
    }
}
