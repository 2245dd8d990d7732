//! Node- and graph-level topological statistics, and feature augmentation.
//!
//! Degenerate conventions: a single-node graph has degree centrality 0 and
//! density 0; a node with fewer than two neighbours has clustering 0.

use crate::graph::{Adjacency, PropagationGraph};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest graph the exhaustive clustering oracle accepts.
pub const ORACLE_MAX_NODES: usize = 200;

/// Number of columns appended by [`augment_features`].
pub const AUGMENTED_COLUMNS: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopoError {
    #[error("graph has {num_nodes} nodes; the exhaustive oracle accepts at most {max}")]
    TooLarge { num_nodes: usize, max: usize },
}

/// The five graph-level statistics used by the topology analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopoSummary {
    pub graph_id: String,
    pub label: u8,
    pub avg_degree: f64,
    pub mean_degree_centrality: f64,
    pub mean_clustering: f64,
    pub density: f64,
    pub node_count: usize,
}

impl TopoSummary {
    /// Feature names in the fixed report order.
    pub const FEATURES: [&'static str; 5] =
        ["avg_degree", "mean_degree_centrality", "mean_clustering", "density", "node_count"];

    /// Feature values in [`TopoSummary::FEATURES`] order.
    pub fn values(&self) -> [f64; 5] {
        [self.avg_degree, self.mean_degree_centrality, self.mean_clustering, self.density, self.node_count as f64]
    }
}

/// `deg(v) / (n - 1)`.
pub fn degree_centrality(g: &PropagationGraph) -> Vec<f64> {
    degree_centrality_adj(&g.adjacency())
}

fn degree_centrality_adj(adj: &Adjacency) -> Vec<f64> {
    let n = adj.num_nodes();
    if n < 2 {
        return vec![0.0; n];
    }
    let denom = (n - 1) as f64;
    (0..n).map(|v| adj.degree(v) as f64 / denom).collect()
}

/// Triangle count through each node, by merging sorted neighbour lists of
/// `v` and each neighbour `u`. Every triangle at `v` is seen twice.
fn triangles_at(adj: &Adjacency, v: usize) -> usize {
    let nv = adj.neighbors(v);
    let mut twice = 0;
    for &u in nv {
        let nu = adj.neighbors(u);
        let (mut i, mut j) = (0, 0);
        while i < nv.len() && j < nu.len() {
            match nv[i].cmp(&nu[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    twice += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
    }
    twice / 2
}

fn clustering_from(triangles: usize, degree: usize) -> f64 {
    if degree < 2 {
        return 0.0;
    }
    2.0 * triangles as f64 / (degree * (degree - 1)) as f64
}

/// Fraction of each node's neighbour pairs that are themselves adjacent.
pub fn local_clustering(g: &PropagationGraph) -> Vec<f64> {
    local_clustering_adj(&g.adjacency())
}

fn local_clustering_adj(adj: &Adjacency) -> Vec<f64> {
    (0..adj.num_nodes()).map(|v| clustering_from(triangles_at(adj, v), adj.degree(v))).collect()
}

/// Reference clustering by exhaustive enumeration of all ordered triples
/// over a dense adjacency matrix. Cubic; intended for verification only.
pub fn clustering_oracle(g: &PropagationGraph) -> Result<Vec<f64>, TopoError> {
    let n = g.num_nodes;
    if n > ORACLE_MAX_NODES {
        return Err(TopoError::TooLarge { num_nodes: n, max: ORACLE_MAX_NODES });
    }
    let mut dense = vec![false; n * n];
    for &(u, v) in &g.edges {
        dense[u * n + v] = true;
        dense[v * n + u] = true;
    }
    let a = |i: usize, j: usize| dense[i * n + j];
    Ok((0..n)
        .map(|v| {
            let mut degree = 0usize;
            let mut linked_pairs = 0usize;
            for u in 0..n {
                if !a(v, u) {
                    continue;
                }
                degree += 1;
                for w in 0..n {
                    if w != u && a(v, w) && a(u, w) {
                        linked_pairs += 1;
                    }
                }
            }
            // Each triangle was counted as both (u, w) and (w, u).
            clustering_from(linked_pairs / 2, degree)
        })
        .collect())
}

/// `2m / (n(n - 1))`.
pub fn graph_density(g: &PropagationGraph) -> f64 {
    let n = g.num_nodes;
    if n < 2 {
        return 0.0;
    }
    2.0 * g.edges.len() as f64 / (n * (n - 1)) as f64
}

/// `2m / n`.
pub fn average_degree(g: &PropagationGraph) -> f64 {
    if g.num_nodes == 0 {
        return 0.0;
    }
    2.0 * g.edges.len() as f64 / g.num_nodes as f64
}

/// Appends `[degree_centrality | local_clustering]` to every feature row.
/// The original columns are copied bit-for-bit.
pub fn augment_features(g: &PropagationGraph) -> PropagationGraph {
    let adj = g.adjacency();
    let dc = degree_centrality_adj(&adj);
    let cc = local_clustering_adj(&adj);
    let extra = Tensor::from_vec(g.num_nodes, AUGMENTED_COLUMNS, dc.into_iter().zip(cc).flat_map(|(d, c)| [d, c]).collect())
        .expect("two columns per node");
    g.with_features(g.features.hstack(&extra))
}

pub fn summarize(g: &PropagationGraph) -> TopoSummary {
    let adj = g.adjacency();
    let mean = |v: Vec<f64>| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    TopoSummary {
        graph_id: g.id.clone(),
        label: g.label,
        avg_degree: average_degree(g),
        mean_degree_centrality: mean(degree_centrality_adj(&adj)),
        mean_clustering: mean(local_clustering_adj(&adj)),
        density: graph_density(g),
        node_count: g.num_nodes,
    }
}
