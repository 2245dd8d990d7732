//! Propagation graphs, datasets, batching and dataset splitting.

use crate::rng::{self, STREAM_SPLIT};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph {graph}: edge ({u}, {v}) references a node outside 0..{num_nodes}")]
    IndexOutOfRange { graph: String, u: usize, v: usize, num_nodes: usize },
    #[error("graph {graph}: root {root} is outside 0..{num_nodes}")]
    RootOutOfRange { graph: String, root: usize, num_nodes: usize },
    #[error("graph {graph}: self-loop on node {node}")]
    SelfLoop { graph: String, node: usize },
    #[error("graph {graph}: duplicate edge ({u}, {v})")]
    DuplicateEdge { graph: String, u: usize, v: usize },
    #[error("graph {graph}: feature row {row} {reason}")]
    RaggedFeatureMatrix { graph: String, row: usize, reason: String },
    #[error("graph {graph}: label {label} is not 0 (real) or 1 (fake)")]
    BadLabel { graph: String, label: u8 },
    #[error("graph {graph}: a graph needs at least one node")]
    EmptyGraph { graph: String },
    #[error("node {node} is outside 0..{num_nodes}")]
    NodeOutOfRange { node: usize, num_nodes: usize },
    #[error("cannot batch an empty list of graphs")]
    EmptyBatch,
    #[error("graph {graph} has feature width {found}, expected {expected}")]
    FeatureDimMismatch { graph: String, expected: usize, found: usize },
    #[error("split fractions {0:?} must be positive and sum to 1")]
    BadFractions((f64, f64, f64)),
    #[error("class {0} is absent from the dataset or its train split")]
    ClassMissing(u8),
    #[error("duplicate graph id {0}")]
    DuplicateGraphId(String),
    #[error("split map does not match the dataset: {0}")]
    BadSplits(String),
    #[error("graph {graph}: {edges} edges cannot fit in a simple graph on {num_nodes} nodes")]
    TooDense { graph: String, edges: usize, num_nodes: usize },
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Class label of a cascade.
pub const REAL: u8 = 0;
pub const FAKE: u8 = 1;

/// One news cascade: users who shared an item, connected by retweets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationGraph {
    pub id: String,
    pub num_nodes: usize,
    /// Undirected edges, each stored once in the orientation it was given.
    pub edges: Vec<(usize, usize)>,
    /// `num_nodes x feat_dim`.
    pub features: Tensor,
    /// The news node.
    pub root: usize,
    pub label: u8,
}

impl PropagationGraph {
    /// Builds a graph and validates it.
    pub fn new(
        id: impl Into<String>,
        num_nodes: usize,
        edges: Vec<(usize, usize)>,
        features: Tensor,
        root: usize,
        label: u8,
    ) -> Result<Self> {
        let g = PropagationGraph { id: id.into(), num_nodes, edges, features, root, label };
        g.validate()?;
        Ok(g)
    }

    pub fn feat_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Checks every structural invariant, reporting the first offending item.
    pub fn validate(&self) -> Result<()> {
        let graph = || self.id.clone();
        if self.num_nodes == 0 {
            return Err(GraphError::EmptyGraph { graph: graph() });
        }
        if self.label > 1 {
            return Err(GraphError::BadLabel { graph: graph(), label: self.label });
        }
        if self.root >= self.num_nodes {
            return Err(GraphError::RootOutOfRange { graph: graph(), root: self.root, num_nodes: self.num_nodes });
        }
        let mut seen = HashSet::with_capacity(self.edges.len());
        for &(u, v) in &self.edges {
            if u >= self.num_nodes || v >= self.num_nodes {
                return Err(GraphError::IndexOutOfRange { graph: graph(), u, v, num_nodes: self.num_nodes });
            }
            if u == v {
                return Err(GraphError::SelfLoop { graph: graph(), node: u });
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(GraphError::DuplicateEdge { graph: graph(), u, v });
            }
        }
        if self.features.rows() != self.num_nodes {
            let row = self.features.rows().min(self.num_nodes);
            return Err(GraphError::RaggedFeatureMatrix {
                graph: graph(),
                row,
                reason: format!("count is {}, expected {}", self.features.rows(), self.num_nodes),
            });
        }
        if let Some(row) = self.features.row_iter().position(|r| r.iter().any(|x| !x.is_finite())) {
            return Err(GraphError::RaggedFeatureMatrix { graph: graph(), row, reason: "contains a non-finite value".into() });
        }
        Ok(())
    }

    /// Sorted, duplicate-free neighbours of `v`.
    pub fn neighbors(&self, v: usize) -> Result<Vec<usize>> {
        if v >= self.num_nodes {
            return Err(GraphError::NodeOutOfRange { node: v, num_nodes: self.num_nodes });
        }
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| if a == v { Some(b) } else if b == v { Some(a) } else { None })
            .collect();
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    pub fn adjacency(&self) -> Adjacency {
        Adjacency::from_edges(self.num_nodes, &self.edges)
    }

    /// Copy with a different feature matrix; topology, label and root are kept.
    pub fn with_features(&self, features: Tensor) -> PropagationGraph {
        PropagationGraph { features, ..self.clone_topology() }
    }

    /// Copy with a different edge list; features, label and root are kept.
    pub fn with_edges(&self, edges: Vec<(usize, usize)>) -> PropagationGraph {
        PropagationGraph { edges, ..self.clone() }
    }

    fn clone_topology(&self) -> PropagationGraph {
        PropagationGraph {
            id: self.id.clone(),
            num_nodes: self.num_nodes,
            edges: self.edges.clone(),
            features: Tensor::zeros(0, 0),
            root: self.root,
            label: self.label,
        }
    }
}

/// Compressed sparse row adjacency of an undirected graph. Every neighbour
/// list is sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Adjacency {
    /// Assumes edges are in range; duplicates are merged.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Adjacency {
        let mut lists = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            lists[u].push(v);
            lists[v].push(u);
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut targets = Vec::with_capacity(2 * edges.len());
        offsets.push(0);
        for mut l in lists {
            l.sort_unstable();
            l.dedup();
            targets.extend(l);
            offsets.push(targets.len());
        }
        Adjacency { offsets, targets }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes()).map(|v| self.degree(v)).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}' (expected train, val or test)")),
        }
    }
}

/// A collection of cascades with uniform feature width and an optional split
/// assignment (empty map = not yet split).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GraphDataset {
    pub graphs: Vec<PropagationGraph>,
    pub splits: BTreeMap<String, Split>,
}

impl GraphDataset {
    pub fn new(graphs: Vec<PropagationGraph>) -> Result<Self> {
        let ds = GraphDataset { graphs, splits: BTreeMap::new() };
        ds.validate()?;
        Ok(ds)
    }

    pub fn feat_dim(&self) -> Option<usize> {
        self.graphs.first().map(PropagationGraph::feat_dim)
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn is_split(&self) -> bool {
        !self.splits.is_empty()
    }

    /// Validates every graph, feature-width uniformity, id uniqueness and
    /// (when present) that the split map partitions the graphs.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::with_capacity(self.graphs.len());
        let dim = self.feat_dim();
        for g in &self.graphs {
            g.validate()?;
            if !ids.insert(g.id.as_str()) {
                return Err(GraphError::DuplicateGraphId(g.id.clone()));
            }
            if Some(g.feat_dim()) != dim {
                return Err(GraphError::FeatureDimMismatch {
                    graph: g.id.clone(),
                    expected: dim.unwrap_or(0),
                    found: g.feat_dim(),
                });
            }
        }
        if self.is_split() {
            if self.splits.len() != self.graphs.len() {
                return Err(GraphError::BadSplits(format!(
                    "{} split entries for {} graphs",
                    self.splits.len(),
                    self.graphs.len()
                )));
            }
            if let Some(g) = self.graphs.iter().find(|g| !self.splits.contains_key(&g.id)) {
                return Err(GraphError::BadSplits(format!("graph {} has no split", g.id)));
            }
        }
        Ok(())
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.splits.get(id).copied()
    }

    /// Graphs assigned to `split`, in dataset order.
    pub fn split_graphs(&self, split: Split) -> Vec<&PropagationGraph> {
        self.graphs.iter().filter(|g| self.split_of(&g.id) == Some(split)).collect()
    }

    /// Applies `f` to every graph, keeping the split map.
    pub fn map_graphs(&self, f: impl FnMut(&PropagationGraph) -> PropagationGraph) -> GraphDataset {
        GraphDataset { graphs: self.graphs.iter().map(f).collect(), splits: self.splits.clone() }
    }

    pub fn try_map_graphs<E>(
        &self,
        f: impl FnMut(&PropagationGraph) -> std::result::Result<PropagationGraph, E>,
    ) -> std::result::Result<GraphDataset, E> {
        Ok(GraphDataset { graphs: self.graphs.iter().map(f).collect::<std::result::Result<_, E>>()?, splits: self.splits.clone() })
    }
}

/// Several graphs laid out block-diagonally as one disconnected graph.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchedGraph {
    pub total_nodes: usize,
    pub edges: Vec<(usize, usize)>,
    pub features: Tensor,
    /// Graph index of every node; non-decreasing.
    pub membership: Vec<usize>,
    pub labels: Vec<u8>,
    pub roots: Vec<usize>,
    pub ids: Vec<String>,
    /// Start of every graph's node block, plus `total_nodes` at the end.
    pub node_offsets: Vec<usize>,
    pub adjacency: Adjacency,
}

impl BatchedGraph {
    pub fn num_graphs(&self) -> usize {
        self.labels.len()
    }

    pub fn feat_dim(&self) -> usize {
        self.features.cols()
    }

    /// Node range of graph `k` in the batch.
    pub fn block(&self, k: usize) -> std::ops::Range<usize> {
        self.node_offsets[k]..self.node_offsets[k + 1]
    }

    /// Splits the batch back into its constituent graphs.
    pub fn unbatch(&self) -> Vec<PropagationGraph> {
        let mut per_graph: Vec<Vec<(usize, usize)>> = vec![Vec::new(); self.num_graphs()];
        for &(u, v) in &self.edges {
            let k = self.membership[u];
            let off = self.node_offsets[k];
            per_graph[k].push((u - off, v - off));
        }
        per_graph
            .into_iter()
            .enumerate()
            .map(|(k, edges)| {
                let range = self.block(k);
                let idx: Vec<usize> = range.clone().collect();
                PropagationGraph {
                    id: self.ids[k].clone(),
                    num_nodes: range.len(),
                    edges,
                    features: self.features.select_rows(&idx),
                    root: self.roots[k] - range.start,
                    label: self.labels[k],
                }
            })
            .collect()
    }
}

/// Concatenates graphs block-diagonally, offsetting node indices.
pub fn batch_graphs<G: std::borrow::Borrow<PropagationGraph>>(gs: &[G]) -> Result<BatchedGraph> {
    let first = gs.first().ok_or(GraphError::EmptyBatch)?.borrow();
    let dim = first.feat_dim();
    let total_nodes: usize = gs.iter().map(|g| g.borrow().num_nodes).sum();
    let mut edges = Vec::with_capacity(gs.iter().map(|g| g.borrow().edges.len()).sum());
    let mut features = Tensor::zeros(total_nodes, dim);
    let mut membership = Vec::with_capacity(total_nodes);
    let mut node_offsets = Vec::with_capacity(gs.len() + 1);
    let mut labels = Vec::with_capacity(gs.len());
    let mut roots = Vec::with_capacity(gs.len());
    let mut ids = Vec::with_capacity(gs.len());
    let mut offset = 0;
    for (k, g) in gs.iter().enumerate() {
        let g = g.borrow();
        if g.feat_dim() != dim {
            return Err(GraphError::FeatureDimMismatch { graph: g.id.clone(), expected: dim, found: g.feat_dim() });
        }
        node_offsets.push(offset);
        edges.extend(g.edges.iter().map(|&(u, v)| (u + offset, v + offset)));
        for r in 0..g.num_nodes {
            features.row_mut(offset + r).copy_from_slice(g.features.row(r));
        }
        membership.extend(std::iter::repeat_n(k, g.num_nodes));
        labels.push(g.label);
        roots.push(g.root + offset);
        ids.push(g.id.clone());
        offset += g.num_nodes;
    }
    node_offsets.push(offset);
    let adjacency = Adjacency::from_edges(total_nodes, &edges);
    Ok(BatchedGraph { total_nodes, edges, features, membership, labels, roots, ids, node_offsets, adjacency })
}

/// Split sizes for `n` graphs: every split is floored and the remainder goes
/// to train. A 1e-9 slack absorbs representation error such as `0.7 * 10`.
pub fn split_sizes(n: usize, fractions: (f64, f64, f64)) -> (usize, usize, usize) {
    let floor = |f: f64| ((n as f64) * f + 1e-9).floor() as usize;
    let val = floor(fractions.1);
    let test = floor(fractions.2);
    (n - val - test, val, test)
}

/// Deterministic label-stratified train/val/test assignment.
///
/// Each class is shuffled independently, then the classes are interleaved in
/// proportion to their sizes; the first `test` graphs of the interleaving go
/// to test, the next `val` to val, the rest to train. Any prefix of the
/// interleaving holds each class within one graph of its proportional share.
pub fn split_dataset(ds: &GraphDataset, fractions: (f64, f64, f64), seed: u64) -> Result<GraphDataset> {
    let (a, b, c) = fractions;
    let ok = [a, b, c].iter().all(|f| f.is_finite() && *f > 0.0) && ((a + b + c) - 1.0).abs() <= 1e-9;
    if !ok {
        return Err(GraphError::BadFractions(fractions));
    }
    ds.validate()?;
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, g) in ds.graphs.iter().enumerate() {
        by_class[g.label as usize].push(i);
    }
    for (label, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            return Err(GraphError::ClassMissing(label as u8));
        }
        let mut rng = rng::rng_from(seed, &[STREAM_SPLIT, label as u64]);
        members.shuffle(&mut rng);
    }
    // Position of the j-th member of class c in the merged order: (j + 0.5) / n_c.
    let mut order: Vec<(f64, usize, usize)> = by_class
        .iter()
        .enumerate()
        .flat_map(|(c, members)| {
            let n = members.len() as f64;
            members.iter().enumerate().map(move |(j, &i)| ((j as f64 + 0.5) / n, c, i))
        })
        .collect();
    order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));

    let (_, n_val, n_test) = split_sizes(ds.len(), fractions);
    let mut splits = BTreeMap::new();
    for (pos, &(_, _, i)) in order.iter().enumerate() {
        let split = if pos < n_test {
            Split::Test
        } else if pos < n_test + n_val {
            Split::Val
        } else {
            Split::Train
        };
        splits.insert(ds.graphs[i].id.clone(), split);
    }
    let out = GraphDataset { graphs: ds.graphs.clone(), splits };
    for label in [REAL, FAKE] {
        if !out.split_graphs(Split::Train).iter().any(|g| g.label == label) {
            return Err(GraphError::ClassMissing(label));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(id: &str, n: usize, edges: &[(usize, usize)], dim: usize, label: u8) -> PropagationGraph {
        PropagationGraph {
            id: id.into(),
            num_nodes: n,
            edges: edges.to_vec(),
            features: Tensor::from_vec(n, dim, (0..n * dim).map(|x| x as f64).collect()).unwrap(),
            root: 0,
            label,
        }
    }

    #[test]
    fn triangle_is_valid() {
        assert_eq!(graph("t", 3, &[(0, 1), (1, 2), (0, 2)], 2, 0).validate(), Ok(()));
    }

    #[test]
    fn self_loop_rejected() {
        let err = graph("g", 2, &[(0, 0)], 1, 0).validate().unwrap_err();
        assert_eq!(err, GraphError::SelfLoop { graph: "g".into(), node: 0 });
    }

    #[test]
    fn reverse_duplicate_rejected() {
        let err = graph("g", 2, &[(0, 1), (1, 0)], 1, 0).validate().unwrap_err();
        assert_eq!(err, GraphError::DuplicateEdge { graph: "g".into(), u: 1, v: 0 });
    }

    #[test]
    fn out_of_range_and_ragged_rejected() {
        assert!(matches!(
            graph("g", 2, &[(0, 2)], 1, 0).validate(),
            Err(GraphError::IndexOutOfRange { u: 0, v: 2, .. })
        ));
        let mut g = graph("g", 3, &[], 2, 0);
        g.features = Tensor::zeros(2, 2);
        assert!(matches!(g.validate(), Err(GraphError::RaggedFeatureMatrix { row: 2, .. })));
        let mut g = graph("g", 3, &[], 2, 0);
        g.root = 3;
        assert!(matches!(g.validate(), Err(GraphError::RootOutOfRange { .. })));
    }

    #[test]
    fn star_neighbors() {
        let g = graph("s", 4, &[(0, 1), (0, 2), (3, 0)], 1, 0);
        assert_eq!(g.neighbors(0).unwrap(), vec![1, 2, 3]);
        assert_eq!(g.neighbors(2).unwrap(), vec![0]);
        assert!(matches!(g.neighbors(4), Err(GraphError::NodeOutOfRange { .. })));
        let single = graph("i", 1, &[], 1, 0);
        assert_eq!(single.neighbors(0).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn batch_offsets_and_membership() {
        let a = graph("a", 2, &[(0, 1)], 2, 0);
        let b = graph("b", 3, &[(0, 1), (1, 2)], 2, 1);
        let batch = batch_graphs(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(batch.total_nodes, 5);
        assert_eq!(batch.membership, vec![0, 0, 1, 1, 1]);
        assert_eq!(batch.edges[1], (2, 3));
        assert_eq!(batch.roots, vec![0, 2]);
        assert_eq!(batch.unbatch(), vec![a.clone(), b]);

        let single = batch_graphs(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single.edges, a.edges);
        assert!(single.membership.iter().all(|&m| m == 0));
    }

    #[test]
    fn batch_errors() {
        let empty: [PropagationGraph; 0] = [];
        assert_eq!(batch_graphs(&empty).unwrap_err(), GraphError::EmptyBatch);
        let a = graph("a", 2, &[], 2, 0);
        let b = graph("b", 2, &[], 3, 0);
        assert!(matches!(batch_graphs(&[a, b]), Err(GraphError::FeatureDimMismatch { .. })));
    }

    fn ten_graphs() -> GraphDataset {
        GraphDataset::new((0..10).map(|i| graph(&format!("g{i}"), 2, &[(0, 1)], 1, (i % 2) as u8)).collect()).unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = ten_graphs();
        let s = split_dataset(&ds, (0.7, 0.1, 0.2), 42).unwrap();
        let count = |sp| s.split_graphs(sp).len();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (7, 1, 2));
        assert_eq!(s, split_dataset(&ds, (0.7, 0.1, 0.2), 42).unwrap());
        s.validate().unwrap();
    }

    #[test]
    fn split_errors() {
        let ds = ten_graphs();
        assert!(matches!(split_dataset(&ds, (0.5, 0.5, 0.5), 1), Err(GraphError::BadFractions(_))));
        assert!(matches!(split_dataset(&ds, (1.0, 0.0, 0.0), 1), Err(GraphError::BadFractions(_))));
        let one_class = GraphDataset::new((0..4).map(|i| graph(&format!("g{i}"), 1, &[], 1, 1)).collect()).unwrap();
        assert_eq!(split_dataset(&one_class, (0.6, 0.2, 0.2), 1).unwrap_err(), GraphError::ClassMissing(0));
    }

    #[test]
    fn split_is_stratified() {
        // 30 real, 10 fake
        let ds = GraphDataset::new(
            (0..40).map(|i| graph(&format!("g{i}"), 1, &[], 1, u8::from(i % 4 == 0))).collect(),
        )
        .unwrap();
        for seed in 0..20 {
            let s = split_dataset(&ds, (0.7, 0.1, 0.2), seed).unwrap();
            for split in [Split::Train, Split::Val, Split::Test] {
                let gs = s.split_graphs(split);
                let fake = gs.iter().filter(|g| g.label == FAKE).count() as f64;
                let expected = gs.len() as f64 * 0.25;
                assert!((fake - expected).abs() <= 1.0, "{split:?}: {fake} vs {expected}");
            }
        }
    }
}
