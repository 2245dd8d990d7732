#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;
use topognn::graph::PropagationGraph;
use topognn::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random connected graph: a random tree plus up to `n` extra edges, with
/// standard-normal-ish features.
pub fn random_graph(seed: u64, max_nodes: usize, feat_dim: usize) -> PropagationGraph {
    let mut r = rng(seed);
    let n = r.random_range(1..=max_nodes);
    let mut seen = HashSet::new();
    let mut edges = Vec::new();
    for v in 1..n {
        let u = r.random_range(0..v);
        seen.insert((u, v));
        edges.push((u, v));
    }
    if n > 2 {
        for _ in 0..r.random_range(0..=n) {
            let (a, b) = (r.random_range(0..n), r.random_range(0..n));
            let key = (a.min(b), a.max(b));
            if a != b && seen.insert(key) {
                edges.push(if r.random() { (a, b) } else { (b, a) });
            }
        }
    }
    let features = Tensor::from_vec(n, feat_dim, (0..n * feat_dim).map(|_| r.random_range(-2.0..2.0)).collect()).unwrap();
    let root = r.random_range(0..n);
    PropagationGraph::new(format!("g{seed}"), n, edges, features, root, r.random_range(0..2)).unwrap()
}

/// Erdős–Rényi graph with edge probability `p`.
pub fn gnp_graph(seed: u64, n: usize, p: f64) -> PropagationGraph {
    let mut r = rng(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if r.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    PropagationGraph::new(format!("gnp{seed}"), n, edges, Tensor::zeros(n, 1), 0, 0).unwrap()
}

pub fn random_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut rng(seed));
    p
}

/// Relabels node `v` as `perm[v]`.
pub fn permute(g: &PropagationGraph, perm: &[usize]) -> PropagationGraph {
    let mut features = Tensor::zeros(g.num_nodes, g.feat_dim());
    for (v, &p) in perm.iter().enumerate() {
        features.row_mut(p).copy_from_slice(g.features.row(v));
    }
    let edges = g.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
    PropagationGraph::new(g.id.clone(), g.num_nodes, edges, features, perm[g.root], g.label).unwrap()
}
