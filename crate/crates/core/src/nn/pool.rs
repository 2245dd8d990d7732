//! Graph-level readouts over a node→graph membership vector.

use super::param::{glorot_uniform, Module, Parameter};
use super::{check_shape, NnError, Result};
use crate::rng::Rng;
use crate::Tensor;
use serde::{Deserialize, Serialize};

/// Node ranges per graph. Membership must be non-decreasing and every graph
/// in `0..num_graphs` must own at least one node.
fn blocks(membership: &[usize], num_graphs: usize) -> Result<Vec<std::ops::Range<usize>>> {
    let mut out = Vec::with_capacity(num_graphs);
    let mut start = 0;
    for g in 0..num_graphs {
        let end = start + membership[start..].iter().take_while(|&&m| m == g).count();
        if end == start {
            return Err(NnError::EmptyGraphInBatch(g));
        }
        out.push(start..end);
        start = end;
    }
    if start != membership.len() {
        // Leftover nodes belong to a graph index >= num_graphs or are out of order.
        return Err(NnError::ShapeMismatch {
            context: "pool membership",
            expected: (start, 1),
            found: (membership.len(), 1),
        });
    }
    Ok(out)
}

fn check_membership(h: &Tensor, membership: &[usize]) -> Result<()> {
    if h.rows() == membership.len() {
        Ok(())
    } else {
        Err(NnError::ShapeMismatch { context: "pool membership", expected: (h.rows(), 1), found: (membership.len(), 1) })
    }
}

#[derive(Debug, Clone)]
struct AttentionCache {
    input: Tensor,
    alphas: Vec<f64>,
    blocks: Vec<std::ops::Range<usize>>,
}

/// Global attention pooling: `Z[g] = Σ_{i ∈ g} softmax_g(h_i·w)_i · h_i`.
///
/// The gate carries no bias: a constant added to every score of a graph
/// cancels in the per-graph softmax, so it would be a parameter with an
/// identically zero gradient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionPool {
    /// `hidden x 1`
    pub gate_weight: Parameter,
    #[serde(skip)]
    cache: Option<AttentionCache>,
}

impl AttentionPool {
    pub fn new(name: &str, hidden: usize, rng: &mut Rng) -> Self {
        AttentionPool::from_weight(name, glorot_uniform(hidden, 1, hidden, 1, rng))
    }

    pub fn from_weight(name: &str, gate_weight: Tensor) -> Self {
        AttentionPool {
            gate_weight: Parameter::new(format!("{name}.gate_weight"), gate_weight, true),
            cache: None,
        }
    }

    pub fn hidden(&self) -> usize {
        self.gate_weight.value.rows()
    }

    /// Returns the pooled `num_graphs x hidden` matrix and the per-node
    /// attention weights (which sum to one within every graph).
    pub fn forward(&mut self, h: &Tensor, membership: &[usize], num_graphs: usize) -> Result<(Tensor, Vec<f64>)> {
        check_membership(h, membership)?;
        check_shape("attention pool input", h, (h.rows(), self.hidden()))?;
        let blocks = blocks(membership, num_graphs)?;
        let w = self.gate_weight.value.data();
        let scores: Vec<f64> = h.row_iter().map(|r| r.iter().zip(w).map(|(x, y)| x * y).sum::<f64>()).collect();
        let mut alphas = vec![0.0; h.rows()];
        let mut z = Tensor::zeros(num_graphs, h.cols());
        for (g, range) in blocks.iter().enumerate() {
            let max = scores[range.clone()].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for i in range.clone() {
                alphas[i] = (scores[i] - max).exp();
                total += alphas[i];
            }
            for i in range.clone() {
                alphas[i] /= total;
                let a = alphas[i];
                for (o, x) in z.row_mut(g).iter_mut().zip(h.row(i)) {
                    *o += a * x;
                }
            }
        }
        self.cache = Some(AttentionCache { input: h.clone(), alphas: alphas.clone(), blocks });
        Ok((z, alphas))
    }

    pub fn backward(&mut self, dz: &Tensor) -> Result<Tensor> {
        let AttentionCache { input: h, alphas, blocks } = self.cache.take().ok_or(NnError::NoForwardPass("attention pool"))?;
        check_shape("attention pool upstream gradient", dz, (blocks.len(), h.cols()))?;
        let w = self.gate_weight.value.data().to_vec();
        let mut dh = Tensor::zeros(h.rows(), h.cols());
        let mut dw = Tensor::zeros(w.len(), 1);
        for (g, range) in blocks.iter().enumerate() {
            let dzg = dz.row(g);
            let d_alpha: Vec<f64> = range.clone().map(|i| h.row(i).iter().zip(dzg).map(|(a, b)| a * b).sum()).collect();
            let weighted: f64 = range.clone().zip(&d_alpha).map(|(i, d)| alphas[i] * d).sum();
            for (k, i) in range.clone().enumerate() {
                let ds = alphas[i] * (d_alpha[k] - weighted);
                for (j, (o, (hz, hi))) in dh.row_mut(i).iter_mut().zip(dzg.iter().zip(h.row(i))).enumerate() {
                    *o += alphas[i] * hz + ds * w[j];
                    dw.data_mut()[j] += ds * hi;
                }
            }
        }
        self.gate_weight.accumulate(&dw);
        Ok(dh)
    }
}

impl Module for AttentionPool {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.gate_weight]
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.gate_weight]
    }
}

/// Column-wise maximum per graph. Ties go to the first node.
pub fn global_max_pool(h: &Tensor, membership: &[usize], num_graphs: usize) -> Result<Tensor> {
    Ok(max_pool_forward(h, membership, num_graphs)?.0)
}

fn max_pool_forward(h: &Tensor, membership: &[usize], num_graphs: usize) -> Result<(Tensor, Vec<usize>)> {
    check_membership(h, membership)?;
    let blocks = blocks(membership, num_graphs)?;
    let d = h.cols();
    let mut out = Tensor::zeros(num_graphs, d);
    let mut argmax = vec![0usize; num_graphs * d];
    for (g, range) in blocks.iter().enumerate() {
        for j in 0..d {
            let mut best = range.start;
            for i in range.clone().skip(1) {
                if h.get(i, j) > h.get(best, j) {
                    best = i;
                }
            }
            argmax[g * d + j] = best;
            out.set(g, j, h.get(best, j));
        }
    }
    Ok((out, argmax))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MaxPool {
    #[serde(skip)]
    cache: Option<(usize, Vec<usize>)>,
}

impl MaxPool {
    pub fn forward(&mut self, h: &Tensor, membership: &[usize], num_graphs: usize) -> Result<Tensor> {
        let (out, argmax) = max_pool_forward(h, membership, num_graphs)?;
        self.cache = Some((h.rows(), argmax));
        Ok(out)
    }

    pub fn backward(&mut self, dz: &Tensor) -> Result<Tensor> {
        let (rows, argmax) = self.cache.take().ok_or(NnError::NoForwardPass("max pool"))?;
        let d = dz.cols();
        if argmax.len() != dz.rows() * d {
            return Err(NnError::ShapeMismatch { context: "max pool upstream gradient", expected: (argmax.len(), 1), found: dz.shape() });
        }
        let mut dh = Tensor::zeros(rows, d);
        for g in 0..dz.rows() {
            for j in 0..d {
                let i = argmax[g * d + j];
                dh.set(i, j, dh.get(i, j) + dz.get(g, j));
            }
        }
        Ok(dh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(hidden: usize) -> AttentionPool {
        AttentionPool::from_weight("p", Tensor::from_vec(hidden, 1, (0..hidden).map(|i| 0.3 - 0.2 * i as f64).collect()).unwrap())
    }

    #[test]
    fn single_node_graph_gets_full_weight() {
        let h = Tensor::from_rows(&[[1.5, -2.0]]).unwrap();
        let (z, a) = pool(2).forward(&h, &[0], 1).unwrap();
        assert_eq!(a, vec![1.0]);
        assert_eq!(z, h);
    }

    #[test]
    fn equal_scores_split_evenly() {
        let h = Tensor::from_rows(&[[1.0, 2.0], [1.0, 2.0]]).unwrap();
        let (_, a) = pool(2).forward(&h, &[0, 0], 1).unwrap();
        assert_eq!(a, vec![0.5, 0.5]);
    }

    #[test]
    fn per_graph_weights_normalised() {
        let h = Tensor::from_rows(&[[1.0, 2.0], [0.0, -1.0], [3.0, 0.5], [-2.0, 2.0], [0.1, 0.2]]).unwrap();
        let (_, a) = pool(2).forward(&h, &[0, 0, 1, 1, 1], 2).unwrap();
        assert!((a[0] + a[1] - 1.0).abs() < 1e-12);
        assert!((a[2] + a[3] + a[4] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_graph_in_batch() {
        let h = Tensor::zeros(2, 2);
        assert_eq!(pool(2).forward(&h, &[0, 0], 2).unwrap_err(), NnError::EmptyGraphInBatch(1));
        assert_eq!(global_max_pool(&h, &[1, 1], 2).unwrap_err(), NnError::EmptyGraphInBatch(0));
    }

    #[test]
    fn max_pool_examples() {
        let h = Tensor::from_rows(&[[1.0, 2.0], [3.0, 0.0]]).unwrap();
        assert_eq!(global_max_pool(&h, &[0, 0], 1).unwrap().data(), &[3.0, 2.0]);
        let single = Tensor::from_rows(&[[-1.0, 4.0]]).unwrap();
        assert_eq!(global_max_pool(&single, &[0], 1).unwrap(), single);
        let two = Tensor::from_rows(&[[1.0, 5.0], [2.0, 0.0], [-3.0, -1.0]]).unwrap();
        assert_eq!(global_max_pool(&two, &[0, 0, 1], 2).unwrap().data(), &[2.0, 5.0, -3.0, -1.0]);
    }
}
