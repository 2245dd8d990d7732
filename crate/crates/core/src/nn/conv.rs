//! Single-layer message-passing operators over an undirected adjacency.

use super::layers::Mlp;
use super::param::{glorot_uniform, Module, Parameter};
use super::{check_shape, NnError, Result};
use crate::graph::Adjacency;
use crate::rng::Rng;
use crate::Tensor;
use serde::{Deserialize, Serialize};

/// Slope of the leaky rectifier inside GAT attention scores.
pub const GAT_NEGATIVE_SLOPE: f64 = 0.2;

fn check_nodes(context: &'static str, x: &Tensor, adj: &Adjacency) -> Result<()> {
    if x.rows() == adj.num_nodes() {
        Ok(())
    } else {
        Err(NnError::ShapeMismatch { context, expected: (adj.num_nodes(), x.cols()), found: x.shape() })
    }
}

/// `(1 + eps)·x[v] + Σ_{u ∈ N(v)} x[u]`. The map is symmetric in the
/// adjacency, so it is also its own adjoint.
fn gin_aggregate(x: &Tensor, adj: &Adjacency, eps: f64) -> Tensor {
    let mut out = x.clone();
    out.scale(1.0 + eps);
    for v in 0..adj.num_nodes() {
        for &u in adj.neighbors(v) {
            let src = x.row(u).to_vec();
            for (o, s) in out.row_mut(v).iter_mut().zip(src) {
                *o += s;
            }
        }
    }
    out
}

/// Symmetric-normalised propagation with self loops,
/// `Σ_{u ∈ N(v) ∪ {v}} x[u] / √((deg v + 1)(deg u + 1))`. Self-adjoint.
fn gcn_propagate(x: &Tensor, adj: &Adjacency) -> Tensor {
    let inv_sqrt: Vec<f64> = (0..adj.num_nodes()).map(|v| 1.0 / ((adj.degree(v) + 1) as f64).sqrt()).collect();
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for v in 0..adj.num_nodes() {
        let row = out.row_mut(v);
        let self_w = inv_sqrt[v] * inv_sqrt[v];
        for (o, s) in row.iter_mut().zip(x.row(v)) {
            *o += self_w * s;
        }
        for &u in adj.neighbors(v) {
            let w = inv_sqrt[v] * inv_sqrt[u];
            for (o, s) in row.iter_mut().zip(x.row(u)) {
                *o += w * s;
            }
        }
    }
    out
}

/// Neighbour mean; isolated nodes get the zero vector.
fn mean_aggregate(x: &Tensor, adj: &Adjacency) -> Tensor {
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for v in 0..adj.num_nodes() {
        let deg = adj.degree(v);
        if deg == 0 {
            continue;
        }
        let w = 1.0 / deg as f64;
        let row = out.row_mut(v);
        for &u in adj.neighbors(v) {
            for (o, s) in row.iter_mut().zip(x.row(u)) {
                *o += w * s;
            }
        }
    }
    out
}

/// Adjoint of [`mean_aggregate`]: `dx[u] += d[v] / deg(v)` for every `u ∈ N(v)`.
fn mean_aggregate_adjoint(d: &Tensor, adj: &Adjacency) -> Tensor {
    let mut out = Tensor::zeros(d.rows(), d.cols());
    for v in 0..adj.num_nodes() {
        let deg = adj.degree(v);
        if deg == 0 {
            continue;
        }
        let w = 1.0 / deg as f64;
        for &u in adj.neighbors(v) {
            for (o, s) in out.row_mut(u).iter_mut().zip(d.row(v)) {
                *o += w * s;
            }
        }
    }
    out
}

/// `MLP((1 + eps)·x[v] + Σ_{u ∈ N(v)} x[u])` for every node.
pub fn gin_conv(x: &Tensor, adj: &Adjacency, eps: f64, mlp: &mut Mlp) -> Result<Tensor> {
    check_nodes("gin input", x, adj)?;
    mlp.forward(&gin_aggregate(x, adj, eps))
}

pub fn gcn_conv(x: &Tensor, adj: &Adjacency, weight: &Tensor) -> Result<Tensor> {
    check_nodes("gcn input", x, adj)?;
    check_shape("gcn weight", weight, (x.cols(), weight.cols()))?;
    Ok(gcn_propagate(x, adj).matmul(weight))
}

pub fn sage_conv(x: &Tensor, adj: &Adjacency, w_self: &Tensor, w_neigh: &Tensor) -> Result<Tensor> {
    check_nodes("sage input", x, adj)?;
    check_shape("sage self weight", w_self, (x.cols(), w_self.cols()))?;
    check_shape("sage neighbour weight", w_neigh, (x.cols(), w_self.cols()))?;
    let mut out = x.matmul(w_self);
    out.add_assign(&mean_aggregate(x, adj).matmul(w_neigh));
    Ok(out)
}

/// `attn` is `2 x out`: row 0 scores the source (neighbour) node, row 1 the
/// destination node.
pub fn gat_conv(x: &Tensor, adj: &Adjacency, weight: &Tensor, attn: &Tensor) -> Result<Tensor> {
    check_nodes("gat input", x, adj)?;
    check_shape("gat weight", weight, (x.cols(), weight.cols()))?;
    check_shape("gat attention", attn, (2, weight.cols()))?;
    Ok(gat_forward(x, adj, weight, attn).0)
}

// ---------------------------------------------------------------------------

/// Graph isomorphism convolution with a fixed `eps`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GinConv {
    pub eps: f64,
    pub mlp: Mlp,
    #[serde(skip)]
    adj: Option<Adjacency>,
}

impl GinConv {
    /// Two-layer MLP `in -> out -> out`.
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        GinConv { eps: 0.0, mlp: Mlp::new(&format!("{name}.mlp"), &[in_dim, out_dim, out_dim], rng), adj: None }
    }

    pub fn from_mlp(eps: f64, mlp: Mlp) -> Self {
        GinConv { eps, mlp, adj: None }
    }

    pub fn in_dim(&self) -> usize {
        self.mlp.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.mlp.out_dim()
    }

    pub fn forward(&mut self, x: &Tensor, adj: &Adjacency) -> Result<Tensor> {
        let y = gin_conv(x, adj, self.eps, &mut self.mlp)?;
        self.adj = Some(adj.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let adj = self.adj.take().ok_or(NnError::NoForwardPass("gin"))?;
        let d_agg = self.mlp.backward(dy)?;
        Ok(gin_aggregate(&d_agg, &adj, self.eps))
    }
}

impl Module for GinConv {
    fn parameters(&self) -> Vec<&Parameter> {
        self.mlp.parameters()
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.mlp.parameters_mut()
    }
}

#[derive(Debug, Clone)]
struct PropagatedCache {
    adj: Adjacency,
    propagated: Tensor,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GcnConv {
    pub weight: Parameter,
    #[serde(skip)]
    cache: Option<PropagatedCache>,
}

impl GcnConv {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        GcnConv::from_weight(name, glorot_uniform(in_dim, out_dim, in_dim, out_dim, rng))
    }

    pub fn from_weight(name: &str, weight: Tensor) -> Self {
        GcnConv { weight: Parameter::new(format!("{name}.weight"), weight, true), cache: None }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&mut self, x: &Tensor, adj: &Adjacency) -> Result<Tensor> {
        check_nodes("gcn input", x, adj)?;
        check_shape("gcn input width", x, (x.rows(), self.in_dim()))?;
        let propagated = gcn_propagate(x, adj);
        let y = propagated.matmul(&self.weight.value);
        self.cache = Some(PropagatedCache { adj: adj.clone(), propagated });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let PropagatedCache { adj, propagated } = self.cache.take().ok_or(NnError::NoForwardPass("gcn"))?;
        check_shape("gcn upstream gradient", dy, (propagated.rows(), self.out_dim()))?;
        self.weight.accumulate(&propagated.matmul_tn(dy));
        Ok(gcn_propagate(&dy.matmul_nt(&self.weight.value), &adj))
    }
}

impl Module for GcnConv {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.weight]
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight]
    }
}

#[derive(Debug, Clone)]
struct SageCache {
    adj: Adjacency,
    input: Tensor,
    mean: Tensor,
}

/// GraphSAGE with mean aggregation: `x[v] W_self + mean_{N(v)} x W_neigh`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SageConv {
    pub w_self: Parameter,
    pub w_neigh: Parameter,
    #[serde(skip)]
    cache: Option<SageCache>,
}

impl SageConv {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let w_self = glorot_uniform(in_dim, out_dim, in_dim, out_dim, rng);
        let w_neigh = glorot_uniform(in_dim, out_dim, in_dim, out_dim, rng);
        SageConv::from_weights(name, w_self, w_neigh)
    }

    pub fn from_weights(name: &str, w_self: Tensor, w_neigh: Tensor) -> Self {
        SageConv {
            w_self: Parameter::new(format!("{name}.w_self"), w_self, true),
            w_neigh: Parameter::new(format!("{name}.w_neigh"), w_neigh, true),
            cache: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w_self.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w_self.value.cols()
    }

    pub fn forward(&mut self, x: &Tensor, adj: &Adjacency) -> Result<Tensor> {
        check_nodes("sage input", x, adj)?;
        check_shape("sage input width", x, (x.rows(), self.in_dim()))?;
        let mean = mean_aggregate(x, adj);
        let mut y = x.matmul(&self.w_self.value);
        y.add_assign(&mean.matmul(&self.w_neigh.value));
        self.cache = Some(SageCache { adj: adj.clone(), input: x.clone(), mean });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let SageCache { adj, input, mean } = self.cache.take().ok_or(NnError::NoForwardPass("sage"))?;
        check_shape("sage upstream gradient", dy, (input.rows(), self.out_dim()))?;
        self.w_self.accumulate(&input.matmul_tn(dy));
        self.w_neigh.accumulate(&mean.matmul_tn(dy));
        let mut dx = dy.matmul_nt(&self.w_self.value);
        dx.add_assign(&mean_aggregate_adjoint(&dy.matmul_nt(&self.w_neigh.value), &adj));
        Ok(dx)
    }
}

impl Module for SageConv {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.w_self, &self.w_neigh]
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.w_self, &mut self.w_neigh]
    }
}

#[derive(Debug, Clone)]
struct GatCache {
    adj: Adjacency,
    input: Tensor,
    projected: Tensor,
    /// Per destination `v`: attention over `[v, N(v)...]` and the raw pre-activation scores.
    alphas: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

/// Attention candidates of `v`: itself first, then its neighbours.
fn gat_candidates(adj: &Adjacency, v: usize) -> impl Iterator<Item = usize> + '_ {
    std::iter::once(v).chain(adj.neighbors(v).iter().copied())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        GAT_NEGATIVE_SLOPE * x
    }
}

fn gat_forward(x: &Tensor, adj: &Adjacency, weight: &Tensor, attn: &Tensor) -> (Tensor, GatCache) {
    let h = x.matmul(weight);
    let n = adj.num_nodes();
    let src: Vec<f64> = (0..n).map(|u| dot(h.row(u), attn.row(0))).collect();
    let dst: Vec<f64> = (0..n).map(|v| dot(h.row(v), attn.row(1))).collect();
    let mut out = Tensor::zeros(n, h.cols());
    let mut alphas = Vec::with_capacity(n);
    let mut pres = Vec::with_capacity(n);
    for v in 0..n {
        let pre: Vec<f64> = gat_candidates(adj, v).map(|u| dst[v] + src[u]).collect();
        let e: Vec<f64> = pre.iter().map(|&p| leaky(p)).collect();
        let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = e.iter().map(|&s| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let alpha: Vec<f64> = exps.iter().map(|x| x / z).collect();
        let row = out.row_mut(v);
        for (a, u) in alpha.iter().zip(gat_candidates(adj, v)) {
            for (o, s) in row.iter_mut().zip(h.row(u)) {
                *o += a * s;
            }
        }
        alphas.push(alpha);
        pres.push(pre);
    }
    (out, GatCache { adj: adj.clone(), input: x.clone(), projected: h, alphas, pre: pres })
}

/// Single-head additive graph attention over `N(v) ∪ {v}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GatConv {
    pub weight: Parameter,
    pub attn: Parameter,
    #[serde(skip)]
    cache: Option<GatCache>,
}

impl GatConv {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let weight = glorot_uniform(in_dim, out_dim, in_dim, out_dim, rng);
        let attn = glorot_uniform(out_dim, 1, 2, out_dim, rng);
        GatConv::from_weights(name, weight, attn)
    }

    pub fn from_weights(name: &str, weight: Tensor, attn: Tensor) -> Self {
        GatConv {
            weight: Parameter::new(format!("{name}.weight"), weight, true),
            attn: Parameter::new(format!("{name}.attn"), attn, true),
            cache: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&mut self, x: &Tensor, adj: &Adjacency) -> Result<Tensor> {
        check_nodes("gat input", x, adj)?;
        check_shape("gat input width", x, (x.rows(), self.in_dim()))?;
        let (y, cache) = gat_forward(x, adj, &self.weight.value, &self.attn.value);
        self.cache = Some(cache);
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let GatCache { adj, input, projected: h, alphas, pre } = self.cache.take().ok_or(NnError::NoForwardPass("gat"))?;
        check_shape("gat upstream gradient", dy, h.shape())?;
        let n = adj.num_nodes();
        let width = h.cols();
        let mut dh = Tensor::zeros(n, width);
        let mut d_src = vec![0.0; n];
        let mut d_dst = vec![0.0; n];
        for v in 0..n {
            let g = dy.row(v);
            let alpha = &alphas[v];
            let d_alpha: Vec<f64> = gat_candidates(&adj, v).map(|u| dot(g, h.row(u))).collect();
            let weighted: f64 = alpha.iter().zip(&d_alpha).map(|(a, d)| a * d).sum();
            for (k, u) in gat_candidates(&adj, v).enumerate() {
                for (o, gi) in dh.row_mut(u).iter_mut().zip(g) {
                    *o += alpha[k] * gi;
                }
                let d_e = alpha[k] * (d_alpha[k] - weighted);
                let d_pre = if pre[v][k] > 0.0 { d_e } else { GAT_NEGATIVE_SLOPE * d_e };
                d_dst[v] += d_pre;
                d_src[u] += d_pre;
            }
        }
        let attn = &self.attn.value;
        let mut d_attn = Tensor::zeros(2, width);
        for u in 0..n {
            let hu = h.row(u).to_vec();
            for j in 0..width {
                d_attn.data_mut()[j] += d_src[u] * hu[j];
                d_attn.data_mut()[width + j] += d_dst[u] * hu[j];
            }
            for (j, o) in dh.row_mut(u).iter_mut().enumerate() {
                *o += d_src[u] * attn.get(0, j) + d_dst[u] * attn.get(1, j);
            }
        }
        self.attn.accumulate(&d_attn);
        self.weight.accumulate(&input.matmul_tn(&dh));
        Ok(dh.matmul_nt(&self.weight.value))
    }
}

impl Module for GatConv {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.attn]
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.attn]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;

    fn identity_mlp(d: usize) -> Mlp {
        Mlp::from_layers(vec![Linear::from_parts("id", Tensor::identity(d), Tensor::zeros(1, d))])
    }

    fn rows(r: &[&[f64]]) -> Tensor {
        Tensor::from_rows(r).unwrap()
    }

    #[test]
    fn gin_isolated_node_is_plain_mlp() {
        let adj = Adjacency::from_edges(1, &[]);
        let x = rows(&[&[0.5, -1.0]]);
        let mut rng = crate::rng::rng_from(3, &[]);
        let mut mlp = Mlp::new("m", &[2, 4, 3], &mut rng);
        let direct = mlp.forward(&x).unwrap();
        assert_eq!(gin_conv(&x, &adj, 0.0, &mut mlp).unwrap(), direct);
    }

    #[test]
    fn gin_sums_neighbours() {
        let adj = Adjacency::from_edges(2, &[(0, 1)]);
        let x = rows(&[&[1.0, 2.0], &[10.0, 20.0]]);
        let y = gin_conv(&x, &adj, 0.0, &mut identity_mlp(2)).unwrap();
        assert_eq!(y.row(0), &[11.0, 22.0]);

        let tri = Adjacency::from_edges(3, &[(0, 1), (1, 2), (0, 2)]);
        let x = rows(&[&[0.25, -2.0], &[0.25, -2.0], &[0.25, -2.0]]);
        let y = gin_conv(&x, &tri, 0.0, &mut identity_mlp(2)).unwrap();
        for r in y.row_iter() {
            assert_eq!(r, &[0.75, -6.0]);
        }
    }

    #[test]
    fn isolated_node_baselines() {
        let adj = Adjacency::from_edges(1, &[]);
        let x = rows(&[&[3.0, -4.0]]);
        let eye = Tensor::identity(2);
        assert_eq!(gcn_conv(&x, &adj, &eye).unwrap(), x);
        assert_eq!(sage_conv(&x, &adj, &eye, &eye).unwrap(), x);
        let w = rows(&[&[1.0, 2.0], &[0.5, -1.0]]);
        let attn = rows(&[&[0.3, 0.1], &[-0.7, 0.2]]);
        let (y, cache) = gat_forward(&x, &adj, &w, &attn);
        assert_eq!(cache.alphas, vec![vec![1.0]]);
        assert_eq!(y, x.matmul(&w));
    }

    #[test]
    fn gcn_path_matches_hand_normalisation() {
        // 0 - 1, degrees 1,1 -> every coefficient 1/2
        let adj = Adjacency::from_edges(2, &[(0, 1)]);
        let x = rows(&[&[2.0], &[4.0]]);
        let y = gcn_conv(&x, &adj, &Tensor::identity(1)).unwrap();
        assert!(y.data().iter().all(|v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn shape_mismatch_reported() {
        let adj = Adjacency::from_edges(3, &[]);
        let x = Tensor::zeros(2, 2);
        assert!(matches!(gcn_conv(&x, &adj, &Tensor::identity(2)), Err(NnError::ShapeMismatch { .. })));
        let mut rng = crate::rng::rng_from(0, &[]);
        let mut conv = SageConv::new("s", 3, 2, &mut rng);
        assert!(matches!(conv.forward(&Tensor::zeros(3, 2), &adj), Err(NnError::ShapeMismatch { .. })));
    }
}
