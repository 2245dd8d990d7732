use super::param::{glorot_uniform, Module, Parameter};
use super::{check_shape, Mode, NnError, Result};
use crate::rng::{self, Rng, STREAM_DROPOUT};
use crate::Tensor;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

/// Affine map `x W + b` with `W: in x out`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
    #[serde(skip)]
    input: Option<Tensor>,
}

impl Linear {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        Linear {
            weight: Parameter::new(format!("{name}.weight"), glorot_uniform(in_dim, out_dim, in_dim, out_dim, rng), true),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(1, out_dim), false),
            input: None,
        }
    }

    pub fn from_parts(name: &str, weight: Tensor, bias: Tensor) -> Self {
        Linear {
            weight: Parameter::new(format!("{name}.weight"), weight, true),
            bias: Parameter::new(format!("{name}.bias"), bias, false),
            input: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.in_dim() {
            return Err(NnError::ShapeMismatch { context: "linear input", expected: (x.rows(), self.in_dim()), found: x.shape() });
        }
        let mut y = x.matmul(&self.weight.value);
        y.add_row_broadcast(&self.bias.value);
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self.input.take().ok_or(NnError::NoForwardPass("linear"))?;
        check_shape("linear upstream gradient", dy, (x.rows(), self.out_dim()))?;
        self.weight.accumulate(&x.matmul_tn(dy));
        self.bias.accumulate(&dy.sum_rows());
        Ok(dy.matmul_nt(&self.weight.value))
    }
}

impl Module for Linear {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Rectifier with a cached activity mask.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Relu {
    #[serde(skip)]
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        self.mask = Some(x.data().iter().map(|&v| v > 0.0).collect());
        x.map(|v| v.max(0.0))
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let mask = self.mask.take().ok_or(NnError::NoForwardPass("relu"))?;
        if mask.len() != dy.data().len() {
            return Err(NnError::ShapeMismatch { context: "relu upstream gradient", expected: (mask.len(), 1), found: dy.shape() });
        }
        let mut dx = dy.clone();
        for (d, &keep) in dx.data_mut().iter_mut().zip(&mask) {
            if !keep {
                *d = 0.0;
            }
        }
        Ok(dx)
    }
}

/// Stack of linear layers with rectifiers between them (none after the last).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    acts: Vec<Relu>,
}

impl Mlp {
    /// `dims = [in, h1, ..., out]`, at least two entries.
    pub fn new(name: &str, dims: &[usize], rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let layers = dims.windows(2).enumerate().map(|(i, w)| Linear::new(&format!("{name}.{i}"), w[0], w[1], rng)).collect();
        Mlp::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<Linear>) -> Self {
        assert!(!layers.is_empty(), "an MLP needs at least one layer");
        for w in layers.windows(2) {
            assert_eq!(w[0].out_dim(), w[1].in_dim(), "MLP layer dims must chain");
        }
        let acts = vec![Relu::default(); layers.len() - 1];
        Mlp { layers, acts }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.layers[0].forward(x)?;
        for (layer, act) in self.layers[1..].iter_mut().zip(self.acts.iter_mut()) {
            h = layer.forward(&act.forward(&h))?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let n = self.layers.len();
        let mut g = self.layers[n - 1].backward(dy)?;
        for i in (0..n - 1).rev() {
            g = self.acts[i].backward(&g)?;
            g = self.layers[i].backward(&g)?;
        }
        Ok(g)
    }
}

impl Module for Mlp {
    fn parameters(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(Module::parameters).collect()
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers.iter_mut().flat_map(Module::parameters_mut).collect()
    }
}

#[derive(Debug, Clone)]
struct BatchNormCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
    mode: Mode,
}

/// Per-feature batch normalisation over rows.
///
/// Train mode normalises with the batch mean and biased variance and folds
/// the batch statistics into the running estimates (the running variance
/// uses the unbiased estimate). Eval mode normalises with the running
/// estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
    #[serde(skip)]
    cache: Option<BatchNormCache>,
}

impl BatchNorm {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    pub fn new(name: &str, dim: usize) -> Self {
        BatchNorm {
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::filled(1, dim, 1.0), false),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(1, dim), false),
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: Self::DEFAULT_MOMENTUM,
            epsilon: Self::DEFAULT_EPSILON,
            cache: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let d = self.dim();
        if x.cols() != d {
            return Err(NnError::ShapeMismatch { context: "batchnorm input", expected: (x.rows(), d), found: x.shape() });
        }
        let n = x.rows();
        let (mean, inv_std) = match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(NnError::SingleRowTrainBatch);
                }
                let mut mean = vec![0.0; d];
                for r in x.row_iter() {
                    for (m, v) in mean.iter_mut().zip(r) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; d];
                for r in x.row_iter() {
                    for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= n as f64);
                let unbias = n as f64 / (n - 1) as f64;
                for j in 0..d {
                    self.running_mean[j] = (1.0 - self.momentum) * self.running_mean[j] + self.momentum * mean[j];
                    self.running_var[j] = (1.0 - self.momentum) * self.running_var[j] + self.momentum * var[j] * unbias;
                }
                let inv_std = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
                (mean, inv_std)
            }
            Mode::Eval => {
                let inv_std = self.running_var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
                (self.running_mean.clone(), inv_std)
            }
        };
        let mut normalized = x.clone();
        for r in 0..n {
            for ((v, m), s) in normalized.row_mut(r).iter_mut().zip(&mean).zip(&inv_std) {
                *v = (*v - m) * s;
            }
        }
        let mut y = normalized.clone();
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        for r in 0..n {
            for ((v, gj), bj) in y.row_mut(r).iter_mut().zip(g).zip(b) {
                *v = *v * gj + bj;
            }
        }
        self.cache = Some(BatchNormCache { normalized, inv_std, mode });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let BatchNormCache { normalized, inv_std, mode } = self.cache.take().ok_or(NnError::NoForwardPass("batchnorm"))?;
        check_shape("batchnorm upstream gradient", dy, normalized.shape())?;
        let (n, d) = normalized.shape();
        let mut dgamma = Tensor::zeros(1, d);
        for r in 0..n {
            for ((acc, g), xh) in dgamma.data_mut().iter_mut().zip(dy.row(r)).zip(normalized.row(r)) {
                *acc += g * xh;
            }
        }
        let dbeta = dy.sum_rows();
        let gamma = self.gamma.value.data().to_vec();
        let mut dx = Tensor::zeros(n, d);
        match mode {
            Mode::Eval => {
                for r in 0..n {
                    for j in 0..d {
                        dx.set(r, j, dy.get(r, j) * gamma[j] * inv_std[j]);
                    }
                }
            }
            Mode::Train => {
                // dx = (γ·inv_std / n) · (n·dy − Σdy − x̂·Σ(dy·x̂))
                let nf = n as f64;
                for j in 0..d {
                    let (sum_dy, sum_dy_xh) = (dbeta.data()[j], dgamma.data()[j]);
                    let k = gamma[j] * inv_std[j] / nf;
                    for r in 0..n {
                        dx.set(r, j, k * (nf * dy.get(r, j) - sum_dy - normalized.get(r, j) * sum_dy_xh));
                    }
                }
            }
        }
        self.gamma.accumulate(&dgamma);
        self.beta.accumulate(&dbeta);
        Ok(dx)
    }
}

impl Module for BatchNorm {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.gamma, &self.beta]
    }
    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dropout {
    pub rate: f64,
    #[serde(skip)]
    scale: Option<Vec<f64>>,
}

fn dropout_scales(len: usize, rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng::rng_from(seed, &[STREAM_DROPOUT]);
    let keep = 1.0 / (1.0 - rate);
    (0..len).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect()
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(NnError::RateOutOfRange(rate))
    }
}

/// Stateless dropout; identity in eval mode or at rate 0.
pub fn dropout(x: &Tensor, rate: f64, seed: u64, mode: Mode) -> Result<Tensor> {
    check_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x.clone());
    }
    let scales = dropout_scales(x.data().len(), rate, seed);
    let mut y = x.clone();
    y.data_mut().iter_mut().zip(&scales).for_each(|(v, s)| *v *= s);
    Ok(y)
}

impl Dropout {
    pub fn new(rate: f64) -> Result<Self> {
        check_rate(rate)?;
        Ok(Dropout { rate, scale: None })
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, seed: u64) -> Result<Tensor> {
        check_rate(self.rate)?;
        let scales = if mode == Mode::Eval || self.rate == 0.0 {
            vec![1.0; x.data().len()]
        } else {
            dropout_scales(x.data().len(), self.rate, seed)
        };
        let mut y = x.clone();
        y.data_mut().iter_mut().zip(&scales).for_each(|(v, s)| *v *= s);
        self.scale = Some(scales);
        Ok(y)
    }

    /// Reuses the mask drawn in the forward pass.
    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let scales = self.scale.take().ok_or(NnError::NoForwardPass("dropout"))?;
        let mut dx = dy.clone();
        dx.data_mut().iter_mut().zip(&scales).for_each(|(v, s)| *v *= s);
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_squared_loss_gradient_matches_closed_form() {
        // L = ||x W - y||²  =>  dL/dW = 2 xᵀ (x W - y)
        let w = Tensor::from_vec(3, 2, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap();
        let mut lin = Linear::from_parts("l", w.clone(), Tensor::zeros(1, 2));
        let x = Tensor::from_vec(1, 3, vec![1.0, 2.0, -1.0]).unwrap();
        let y = Tensor::from_vec(1, 2, vec![0.5, -0.5]).unwrap();
        let out = lin.forward(&x).unwrap();
        let mut resid = out.clone();
        for (r, t) in resid.data_mut().iter_mut().zip(y.data()) {
            *r = 2.0 * (*r - t);
        }
        lin.backward(&resid).unwrap();
        let expected = x.matmul_tn(&resid);
        assert!(lin.weight.grad.max_abs_diff(&expected) < 1e-15);
        // Closed form evaluated by hand: xW = [1.2, 0.0], residual×2 = [1.4, 1.0].
        let hand = [1.4, 1.0, 2.8, 2.0, -1.4, -1.0];
        for (g, h) in lin.weight.grad.data().iter().zip(hand) {
            assert!((g - h).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_without_forward_errors() {
        let mut rng = rng::rng_from(0, &[]);
        let mut lin = Linear::new("l", 2, 2, &mut rng);
        assert_eq!(lin.backward(&Tensor::zeros(1, 2)).unwrap_err(), NnError::NoForwardPass("linear"));
        let mut bn = BatchNorm::new("bn", 2);
        assert!(matches!(bn.backward(&Tensor::zeros(2, 2)), Err(NnError::NoForwardPass(_))));
    }

    #[test]
    fn batchnorm_eval_identity() {
        let mut bn = BatchNorm::new("bn", 2);
        bn.running_var = vec![1.0 - bn.epsilon; 2];
        let x = Tensor::from_vec(2, 2, vec![0.3, -1.2, 4.0, 0.0]).unwrap();
        let y = bn.forward(&x, Mode::Eval).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-15);
    }

    #[test]
    fn batchnorm_train_constant_and_two_point_columns() {
        let mut bn = BatchNorm::new("bn", 2);
        let x = Tensor::from_vec(2, 2, vec![5.0, 0.0, 5.0, 2.0]).unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.get(0, 0), 0.0);
        assert_eq!(y.get(1, 0), 0.0);
        // mean 1, biased var 1
        let s = 1.0 / (1.0 + bn.epsilon).sqrt();
        assert!((y.get(0, 1) + s).abs() < 1e-15 && (y.get(1, 1) - s).abs() < 1e-15);
        assert!((y.get(0, 1) + 1.0).abs() < 1e-5);
        // running stats moved toward batch stats (unbiased var 2)
        assert!((bn.running_mean[1] - 0.1).abs() < 1e-15);
        assert!((bn.running_var[1] - (0.9 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn batchnorm_single_row_train_rejected() {
        let mut bn = BatchNorm::new("bn", 2);
        assert_eq!(bn.forward(&Tensor::zeros(1, 2), Mode::Train).unwrap_err(), NnError::SingleRowTrainBatch);
        assert!(bn.forward(&Tensor::zeros(1, 2), Mode::Eval).is_ok());
    }

    #[test]
    fn dropout_contract() {
        let x = Tensor::from_vec(4, 8, (0..32).map(|v| v as f64 + 1.0).collect()).unwrap();
        assert_eq!(dropout(&x, 0.0, 1, Mode::Train).unwrap(), x);
        assert_eq!(dropout(&x, 0.7, 1, Mode::Eval).unwrap(), x);
        let a = dropout(&x, 0.5, 9, Mode::Train).unwrap();
        assert_eq!(a, dropout(&x, 0.5, 9, Mode::Train).unwrap());
        assert!(a.data().iter().zip(x.data()).all(|(y, x)| *y == 0.0 || *y == 2.0 * x));
        assert!(a.data().contains(&0.0));
        assert_eq!(dropout(&x, 1.0, 1, Mode::Train).unwrap_err(), NnError::RateOutOfRange(1.0));
        assert!(Dropout::new(-0.1).is_err());
    }

    #[test]
    fn dropout_layer_matches_stateless_form() {
        let x = Tensor::from_vec(3, 5, (0..15).map(|v| v as f64 - 7.0).collect()).unwrap();
        let mut layer = Dropout::new(0.3).unwrap();
        let y = layer.forward(&x, Mode::Train, 42).unwrap();
        assert_eq!(y, dropout(&x, 0.3, 42, Mode::Train).unwrap());
        let dx = layer.backward(&Tensor::filled(3, 5, 1.0)).unwrap();
        let keep = 1.0 / 0.7;
        assert!(dx.data().iter().all(|d| *d == 0.0 || (*d - keep).abs() < 1e-15));
        for ((d, v), x) in dx.data().iter().zip(y.data()).zip(x.data()) {
            assert_eq!(*v, x * d);
        }
    }
}
