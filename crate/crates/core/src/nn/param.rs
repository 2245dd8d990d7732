use crate::rng::Rng;
use crate::Tensor;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

/// A trainable tensor with its gradient and Adam moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
    pub step_count: u64,
    /// Whether L2 weight decay applies (weights yes; biases and norm affine no).
    pub decay: bool,
    #[serde(skip)]
    has_grad: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor, decay: bool) -> Self {
        let (r, c) = value.shape();
        Parameter {
            name: name.into(),
            value,
            grad: Tensor::zeros(r, c),
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
            step_count: 0,
            decay,
            has_grad: false,
        }
    }

    pub fn len(&self) -> usize {
        self.value.data().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
        self.has_grad = false;
    }

    /// True once a backward pass has written into `grad` since the last
    /// [`Parameter::zero_grad`].
    pub fn has_grad(&self) -> bool {
        self.has_grad
    }

    pub fn accumulate(&mut self, g: &Tensor) {
        self.grad.add_assign(g);
        self.has_grad = true;
    }

    /// Marks the gradient as populated without changing it (for parameters
    /// that legitimately received a zero gradient).
    pub fn touch(&mut self) {
        self.has_grad = true;
    }
}

/// Glorot/Xavier uniform initialisation, `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect();
    Tensor::from_vec(rows, cols, data).expect("sized above")
}

/// Anything that owns trainable parameters.
pub trait Module {
    fn parameters(&self) -> Vec<&Parameter>;
    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;

    fn zero_grad(&mut self) {
        self.parameters_mut().into_iter().for_each(Parameter::zero_grad);
    }

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }
}
