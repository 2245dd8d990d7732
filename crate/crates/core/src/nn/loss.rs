use super::{NnError, Result};
use crate::Tensor;

/// Probabilities below this are clamped before taking the logarithm.
pub const PROB_FLOOR: f64 = 1e-15;

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

fn check_labels(probs: &Tensor, labels: &[usize]) -> Result<()> {
    if labels.len() != probs.rows() {
        return Err(NnError::ShapeMismatch { context: "cross-entropy labels", expected: (probs.rows(), 1), found: (labels.len(), 1) });
    }
    match labels.iter().enumerate().find(|(_, &l)| l >= probs.cols()) {
        Some((row, &label)) => Err(NnError::LabelOutOfRange { row, label, classes: probs.cols() }),
        None => Ok(()),
    }
}

/// Mean negative log-likelihood of the true classes.
pub fn cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    check_labels(probs, labels)?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = labels.iter().enumerate().map(|(r, &l)| -probs.get(r, l).max(PROB_FLOOR).ln()).sum();
    Ok(total / labels.len() as f64)
}

/// Gradient of `cross_entropy(softmax_rows(logits))` with respect to the
/// logits: `(p - onehot) / n`.
pub fn softmax_ce_backward(probs: &Tensor, labels: &[usize]) -> Result<Tensor> {
    check_labels(probs, labels)?;
    let n = labels.len().max(1) as f64;
    let mut d = probs.clone();
    for (r, &l) in labels.iter().enumerate() {
        d.set(r, l, d.get(r, l) - 1.0);
    }
    d.scale(1.0 / n);
    Ok(d)
}
