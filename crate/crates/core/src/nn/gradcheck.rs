//! Central finite-difference verification of analytic gradients.

use super::param::Parameter;
use super::{NnError, Result};
use crate::rng;
use serde::{Deserialize, Serialize};

/// A deterministic scalar function of a set of parameters.
pub trait Objective {
    /// Evaluates the function without touching gradients.
    fn loss(&mut self) -> Result<f64>;
    /// Evaluates the function and accumulates its gradient into the parameters.
    fn loss_and_backward(&mut self) -> Result<f64>;
    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub total_coordinates: usize,
    pub epsilon: f64,
    pub tolerance: f64,
    pub worst: Option<GradSample>,
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compares analytic gradients with `(f(θ+ε) − f(θ−ε)) / 2ε` on up to
/// `samples` distinct coordinates drawn with `seed` (all coordinates when
/// there are fewer). Fails on the worst coordinate whose relative error is
/// not below `tolerance`.
pub fn grad_check<O: Objective + ?Sized>(
    objective: &mut O,
    epsilon: f64,
    tolerance: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    for p in objective.parameters_mut() {
        p.zero_grad();
    }
    objective.loss_and_backward()?;
    let (sizes, names): (Vec<usize>, Vec<String>) = objective.parameters_mut().iter().map(|p| (p.len(), p.name.clone())).unzip();
    let total: usize = sizes.iter().sum();
    let mut report = GradCheckReport { checked: 0, total_coordinates: total, epsilon, tolerance, worst: None };
    if total == 0 {
        return Ok(report);
    }
    let mut flat: Vec<usize> = if total <= samples {
        (0..total).collect()
    } else {
        let mut r = rng::rng_from(seed, &[]);
        rand::seq::index::sample(&mut r, total, samples).into_vec()
    };
    flat.sort_unstable();

    let locate = |mut k: usize| {
        for (p, &s) in sizes.iter().enumerate() {
            if k < s {
                return (p, k);
            }
            k -= s;
        }
        unreachable!("coordinate within total")
    };

    let mut worst_fail: Option<GradSample> = None;
    for k in flat {
        let (p, i) = locate(k);
        let (analytic, original) = {
            let params = objective.parameters_mut();
            (params[p].grad.data()[i], params[p].value.data()[i])
        };
        let eval_at = |x: f64, objective: &mut O| -> Result<f64> {
            objective.parameters_mut()[p].value.data_mut()[i] = x;
            objective.loss()
        };
        let plus = eval_at(original + epsilon, objective)?;
        let minus = eval_at(original - epsilon, objective)?;
        eval_at(original, objective)?;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let sample = GradSample { param: names[p].clone(), index: i, analytic, numeric, rel_error: relative_error(analytic, numeric) };
        report.checked += 1;
        if report.worst.as_ref().is_none_or(|w| sample.rel_error > w.rel_error) {
            report.worst = Some(sample.clone());
        }
        if !(sample.rel_error < tolerance) && worst_fail.as_ref().is_none_or(|w| sample.rel_error > w.rel_error) {
            worst_fail = Some(sample);
        }
    }
    match worst_fail {
        Some(s) => Err(NnError::CheckFailed {
            param: s.param,
            index: s.index,
            analytic: s.analytic,
            numeric: s.numeric,
            rel_error: s.rel_error,
            tolerance,
        }),
        None => Ok(report),
    }
}
