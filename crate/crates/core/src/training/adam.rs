use super::TrainError;
use crate::nn::Parameter;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// One Adam update with bias correction and coupled L2 decay
/// (`g ← g + wd·θ` before the moment update, only for parameters flagged
/// `decay`). Every parameter must carry a gradient from a backward pass;
/// gradients are zeroed afterwards.
pub fn adam_step<'a, I>(params: I, learning_rate: f64, weight_decay: f64) -> Result<(), TrainError>
where
    I: IntoIterator<Item = &'a mut Parameter>,
{
    let mut params: Vec<&mut Parameter> = params.into_iter().collect();
    if let Some(p) = params.iter().find(|p| !p.has_grad()) {
        return Err(TrainError::NoGradient(p.name.clone()));
    }
    for p in params.iter_mut() {
        p.step_count += 1;
        let t = p.step_count as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let wd = if p.decay { weight_decay } else { 0.0 };
        let Parameter { value, grad, m, v, .. } = &mut **p;
        for (((x, g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m.data_mut()).zip(v.data_mut()) {
            let g = g + wd * *x;
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *x -= learning_rate * m_hat / (v_hat.sqrt() + EPSILON);
        }
        p.zero_grad();
    }
    Ok(())
}
