//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{CgmError, Result};
use crate::tensor::Tensor;

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.5,
            beta2: 0.99,
        }
    }
}

/// First and second moment buffers, one pair per parameter tensor.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update of every parameter in place.
///
/// `grads[i]` is the gradient of `params[i]`; `None` means the parameter did
/// not influence the loss and is treated as a zero gradient.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Option<&Tensor>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(CgmError::contract(format!(
            "adam: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if state.m[i].len() != p.len() {
            return Err(CgmError::shape("adam_step", p.shape(), &[state.m[i].len()]));
        }
        if let Some(g) = g {
            if g.shape() != p.shape() {
                return Err(CgmError::shape("adam_step", p.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(CgmError::NonFinite(format!("gradient of parameter {i}")));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let g = grads[i].map(|g| g.data());
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let gj = g.map_or(0.0, |g| g[j]);
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            *w -= cfg.lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(p0: f64, gs: &[f64], cfg: &AdamConfig) -> f64 {
        let mut p = Tensor::new(&[1], vec![p0]).unwrap();
        let mut st = AdamState::new(&[&p]);
        for &g in gs {
            let gt = Tensor::new(&[1], vec![g]).unwrap();
            adam_step(&mut [&mut p], &[Some(&gt)], &mut st, cfg).unwrap();
        }
        p.data()[0]
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let cfg = AdamConfig::default();
        assert_eq!(run(1.5, &[0.0; 10], &cfg), 1.5);
    }

    #[test]
    fn first_step_hand_trace() {
        let cfg = AdamConfig::default();
        // m1 = 0.5·0.3 = 0.15, v1 = 0.01·0.09 = 0.0009;
        // mhat = 0.15/0.5 = 0.3, vhat = 0.0009/0.01 = 0.09, sqrt = 0.3.
        let expected = 2.0 - 1e-3 * 0.3 / (0.3 + 1e-8);
        assert!((run(2.0, &[0.3], &cfg) - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_steps_by_lr() {
        let cfg = AdamConfig::default();
        let before = run(0.0, &[-4.0; 199], &cfg);
        let after = run(0.0, &[-4.0; 200], &cfg);
        assert!(((after - before) - cfg.lr).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let mut p = Tensor::zeros(&[2]);
        let mut st = AdamState::new(&[&p]);
        let g = Tensor::zeros(&[3]);
        let err = adam_step(&mut [&mut p], &[Some(&g)], &mut st, &AdamConfig::default());
        assert!(matches!(err, Err(CgmError::Shape { .. })));
    }
}
