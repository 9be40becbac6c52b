//! Adam with bias correction and the cosine-warmup learning-rate schedule.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Adam accumulators over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimState {
    pub fn new(param_len: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; param_len],
            v: vec![0.0; param_len],
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update: `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam shapes differ: params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as f64;
    let mc = 1.0 - libm::pow(BETA1, t);
    let vc = 1.0 - libm::pow(BETA2, t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * g;
        state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * g * g;
        let m_hat = state.m[i] / mc;
        let v_hat = state.v[i] / vc;
        params[i] -= lr * m_hat / (math::sqrt(v_hat) + EPS);
    }
    Ok(())
}

/// Linear warmup from 0 to `lr0` over `warmup` steps, then cosine decay to
/// 0 at `t == total`.
pub fn lr_schedule(t: usize, total: usize, warmup: usize, lr0: f64) -> Result<f64> {
    if t >= total {
        return Err(Error::Range(format!("step {t} outside schedule of {total}")));
    }
    if warmup >= total {
        return Err(Error::Range(format!(
            "warmup {warmup} must be shorter than total {total}"
        )));
    }
    if t < warmup {
        return Ok(lr0 * t as f64 / warmup as f64);
    }
    let progress = (t - warmup) as f64 / (total - warmup) as f64;
    Ok(lr0 * 0.5 * (1.0 + math::cos(core::f64::consts::PI * progress)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![1.5, -2.0];
        let mut state = OptimState::new(2);
        for _ in 0..50 {
            adam_step(&mut params, &[0.0, 0.0], &mut state, 0.1).unwrap();
        }
        assert_eq!(params, vec![1.5, -2.0]);
    }

    #[test]
    fn first_step_approximates_signed_lr() {
        // Bias correction makes m_hat = g and v_hat = g^2 on step one, so the
        // update is -lr * g / (|g| + eps).
        let lr = 0.01;
        for g in [2.0, -0.5, 1e-3] {
            let mut params = vec![0.0];
            let mut state = OptimState::new(1);
            adam_step(&mut params, &[g], &mut state, lr).unwrap();
            let expected = -lr * g / (g.abs() + 1e-8);
            assert!((params[0] - expected).abs() < 1e-15);
            assert!((params[0] + lr * g.signum()).abs() < 1e-6 * lr.max(1.0));
        }
    }

    #[test]
    fn identical_calls_are_bit_identical() {
        let run = || {
            let mut params = vec![0.3, -0.7, 2.0];
            let mut state = OptimState::new(3);
            for k in 0..20 {
                let g = [0.1 * k as f64, -0.2, 0.05];
                adam_step(&mut params, &g, &mut state, 0.05).unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut params = vec![0.0; 3];
        let mut state = OptimState::new(3);
        assert!(matches!(
            adam_step(&mut params, &[0.0; 2], &mut state, 0.1),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn schedule_hits_lr0_at_warmup_end() {
        let lr0 = 0.001;
        assert_eq!(lr_schedule(100, 1000, 100, lr0).unwrap(), lr0);
    }

    #[test]
    fn schedule_linear_midpoint() {
        let lr0 = 0.4;
        assert_eq!(lr_schedule(50, 1000, 100, lr0).unwrap(), lr0 / 2.0);
    }

    #[test]
    fn schedule_matches_cosine_formula_near_end() {
        let lr0 = 1.0;
        let total = 10_000;
        let got = lr_schedule(total - 1, total, 0, lr0).unwrap();
        let expected = lr0 * (1.0 - (core::f64::consts::PI / total as f64).cos()) / 2.0;
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
        assert!(got < 1e-6);
    }

    #[test]
    fn schedule_rejects_out_of_range_step() {
        assert!(matches!(
            lr_schedule(10, 10, 0, 0.1),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn schedule_starts_at_zero_with_warmup() {
        assert_eq!(lr_schedule(0, 100, 10, 0.5).unwrap(), 0.0);
    }
}
