use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one buffer per parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        AdamState {
            config,
            m: sizes.iter().map(|&s| vec![T::zero(); s]).collect(),
            v: sizes.iter().map(|&s| vec![T::zero(); s]).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update with learning rate `lr`.
pub fn adam_step<T: Scalar>(params: &mut [&mut [T]], grads: &[&[T]], state: &mut AdamState<T>, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam got {} parameter buffers, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::Shape("adam buffer length mismatch".into()));
        }
    }
    state.step += 1;
    let cfg = state.config;
    let t = state.step as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::one() - T::of(cfg.beta1.powi(t));
    let c2 = T::one() - T::of(cfg.beta2.powi(t));
    let (lr, eps) = (T::of(lr), T::of(cfg.eps));
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (T::one() - b1) * g[i];
            v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Step schedule: `base_lr / 10^k` where `k` counts milestones `<= step`.
pub fn lr_schedule(step: usize, base_lr: f64, milestones: &[usize]) -> f64 {
    let passed = milestones.iter().filter(|&&m| m <= step).count();
    base_lr * 10f64.powi(-(passed as i32))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![1.0f64, -2.0, 3.0];
        let mut st = AdamState::new(AdamConfig::default(), &[3]);
        adam_step(&mut [&mut p[..]], &[&[0.0; 3][..]], &mut st, 0.1).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn constant_gradient_steps_follow_closed_form() {
        // with g constant, m_hat = g and v_hat = g^2 after bias correction, so
        // every step moves by lr * |g| / (|g| + eps)
        let (lr, g) = (0.01, -0.3f64);
        let cfg = AdamConfig::default();
        let expected = lr * g.abs() / (g.abs() + cfg.eps);
        let mut p = [0.0f64];
        let mut st = AdamState::new(cfg, &[1]);
        for _ in 0..200 {
            let before = p[0];
            adam_step(&mut [&mut p[..]], &[&[g][..]], &mut st, lr).unwrap();
            let delta = p[0] - before;
            assert!(delta > 0.0);
            assert!((delta - expected).abs() < 1e-12, "{delta} vs {expected}");
            assert!(delta <= lr);
        }
    }

    #[test]
    fn deterministic_updates() {
        let run = || {
            let mut p = vec![0.5f32, 0.25];
            let mut st = AdamState::new(AdamConfig::default(), &[2]);
            for i in 0..50 {
                let g = [(i as f32 * 0.37).sin(), (i as f32 * 0.11).cos()];
                adam_step(&mut [&mut p[..]], &[&g[..]], &mut st, 1e-2).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        assert_eq!(a[0].to_bits(), b[0].to_bits());
        assert_eq!(a[1].to_bits(), b[1].to_bits());
    }

    #[test]
    fn length_mismatch_is_error() {
        let mut p = [0.0f64; 2];
        let mut st = AdamState::new(AdamConfig::default(), &[2]);
        assert!(adam_step(&mut [&mut p[..]], &[&[0.0][..]], &mut st, 0.1).is_err());
    }

    #[test]
    fn tenfold_schedule() {
        let ms = [10, 20];
        assert_eq!(lr_schedule(0, 1e-3, &ms), 1e-3);
        assert_eq!(lr_schedule(9, 1e-3, &ms), 1e-3);
        assert!((lr_schedule(10, 1e-3, &ms) - 1e-4).abs() < 1e-18);
        assert!((lr_schedule(25, 1e-3, &ms) - 1e-5).abs() < 1e-18);
    }
}
