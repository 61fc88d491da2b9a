//! Adam on the real view of complex parameters.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::specnet::{Gradients, SpecNetParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-2, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Step count and moment estimates, one entry per real parameter in the
/// order alpha, beta, gamma with real and imaginary parts interleaved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(params: &SpecNetParams, config: AdamConfig) -> Self {
        let n = params.real_param_count();
        Self { config, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut SpecNetParams, grads: &Gradients, state: &mut OptimizerState) -> Result<()> {
    let n = params.real_param_count();
    if state.m.len() != n || state.v.len() != n || grads.alpha.len() != params.alpha.len() {
        return Err(contract("optimizer state, gradients and parameters have different shapes"));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite(format!("gradient at optimizer step {}", state.step + 1)));
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.step += 1;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    let mut slot = 0;
    for (p, g) in
        [(&mut params.alpha, &grads.alpha), (&mut params.beta, &grads.beta), (&mut params.gamma, &grads.gamma)]
    {
        for (pc, gc) in p.iter_mut().zip(g) {
            for (x, gx) in [(&mut pc.re, gc.re), (&mut pc.im, gc.im)] {
                let m = &mut state.m[slot];
                let v = &mut state.v[slot];
                *m = beta1 * *m + (1.0 - beta1) * gx;
                *v = beta2 * *v + (1.0 - beta2) * gx * gx;
                *x -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                slot += 1;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = SpecNetParams::random(2, 2, 1, 1).unwrap();
        let before = p.clone();
        let mut st = OptimizerState::new(&p, AdamConfig::default());
        let g = Gradients::zeros_like(&p);
        adam_step(&mut p, &g, &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_is_sign_like() {
        let mut p = SpecNetParams::zeros(2, 1, 1).unwrap();
        let mut g = Gradients::zeros_like(&p);
        g.alpha[0] = Complex64::new(3.0, -0.5);
        g.gamma[2] = Complex64::new(-1e-3, 0.0);
        let mut st = OptimizerState::new(&p, AdamConfig::with_lr(0.1));
        adam_step(&mut p, &g, &mut st).unwrap();
        let want = |x: f64| -0.1 * x / (x.abs() + 1e-8);
        assert!((p.alpha[0].re - want(3.0)).abs() < 1e-12);
        assert!((p.alpha[0].im - want(-0.5)).abs() < 1e-12);
        assert!((p.gamma[2].re - want(-1e-3)).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = SpecNetParams::zeros(2, 1, 1).unwrap();
        let mut g = Gradients::zeros_like(&p);
        g.beta[1] = Complex64::new(f64::NAN, 0.0);
        let mut st = OptimizerState::new(&p, AdamConfig::default());
        assert!(matches!(adam_step(&mut p, &g, &mut st), Err(Error::NonFinite(_))));
    }
}
