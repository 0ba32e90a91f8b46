use serde::{Deserialize, Serialize};

use crate::autodiff::params::ParamSet;
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..AdamConfig::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam moments for one [`ParamSet`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState { config, step: 0, first: zeros.clone(), second: zeros }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.second
    }

    /// Applies one update in place. Fails without touching `params` when a
    /// gradient's shape disagrees with its parameter.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || grads.len() != self.first.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("parameter '{}' is {:?}, gradient is {:?}", name, p.shape(), g.shape()),
                ));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.tensors_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        if !params.is_finite() {
            return Err(Error::NonFinite(format!("parameters after Adam step {}", self.step)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::from_vec(vec![v]));
        p
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = scalar_params(1.5);
        let mut state = AdamState::new(AdamConfig::default(), &p);
        for _ in 0..5 {
            state.step(&mut p, &[Tensor::from_vec(vec![0.0])]).unwrap();
        }
        assert_eq!(p.get("w").unwrap().data(), &[1.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = 1, v_hat = 1 after bias correction, so the step is lr/(1+eps).
        let mut p = scalar_params(0.0);
        let mut state = AdamState::new(AdamConfig::with_lr(0.1), &p);
        state.step(&mut p, &[Tensor::from_vec(vec![1.0])]).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((p.get("w").unwrap().item() - expected).abs() < 1e-15);
    }

    #[test]
    fn repeated_steps_accumulate_moments() {
        let mut p = scalar_params(0.0);
        let mut state = AdamState::new(AdamConfig::default(), &p);
        let g = [Tensor::from_vec(vec![2.0])];
        state.step(&mut p, &g).unwrap();
        state.step(&mut p, &g).unwrap();
        assert_eq!(state.step_count(), 2);
        // m = 0.1*2 after one step, then 0.9*0.2 + 0.1*2
        assert!((state.first_moments()[0].item() - 0.38).abs() < 1e-12);
        let v = 0.999 * 0.001 * 4.0 + 0.001 * 4.0;
        assert!((state.second_moments()[0].item() - v).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = scalar_params(0.0);
        let mut state = AdamState::new(AdamConfig::default(), &p);
        let err = state.step(&mut p, &[Tensor::from_vec(vec![1.0, 2.0])]).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
        assert_eq!(state.step_count(), 0);
    }
}
