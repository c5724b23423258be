use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimizer and loop settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Step size of the two raw regularization scalars; `None` uses
    /// `learning_rate`.
    pub scalar_learning_rate: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            scalar_learning_rate: None,
            epochs: 10,
            batch_size: 1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if let Some(r) = self.scalar_learning_rate {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(Error::Config(format!("scalar_learning_rate must be >= 0, got {r}")));
            }
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config(format!("adam_eps must be positive, got {}", self.adam_eps)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected ADAM update of `params` in place. Entries with
/// `mask[i] == false` are left untouched, moments included.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &TrainConfig, mask: Option<&[bool]>) -> Result<()> {
    let rates = vec![cfg.learning_rate; params.len()];
    adam_step_with_rates(params, grads, state, cfg, mask, &rates)
}

/// [`adam_step`] with a step size per parameter.
pub fn adam_step_with_rates(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &TrainConfig,
    mask: Option<&[bool]>,
    rates: &[f64],
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || rates.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "adam: {} params, {} grads, {} state entries",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient passed to adam_step".into()));
    }
    state.t += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..params.len() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= rates[i] * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = TrainConfig::default();
        let mut p = vec![0.5, -1.0, 2.0];
        let before = p.clone();
        let mut st = AdamState::new(3);
        adam_step(&mut p, &[1.0, 1.0, 1.0], &mut st, &cfg, None).unwrap();
        for (a, b) in p.iter().zip(&before) {
            assert!(((a - b) + cfg.learning_rate).abs() <= cfg.learning_rate * 1e-6);
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let cfg = TrainConfig::default();
        let mut p = vec![0.25, -3.0];
        let mut st = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut st, &cfg, None).unwrap();
        assert_eq!(p, vec![0.25, -3.0]);
    }

    #[test]
    fn first_step_opposes_gradient_sign() {
        let cfg = TrainConfig { learning_rate: 0.01, ..Default::default() };
        let g = [3.0, -0.2, 1e-3, -7.0];
        let mut p = vec![0.0; 4];
        let mut st = AdamState::new(4);
        adam_step(&mut p, &g, &mut st, &cfg, None).unwrap();
        for (u, gi) in p.iter().zip(&g) {
            assert_eq!(u.signum(), -gi.signum());
        }
    }

    #[test]
    fn masked_entries_are_frozen_and_bad_input_rejected() {
        let cfg = TrainConfig::default();
        let mut p = vec![1.0, 1.0];
        let mut st = AdamState::new(2);
        adam_step(&mut p, &[5.0, 5.0], &mut st, &cfg, Some(&[false, true])).unwrap();
        assert_eq!(p[0], 1.0);
        assert!(p[1] < 1.0);
        assert!(adam_step(&mut p, &[f64::NAN, 0.0], &mut st, &cfg, None).is_err());
        assert!(adam_step(&mut p, &[0.0], &mut st, &cfg, None).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { adam_beta1: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..Default::default() }.validate().is_err());
    }
}
