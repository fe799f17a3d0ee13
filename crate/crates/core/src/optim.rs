//! AdamW with decoupled weight decay, and the cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Adam moment hyperparameters. Weight decay is decoupled: it never enters
/// the moment accumulators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn with_weight_decay(weight_decay: f64) -> Self {
        AdamConfig {
            weight_decay,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!(
                "adam betas must lie in [0, 1), got ({}, {})",
                self.beta1, self.beta2
            )));
        }
        if !(self.epsilon > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "adam epsilon must be positive and weight decay nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Per-tensor first/second moment state.
#[derive(Debug, Clone)]
pub struct AdamW<T: Real> {
    config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> AdamW<T> {
    pub fn new(config: AdamConfig, tensor_lens: &[usize]) -> Self {
        AdamW {
            config,
            m: tensor_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: tensor_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update: `theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)`.
    /// Aborts without touching parameters or state if any gradient entry is
    /// non-finite.
    pub fn step(&mut self, params: &mut [&mut Vec<T>], grads: &[Vec<T>], lr: T) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                actual: params.len().max(grads.len()),
            });
        }
        for (t, g) in grads.iter().enumerate() {
            if let Some(e) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    tensor: format!("tensor {t}"),
                    element: e,
                });
            }
        }
        self.step += 1;
        let b1 = T::of(self.config.beta1);
        let b2 = T::of(self.config.beta2);
        let eps = T::of(self.config.epsilon);
        let wd = T::of(self.config.weight_decay);
        let bc1 = T::one() - T::of(self.config.beta1.powi(self.step as i32));
        let bc2 = T::one() - T::of(self.config.beta2.powi(self.step as i32));
        for ((theta, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for k in 0..theta.len() {
                m[k] = b1 * m[k] + (T::one() - b1) * g[k];
                v[k] = b2 * v[k] + (T::one() - b2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                theta[k] = theta[k] - lr * (m_hat / (v_hat.sqrt() + eps) + wd * theta[k]);
            }
        }
        Ok(())
    }
}

/// Cosine annealing from `eta0` down to zero over `total` steps.
pub fn cosine_lr<T: Real>(step: u64, total: u64, eta0: T) -> Result<T> {
    if step > total {
        return Err(Error::Schedule { step, total });
    }
    if total == 0 {
        return Ok(eta0);
    }
    let frac = step as f64 / total as f64;
    Ok(T::of(0.5) * eta0 * (T::one() + T::of((std::f64::consts::PI * frac).cos())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 2.0f64).unwrap(), 2.0);
        assert!(cosine_lr(100, 100, 2.0f64).unwrap().abs() < 1e-15);
        assert!((cosine_lr(50, 100, 2.0f64).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            cosine_lr(101, 100, 2.0),
            Err(Error::Schedule { .. })
        ));
    }

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let mut opt = AdamW::<f64>::new(AdamConfig::default(), &[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        let orig = p.clone();
        opt.step(&mut [&mut p], &[vec![0.0; 3]], 0.1).unwrap();
        assert_eq!(p, orig);
    }

    #[test]
    fn first_step_moves_against_gradient_sign() {
        let mut opt = AdamW::<f64>::new(AdamConfig::default(), &[2]);
        let mut p = vec![0.0, 0.0];
        let g = vec![0.37, -1.4];
        opt.step(&mut [&mut p], &[g.clone()], 0.01).unwrap();
        // bias correction makes m_hat = g and v_hat = g^2 on step one, so the
        // update is -lr * g / (|g| + eps) = -lr * sign(g), up to eps.
        for k in 0..2 {
            let expected = -0.01 * g[k].signum();
            assert!((p[k] - expected).abs() < 1e-8);
        }
    }

    /// Three scripted steps on a scalar parameter, cross-checked against
    /// hand-computed values.
    #[test]
    fn scripted_three_step_trace() {
        let cfg = AdamConfig {
            weight_decay: 0.01,
            ..Default::default()
        };
        let mut opt = AdamW::<f64>::new(cfg, &[1]);
        let mut p = vec![0.5];
        let expected = [
            0.39950000333333324,
            0.3846484509252635,
            0.3564129123803387,
        ];
        for (g, want) in [0.3, -0.2, 0.1].into_iter().zip(expected) {
            opt.step(&mut [&mut p], &[vec![g]], 0.1).unwrap();
            assert!(
                (p[0] - want).abs() < 1e-12,
                "trace mismatch: {} vs {want}",
                p[0]
            );
        }
    }

    #[test]
    fn non_finite_gradient_aborts_step() {
        let mut opt = AdamW::<f64>::new(AdamConfig::default(), &[2]);
        let mut p = vec![1.0, 2.0];
        let err = opt
            .step(&mut [&mut p], &[vec![0.1, f64::NAN]], 0.1)
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { element: 1, .. }));
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn decay_only_when_loss_gradient_vanishes() {
        let cfg = AdamConfig {
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut opt = AdamW::<f64>::new(cfg, &[1]);
        let mut p = vec![2.0];
        opt.step(&mut [&mut p], &[vec![0.0]], 0.1).unwrap();
        assert!((p[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }
}
