//! Fidelity and cross-entropy losses, and the observed-label weighted
//! multitask batch objective.
//!
//! The fidelity loss `1 - sqrt(p q) - sqrt((1-p)(1-q))` is bounded in [0, 1],
//! unlike cross-entropy, so hard examples cannot dominate the weighted sum.
//! Predicted probabilities are clamped away from {0, 1} before any sqrt/log
//! since exact marginals can reach the boundary at extreme scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{HierarchyGraph, LabelConfig, Level, ObservedSet};
use crate::inference::MarginalVector;
use crate::scalar::Real;

/// Clamp applied to predicted probabilities inside both losses.
pub const PROB_CLAMP: f64 = 1e-9;

/// Which per-label loss the batch objective uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    Fidelity,
    CrossEntropy,
}

impl LossMode {
    pub fn loss<T: Real>(self, p: T, p_hat: T) -> Result<T> {
        match self {
            LossMode::Fidelity => fidelity_loss(p, p_hat),
            LossMode::CrossEntropy => Ok(cross_entropy_loss(p, p_hat)),
        }
    }

    pub fn grad<T: Real>(self, p: T, p_hat: T) -> T {
        match self {
            LossMode::Fidelity => fidelity_loss_grad(p, p_hat),
            LossMode::CrossEntropy => cross_entropy_loss_grad(p, p_hat),
        }
    }
}

fn clamp_prob<T: Real>(p_hat: T) -> T {
    let lo = T::of(PROB_CLAMP);
    let hi = T::one() - lo;
    p_hat.max(lo).min(hi)
}

/// Guard against the singular end only, so exact predictions keep an exact
/// zero loss.
fn floor_prob<T: Real>(q: T) -> T {
    q.max(T::of(PROB_CLAMP))
}

fn check_prob_domain<T: Real>(p_hat: T) -> Result<()> {
    let slack = T::of(1e-12);
    if !p_hat.is_finite() || p_hat < -slack || p_hat > T::one() + slack {
        return Err(Error::Domain(format!(
            "predicted probability {p_hat} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Fidelity loss between a target probability `p` and a prediction `p_hat`.
/// For binary `p` this is `1 - sqrt(p_hat)` when `p = 1` and
/// `1 - sqrt(1 - p_hat)` when `p = 0`.
pub fn fidelity_loss<T: Real>(p: T, p_hat: T) -> Result<T> {
    check_prob_domain(p_hat)?;
    let q = p_hat.max(T::zero()).min(T::one());
    Ok(T::one()
        - (p * floor_prob(q)).sqrt()
        - ((T::one() - p) * floor_prob(T::one() - q)).sqrt())
}

/// Derivative of the fidelity loss in `p_hat`. Terms with a zero numerator
/// contribute zero.
pub fn fidelity_loss_grad<T: Real>(p: T, p_hat: T) -> T {
    let q = clamp_prob(p_hat);
    let two = T::of(2.0);
    let mut g = T::zero();
    if p > T::zero() {
        g -= p / (two * (p * q).sqrt());
    }
    if p < T::one() {
        g += (T::one() - p) / (two * ((T::one() - p) * (T::one() - q)).sqrt());
    }
    g
}

/// Binary cross-entropy with the same probability clamp.
pub fn cross_entropy_loss<T: Real>(p: T, p_hat: T) -> T {
    let q = p_hat.max(T::zero()).min(T::one());
    let mut l = T::zero();
    if p > T::zero() {
        l -= p * floor_prob(q).ln();
    }
    if p < T::one() {
        l -= (T::one() - p) * floor_prob(T::one() - q).ln();
    }
    l
}

pub fn cross_entropy_loss_grad<T: Real>(p: T, p_hat: T) -> T {
    let q = clamp_prob(p_hat);
    let mut g = T::zero();
    if p > T::zero() {
        g -= p / q;
    }
    if p < T::one() {
        g += (T::one() - p) / (T::one() - q);
    }
    g
}

/// The three level-shared loss weights, optimized at the outer level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaGroups<T: Real> {
    pub primary: T,
    pub global: T,
    pub local: T,
}

impl<T: Real> LambdaGroups<T> {
    pub fn new(primary: T, global: T, local: T) -> Result<Self> {
        for (name, v) in [("primary", primary), ("global", global), ("local", local)] {
            if !v.is_finite() || v < T::zero() {
                return Err(Error::Domain(format!(
                    "loss weight {name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(LambdaGroups {
            primary,
            global,
            local,
        })
    }

    pub fn ones() -> Self {
        LambdaGroups {
            primary: T::one(),
            global: T::one(),
            local: T::one(),
        }
    }

    pub fn weight_for(&self, level: Level) -> T {
        match level {
            Level::Root => self.primary,
            Level::Global => self.global,
            Level::Local => self.local,
        }
    }

    pub fn as_array(&self) -> [T; 3] {
        [self.primary, self.global, self.local]
    }

    pub fn from_array(a: [T; 3]) -> Result<Self> {
        Self::new(a[0], a[1], a[2])
    }

    /// Projection onto the nonnegative orthant.
    pub fn clamp_nonnegative(&mut self) {
        self.primary = self.primary.max(T::zero());
        self.global = self.global.max(T::zero());
        self.local = self.local.max(T::zero());
    }
}

pub fn group_index(level: Level) -> usize {
    match level {
        Level::Root => 0,
        Level::Global => 1,
        Level::Local => 2,
    }
}

/// One training example: input features, full ground-truth labels, and the
/// subset of labels whose ground truth is actually known. The loss only ever
/// reads `y` at observed indices.
#[derive(Debug, Clone)]
pub struct LabeledExample<T: Real> {
    pub x: Vec<T>,
    pub y: LabelConfig,
    pub observed: ObservedSet,
}

/// Batch objective value along with the per-group unweighted sums.
///
/// The objective is linear in the loss weights, so the gradient with respect
/// to each group weight is exactly the group's unweighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss<T: Real> {
    pub total: T,
    pub group_sums: [T; 3],
}

/// Mean over the batch of the weighted sum of per-observed-label losses.
pub fn batch_loss<T: Real>(
    graph: &HierarchyGraph,
    examples: &[LabeledExample<T>],
    marginals: &[MarginalVector<T>],
    lambda: &LambdaGroups<T>,
    mode: LossMode,
) -> Result<BatchLoss<T>> {
    if examples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if examples.len() != marginals.len() {
        return Err(Error::DimensionMismatch {
            expected: examples.len(),
            actual: marginals.len(),
        });
    }
    let k = T::of(examples.len() as f64);
    let mut group_sums = [T::zero(); 3];
    for (example, p_hat) in examples.iter().zip(marginals) {
        if p_hat.len() != graph.len() {
            return Err(Error::DimensionMismatch {
                expected: graph.len(),
                actual: p_hat.len(),
            });
        }
        for i in example.observed.iter() {
            let target = if example.y.get(i) { T::one() } else { T::zero() };
            let l = mode.loss(target, p_hat.get(i))?;
            group_sums[group_index(graph.node(i).level)] += l / k;
        }
    }
    let lam = lambda.as_array();
    let total = (0..3).map(|g| lam[g] * group_sums[g]).sum();
    Ok(BatchLoss { total, group_sums })
}
