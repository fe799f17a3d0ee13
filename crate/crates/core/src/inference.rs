//! Exact inference over the constrained joint distribution on the hierarchy.
//!
//! The joint assigns mass `exp(s . y)` to every valid configuration `y` and
//! zero to invalid ones. The partition function, marginals, and the marginal
//! Jacobian are computed by a sweep over the cached valid-configuration list,
//! accumulating in the log domain with a max shift so that scores of several
//! hundred stay finite.

use crate::error::{Error, Result};
use crate::hierarchy::{HierarchyGraph, LabelConfig};
use crate::scalar::Real;

/// Per-node raw scores: the natural parameters of the joint.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector<T: Real> {
    values: Vec<T>,
}

impl<T: Real> ScoreVector<T> {
    /// Errors on non-finite entries.
    pub fn new(values: Vec<T>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "score vector has non-finite entry at index {i}"
            )));
        }
        Ok(ScoreVector { values })
    }

    pub fn zeros(len: usize) -> Self {
        ScoreVector {
            values: vec![T::zero(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }
}

/// Per-node marginal probabilities `p(y_i = 1 | x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalVector<T: Real> {
    values: Vec<T>,
}

impl<T: Real> MarginalVector<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> T {
        self.values[i]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }
}

/// `J[i][j] = d p_i / d s_j`, the covariance of `y` under the posterior.
#[derive(Debug, Clone)]
pub struct MarginalJacobian<T: Real> {
    size: usize,
    data: Vec<T>,
}

impl<T: Real> MarginalJacobian<T> {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.size + j]
    }

    /// `out = J v` (J is symmetric, so this is also the transpose product).
    pub fn apply(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.size);
        (0..self.size)
            .map(|i| {
                let row = &self.data[i * self.size..(i + 1) * self.size];
                row.iter().zip(v).map(|(&a, &b)| a * b).sum()
            })
            .collect()
    }
}

fn check_dims<T: Real>(graph: &HierarchyGraph, s: &ScoreVector<T>) -> Result<()> {
    if s.len() != graph.len() {
        return Err(Error::DimensionMismatch {
            expected: graph.len(),
            actual: s.len(),
        });
    }
    Ok(())
}

fn dot_mask<T: Real>(s: &[T], mask: u32) -> T {
    let mut acc = T::zero();
    let mut m = mask;
    while m != 0 {
        let i = m.trailing_zeros() as usize;
        acc += s[i];
        m &= m - 1;
    }
    acc
}

/// Unnormalized mass of one configuration: `exp(s . y)` when valid, else 0.
pub fn unnormalized_mass<T: Real>(
    graph: &HierarchyGraph,
    s: &ScoreVector<T>,
    y: &LabelConfig,
) -> Result<T> {
    check_dims(graph, s)?;
    if !graph.is_valid(y)? {
        return Ok(T::zero());
    }
    Ok(dot_mask(s.values(), y.to_mask()).exp())
}

/// Log masses over the cached valid configurations, plus their running max.
fn log_masses<T: Real>(graph: &HierarchyGraph, s: &ScoreVector<T>) -> Result<(Vec<T>, T)> {
    check_dims(graph, s)?;
    let masks = graph.valid_masks()?;
    let mut max = T::neg_infinity();
    let values: Vec<T> = masks
        .iter()
        .map(|&m| {
            let v = dot_mask(s.values(), m);
            if v > max {
                max = v;
            }
            v
        })
        .collect();
    Ok((values, max))
}

/// Log partition function, max-shifted for overflow safety.
///
/// The all-zero configuration is always valid and contributes mass 1, so the
/// result is never negative.
pub fn log_partition<T: Real>(graph: &HierarchyGraph, s: &ScoreVector<T>) -> Result<T> {
    let (lm, max) = log_masses(graph, s)?;
    let sum: T = lm.iter().map(|&v| (v - max).exp()).sum();
    let logz = max + sum.ln();
    debug_assert!(logz >= T::of(-1e-9), "log Z must be nonnegative");
    Ok(logz)
}

/// Partition function `Z`. Overflows to infinity only when `Z` itself exceeds
/// the scalar range; use [`log_partition`] in that regime.
pub fn partition<T: Real>(graph: &HierarchyGraph, s: &ScoreVector<T>) -> Result<T> {
    Ok(log_partition(graph, s)?.exp())
}

/// Posterior probability of every valid configuration, in cache order.
pub fn posterior_weights<T: Real>(graph: &HierarchyGraph, s: &ScoreVector<T>) -> Result<Vec<T>> {
    let (lm, max) = log_masses(graph, s)?;
    let shifted: Vec<T> = lm.iter().map(|&v| (v - max).exp()).collect();
    let z: T = shifted.iter().copied().sum();
    Ok(shifted.into_iter().map(|w| w / z).collect())
}

/// Marginal probability that node `i` is active.
pub fn marginal<T: Real>(graph: &HierarchyGraph, s: &ScoreVector<T>, i: usize) -> Result<T> {
    if i >= graph.len() {
        return Err(Error::IndexOutOfRange {
            index: i,
            size: graph.len(),
        });
    }
    Ok(all_marginals(graph, s)?.get(i))
}

/// All marginals in one sweep over the valid-configuration cache.
pub fn all_marginals<T: Real>(
    graph: &HierarchyGraph,
    s: &ScoreVector<T>,
) -> Result<MarginalVector<T>> {
    let weights = posterior_weights(graph, s)?;
    let masks = graph.valid_masks()?;
    let mut p = vec![T::zero(); graph.len()];
    for (&mask, &w) in masks.iter().zip(&weights) {
        let mut m = mask;
        while m != 0 {
            let i = m.trailing_zeros() as usize;
            p[i] += w;
            m &= m - 1;
        }
    }
    Ok(MarginalVector { values: p })
}

/// Exact Jacobian of the marginals with respect to the scores: the posterior
/// covariance `E[y yT] - p pT`.
pub fn marginal_jacobian<T: Real>(
    graph: &HierarchyGraph,
    s: &ScoreVector<T>,
) -> Result<MarginalJacobian<T>> {
    let weights = posterior_weights(graph, s)?;
    let masks = graph.valid_masks()?;
    let c = graph.len();
    let mut second = vec![T::zero(); c * c];
    let mut p = vec![T::zero(); c];
    for (&mask, &w) in masks.iter().zip(&weights) {
        let mut bits = Vec::with_capacity(mask.count_ones() as usize);
        let mut m = mask;
        while m != 0 {
            bits.push(m.trailing_zeros() as usize);
            m &= m - 1;
        }
        for &i in &bits {
            p[i] += w;
            for &j in &bits {
                second[i * c + j] += w;
            }
        }
    }
    let mut data = vec![T::zero(); c * c];
    for i in 0..c {
        for j in 0..c {
            data[i * c + j] = second[i * c + j] - p[i] * p[j];
        }
    }
    Ok(MarginalJacobian { size: c, data })
}
