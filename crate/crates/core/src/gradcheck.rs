//! Finite-difference audit of every analytic gradient path. All reference
//! values come from central differences of forward evaluations only, so the
//! checks cannot inherit a bug from the reverse-mode code they verify.

use rand::Rng;

use crate::embedding::{EmbeddingConfig, EmbeddingModel, ScoringMode};
use crate::error::Result;
use crate::hierarchy::{build_expanded_ffpp_graph, HierarchyGraph, LabelConfig, ObservedSet};
use crate::inference::{all_marginals, marginal_jacobian, ScoreVector};
use crate::loss::{
    cross_entropy_loss, cross_entropy_loss_grad, fidelity_loss, fidelity_loss_grad, LabeledExample,
    LambdaGroups, LossMode,
};
use crate::rng::RngStreams;
use crate::trainer::{batch_gradients, lookahead_hypergradient};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_error.is_finite() && self.max_error <= self.tolerance
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }
}

/// Guarded relative error: plain ratio for O(1) quantities, absolute
/// comparison below `floor` where central differences bottom out in noise.
fn rel_error(reference: f64, analytic: f64, floor: f64) -> f64 {
    (reference - analytic).abs() / reference.abs().max(analytic.abs()).max(floor)
}

/// Marginal Jacobian against central differences of the marginals.
pub fn check_marginal_jacobian(seed: u64) -> Result<CheckResult> {
    let graph = build_expanded_ffpp_graph();
    let mut streams = RngStreams::from_seed(seed);
    let mut max_error: f64 = 0.0;
    let h = 1e-5;
    for _ in 0..3 {
        let s: Vec<f64> = (0..graph.len())
            .map(|_| streams.data.random_range(-3.0..3.0))
            .collect();
        let jac = marginal_jacobian(&graph, &ScoreVector::new(s.clone())?)?;
        for col in 0..graph.len() {
            let mut plus = s.clone();
            plus[col] += h;
            let mut minus = s.clone();
            minus[col] -= h;
            let pp = all_marginals(&graph, &ScoreVector::new(plus)?)?;
            let pm = all_marginals(&graph, &ScoreVector::new(minus)?)?;
            for row in 0..graph.len() {
                let fd = (pp.get(row) - pm.get(row)) / (2.0 * h);
                max_error = max_error.max(rel_error(fd, jac.get(row, col), 1e-3));
            }
        }
    }
    Ok(CheckResult {
        name: "marginal_jacobian_vs_fd",
        max_error,
        tolerance: 1e-6,
    })
}

fn check_model(seed: u64) -> Result<(HierarchyGraph, EmbeddingModel<f64>, Vec<LabeledExample<f64>>)>
{
    let graph = build_expanded_ffpp_graph();
    let config = EmbeddingConfig {
        input_dim: 16,
        hidden: vec![8],
        embed_dim: 8,
        temperature: 10.0,
        scoring: ScoringMode::InnerProduct,
    };
    let mut streams = RngStreams::from_seed(seed);
    let model = EmbeddingModel::init(&config, graph.len(), &mut streams.init)?;
    let mut batch = Vec::new();
    for k in 0..2 {
        let x: Vec<f64> = (0..16).map(|_| streams.data.random_range(-1.0..1.0)).collect();
        let mut y = LabelConfig::zeros(graph.len());
        if k == 0 {
            for name in ["face", "expression", "physical_inconsistency", "lip", "mouth"] {
                y.set(graph.node_id(name).unwrap(), true);
            }
        }
        batch.push(LabeledExample {
            x,
            y,
            observed: ObservedSet::all(graph.len()),
        });
    }
    Ok((graph, model, batch))
}

/// End-to-end parameter gradients of the weighted fidelity objective through
/// the joint model and the embedding, against central differences.
pub fn check_model_gradients(seed: u64) -> Result<CheckResult> {
    let (graph, model, batch) = check_model(seed)?;
    let lambda = LambdaGroups::new(1.0, 0.6, 0.3)?;
    let (_, grads) = batch_gradients(&model, &graph, &batch, &lambda, LossMode::Fidelity)?;
    let analytic: Vec<f64> = grads.tensors.iter().flatten().copied().collect();

    let theta = model.flatten();
    let mut scratch = model.clone();
    let h = 1e-6;
    let mut objective = |t: &[f64]| -> Result<f64> {
        scratch.unflatten_into(t)?;
        let marginals: Result<Vec<_>> = batch
            .iter()
            .map(|e| all_marginals(&graph, &scratch.scores(&e.x)?))
            .collect();
        Ok(crate::loss::batch_loss(&graph, &batch, &marginals?, &lambda, LossMode::Fidelity)?.total)
    };
    let mut max_error: f64 = 0.0;
    for p in 0..theta.len() {
        let mut t = theta.clone();
        t[p] += h;
        let up = objective(&t)?;
        t[p] -= 2.0 * h;
        let down = objective(&t)?;
        let fd = (up - down) / (2.0 * h);
        max_error = max_error.max(rel_error(fd, analytic[p], 1e-4));
    }
    Ok(CheckResult {
        name: "model_gradients_vs_fd",
        max_error,
        tolerance: 1e-4,
    })
}

/// Derivatives of both per-label losses against central differences.
pub fn check_loss_gradients(seed: u64) -> Result<CheckResult> {
    let mut streams = RngStreams::from_seed(seed);
    let mut max_error: f64 = 0.0;
    let h = 1e-6;
    for _ in 0..200 {
        let p = if streams.data.random::<bool>() { 1.0 } else { 0.0 };
        let q: f64 = streams.data.random_range(0.05..0.95);
        let fd_fid = (fidelity_loss(p, q + h)? - fidelity_loss(p, q - h)?) / (2.0 * h);
        max_error = max_error.max((fd_fid - fidelity_loss_grad(p, q)).abs());
        let fd_ce = (cross_entropy_loss(p, q + h) - cross_entropy_loss(p, q - h)) / (2.0 * h);
        max_error = max_error.max(rel_error(fd_ce, cross_entropy_loss_grad(p, q), 1.0));
    }
    Ok(CheckResult {
        name: "loss_gradients_vs_fd",
        max_error,
        tolerance: 1e-7,
    })
}

/// Finite-difference hypergradient on the scalar quadratic toy problem
/// against the analytic one-step-lookahead derivative.
pub fn check_toy_hypergradient() -> Result<CheckResult> {
    let mut max_error: f64 = 0.0;
    for (theta0, a, b, eta, lambda) in [
        (0.0, 1.0, 1.2, 0.5, 1.0),
        (0.4, -0.3, 0.9, 0.25, 0.7),
        (-1.0, 2.0, -0.5, 0.1, 1.5),
    ] {
        let result = lookahead_hypergradient(
            &[theta0],
            eta,
            0.01,
            1,
            &mut |t: &[f64]| Ok(vec![2.0 * lambda * (t[0] - a)]),
            &mut |t: &[f64]| Ok(vec![(t[0] - a) * (t[0] - a)]),
            &mut |t: &[f64]| Ok(((t[0] - b) * (t[0] - b), vec![2.0 * (t[0] - b)])),
        )?;
        let lookahead = theta0 - 2.0 * eta * lambda * (theta0 - a);
        let analytic = -4.0 * eta * (theta0 - a) * (lookahead - b);
        max_error = max_error.max((result.hypergradient[0] - analytic).abs());
    }
    Ok(CheckResult {
        name: "toy_hypergradient_vs_analytic",
        max_error,
        tolerance: 1e-6,
    })
}

/// Runs every check.
pub fn run_all(seed: u64) -> Result<GradCheckReport> {
    Ok(GradCheckReport {
        seed,
        checks: vec![
            check_marginal_jacobian(seed)?,
            check_model_gradients(seed)?,
            check_loss_gradients(seed)?,
            check_toy_hypergradient()?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_passes() {
        let report = run_all(7).unwrap();
        assert_eq!(report.checks.len(), 4);
        for check in &report.checks {
            assert!(
                check.passed(),
                "{}: {} > {}",
                check.name,
                check.max_error,
                check.tolerance
            );
        }
        assert!(report.all_passed());
    }

    #[test]
    fn different_seeds_still_pass() {
        for seed in [1, 99, 12345] {
            assert!(run_all(seed).unwrap().all_passed(), "seed {seed}");
        }
    }
}
