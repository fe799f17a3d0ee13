//! Bi-level training loop.
//!
//! Each global step draws two disjoint minibatches from the epoch shuffle.
//! The outer level updates the three level-shared loss weights by a one-step
//! lookahead finite-difference hypergradient of the primary-task validation
//! loss; the inner level then takes one AdamW step on the encoder and
//! prototypes under the weighted loss, with a cosine learning-rate schedule
//! and label-preserving perturbations on the training minibatch only.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::embedding::{EmbeddingConfig, EmbeddingModel, ModelGrads};
use crate::error::{Error, Result};
use crate::hierarchy::HierarchyGraph;
use crate::inference::{all_marginals, marginal_jacobian};
use crate::loss::{batch_loss, group_index, BatchLoss, LabeledExample, LambdaGroups, LossMode};
use crate::optim::{cosine_lr, AdamConfig, AdamW};
use crate::perturb::{maybe_perturb_features, PerturbConfig};
use crate::rng::{shuffled_indices, RngStreams};
use crate::scalar::Real;

pub const RUN_CONFIG_FORMAT_VERSION: u32 = 1;

/// Hypergradients below this validation-gradient norm are treated as flat.
const FLAT_VALIDATION_NORM: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightingMode {
    /// Outer-level optimization of the loss weights.
    #[default]
    Bilevel,
    /// Loss weights stay at their initial values.
    Fixed,
}

fn default_inner_lr() -> f64 {
    // The desk-scale default; encoders trained from scratch need far larger
    // steps than a pretrained backbone's 6e-7.
    1e-3
}
fn default_outer_lr() -> f64 {
    1e-3
}
fn default_batch_size() -> usize {
    32
}
fn default_epochs() -> usize {
    20
}
fn default_lambda_init() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}
fn default_fd_epsilon() -> f64 {
    0.01
}
fn default_inner_adam() -> AdamConfig {
    AdamConfig::with_weight_decay(1e-3)
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    #[serde(default = "default_inner_lr")]
    pub inner_lr: f64,
    #[serde(default = "default_outer_lr")]
    pub outer_lr: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lambda_init")]
    pub lambda_init: [f64; 3],
    /// Scale of the finite-difference probe: eps = fd_epsilon / |v|.
    #[serde(default = "default_fd_epsilon")]
    pub fd_epsilon: f64,
    #[serde(default)]
    pub loss: LossMode,
    #[serde(default)]
    pub weighting: WeightingMode,
    /// Inner-level AdamW hyperparameters (decoupled weight decay included).
    #[serde(default = "default_inner_adam")]
    pub adam: AdamConfig,
    #[serde(default)]
    pub perturb: PerturbConfig,
}

impl Default for TrainParams {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults are complete")
    }
}

fn default_format_version() -> u32 {
    RUN_CONFIG_FORMAT_VERSION
}
fn default_image_side() -> usize {
    32
}

/// Full run configuration: embedding architecture, training hyperparameters,
/// seed, and the raster-track downsampling size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_format_version")]
    pub format_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub train: TrainParams,
    /// Raster images are bilinearly downsampled to this side length before
    /// flattening into features.
    #[serde(default = "default_image_side")]
    pub image_side: usize,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != RUN_CONFIG_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "config format_version {} unsupported, expected {RUN_CONFIG_FORMAT_VERSION}",
                self.format_version
            )));
        }
        self.embedding.validate()?;
        let t = &self.train;
        if !(t.inner_lr > 0.0) || !(t.outer_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if t.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2, got {}",
                t.batch_size
            )));
        }
        if !(t.fd_epsilon > 0.0) {
            return Err(Error::Config("fd_epsilon must be positive".into()));
        }
        LambdaGroups::from_array(t.lambda_init)?;
        t.adam.validate()?;
        t.perturb.validate()?;
        if self.image_side == 0 {
            return Err(Error::Config("image_side must be positive".into()));
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        config
            .validate()
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        Ok(config)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub step: u64,
    pub lr: f64,
    pub lambda: [f64; 3],
    pub train_loss: f64,
    pub val_primary_loss: f64,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub model: EmbeddingModel<f64>,
    pub lambda: LambdaGroups<f64>,
    pub log: Vec<TrainLogEntry>,
}

/// Weighted batch loss and its gradients with respect to every model tensor.
pub fn batch_gradients(
    model: &EmbeddingModel<f64>,
    graph: &HierarchyGraph,
    batch: &[LabeledExample<f64>],
    lambda: &LambdaGroups<f64>,
    mode: LossMode,
) -> Result<(BatchLoss<f64>, ModelGrads<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let k = batch.len() as f64;
    let mut grads = ModelGrads::zeros_like(model);
    let mut marginals = Vec::with_capacity(batch.len());
    for example in batch {
        let trace = model.scores_trace(&example.x)?;
        let p = all_marginals(graph, trace.scores())?;
        let jac = marginal_jacobian(graph, trace.scores())?;
        let mut dp = vec![0.0; graph.len()];
        for i in example.observed.iter() {
            let target = if example.y.get(i) { 1.0 } else { 0.0 };
            let weight = lambda.weight_for(graph.node(i).level);
            dp[i] += weight * mode.grad(target, p.get(i)) / k;
        }
        let ds = jac.apply(&dp);
        let (g, _) = model.backward(&trace, &ds)?;
        grads.accumulate(&g);
        marginals.push(p);
    }
    let loss = batch_loss(graph, batch, &marginals, lambda, mode)?;
    Ok((loss, grads))
}

/// Primary-task validation loss (root node only, unweighted) and gradients.
pub fn val_primary_gradients(
    model: &EmbeddingModel<f64>,
    graph: &HierarchyGraph,
    batch: &[LabeledExample<f64>],
    mode: LossMode,
) -> Result<(f64, ModelGrads<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let k = batch.len() as f64;
    let mut total = 0.0;
    let mut grads = ModelGrads::zeros_like(model);
    for example in batch {
        let trace = model.scores_trace(&example.x)?;
        let p = all_marginals(graph, trace.scores())?;
        let jac = marginal_jacobian(graph, trace.scores())?;
        let target = if example.y.get(0) { 1.0 } else { 0.0 };
        total += mode.loss(target, p.get(0))? / k;
        let mut dp = vec![0.0; graph.len()];
        dp[0] = mode.grad(target, p.get(0)) / k;
        let ds = jac.apply(&dp);
        let (g, _) = model.backward(&trace, &ds)?;
        grads.accumulate(&g);
    }
    Ok((total, grads))
}

/// Per-group unweighted loss sums, which are exactly the gradient of the
/// weighted training loss with respect to the group weights.
pub fn group_sums(
    model: &EmbeddingModel<f64>,
    graph: &HierarchyGraph,
    batch: &[LabeledExample<f64>],
    mode: LossMode,
) -> Result<[f64; 3]> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let k = batch.len() as f64;
    let mut sums = [0.0; 3];
    for example in batch {
        let p = all_marginals(graph, &model.scores(&example.x)?)?;
        for i in example.observed.iter() {
            let target = if example.y.get(i) { 1.0 } else { 0.0 };
            sums[group_index(graph.node(i).level)] += mode.loss(target, p.get(i))? / k;
        }
    }
    Ok(sums)
}

/// Result of the one-step-lookahead finite-difference scheme.
#[derive(Debug, Clone)]
pub struct LookaheadResult<T: Real> {
    pub hypergradient: Vec<T>,
    /// Validation loss at the lookahead parameters.
    pub val_loss: T,
}

/// One-step-lookahead hypergradient over flat parameter vectors.
///
/// With `theta' = theta - eta * grad L_tr(theta)`, the gradient of the
/// validation loss at `theta'` with respect to the loss weights is
/// `-eta * (S(theta + eps v) - S(theta - eps v)) / (2 eps)`, where `v` is the
/// validation gradient at `theta'`, `eps = eps0 / |v|`, and `S` maps
/// parameters to the per-group unweighted training-loss sums (the exact
/// lambda-gradient of the training loss, which is linear in the weights).
pub fn lookahead_hypergradient<T: Real>(
    theta: &[T],
    eta: T,
    eps0: T,
    n_groups: usize,
    train_grad: &mut dyn FnMut(&[T]) -> Result<Vec<T>>,
    train_group_sums: &mut dyn FnMut(&[T]) -> Result<Vec<T>>,
    val_loss_grad: &mut dyn FnMut(&[T]) -> Result<(T, Vec<T>)>,
) -> Result<LookaheadResult<T>> {
    let g = train_grad(theta)?;
    let lookahead: Vec<T> = theta.iter().zip(&g).map(|(&t, &gi)| t - eta * gi).collect();
    let (val_loss, v) = val_loss_grad(&lookahead)?;
    let vnorm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if vnorm < T::of(FLAT_VALIDATION_NORM) {
        return Ok(LookaheadResult {
            hypergradient: vec![T::zero(); n_groups],
            val_loss,
        });
    }
    let eps = eps0 / vnorm;
    let plus: Vec<T> = theta.iter().zip(&v).map(|(&t, &vi)| t + eps * vi).collect();
    let minus: Vec<T> = theta.iter().zip(&v).map(|(&t, &vi)| t - eps * vi).collect();
    let sp = train_group_sums(&plus)?;
    let sm = train_group_sums(&minus)?;
    if sp.len() != n_groups || sm.len() != n_groups {
        return Err(Error::DimensionMismatch {
            expected: n_groups,
            actual: sp.len(),
        });
    }
    let two = T::of(2.0);
    let hypergradient = sp
        .iter()
        .zip(&sm)
        .map(|(&p, &m)| -eta * (p - m) / (two * eps))
        .collect();
    Ok(LookaheadResult {
        hypergradient,
        val_loss,
    })
}

/// Model-level wrapper around [`lookahead_hypergradient`]: returns the
/// gradient of the primary validation objective with respect to the three
/// group weights, plus the validation loss at the lookahead point.
pub fn hypergradient_fd(
    model: &EmbeddingModel<f64>,
    graph: &HierarchyGraph,
    lambda: &LambdaGroups<f64>,
    train_batch: &[LabeledExample<f64>],
    val_batch: &[LabeledExample<f64>],
    eta: f64,
    eps0: f64,
    mode: LossMode,
) -> Result<([f64; 3], f64)> {
    let theta = model.flatten();
    let mut scratch_train = model.clone();
    let mut scratch_sums = model.clone();
    let mut scratch_val = model.clone();
    let result = lookahead_hypergradient(
        &theta,
        eta,
        eps0,
        3,
        &mut |t: &[f64]| {
            scratch_train.unflatten_into(t)?;
            let (_, grads) = batch_gradients(&scratch_train, graph, train_batch, lambda, mode)?;
            Ok(grads.tensors.into_iter().flatten().collect())
        },
        &mut |t: &[f64]| {
            scratch_sums.unflatten_into(t)?;
            Ok(group_sums(&scratch_sums, graph, train_batch, mode)?.to_vec())
        },
        &mut |t: &[f64]| {
            scratch_val.unflatten_into(t)?;
            let (loss, grads) = val_primary_gradients(&scratch_val, graph, val_batch, mode)?;
            Ok((loss, grads.tensors.into_iter().flatten().collect()))
        },
    )?;
    Ok((
        [
            result.hypergradient[0],
            result.hypergradient[1],
            result.hypergradient[2],
        ],
        result.val_loss,
    ))
}

/// One inner-level AdamW step on the encoder and prototypes. Returns the
/// batch loss observed before the update.
pub fn inner_step(
    model: &mut EmbeddingModel<f64>,
    optimizer: &mut AdamW<f64>,
    graph: &HierarchyGraph,
    batch: &[LabeledExample<f64>],
    lambda: &LambdaGroups<f64>,
    mode: LossMode,
    lr: f64,
) -> Result<BatchLoss<f64>> {
    let (loss, grads) = batch_gradients(model, graph, batch, lambda, mode)?;
    let mut params = model.tensor_views_mut();
    optimizer.step(&mut params, &grads.tensors, lr)?;
    Ok(loss)
}

/// One outer-level Adam step on the loss weights, projected onto the
/// nonnegative orthant.
pub fn outer_step(
    lambda: &mut LambdaGroups<f64>,
    optimizer: &mut AdamW<f64>,
    hypergradient: [f64; 3],
    lr: f64,
) -> Result<()> {
    let mut values = lambda.as_array().to_vec();
    optimizer.step(&mut [&mut values], &[hypergradient.to_vec()], lr)?;
    *lambda = LambdaGroups {
        primary: values[0],
        global: values[1],
        local: values[2],
    };
    lambda.clamp_nonnegative();
    Ok(())
}

/// Runs the full training loop. Deterministic in `(config, dataset, seed)`.
pub fn train(
    config: &RunConfig,
    graph: &HierarchyGraph,
    dataset: &[LabeledExample<f64>],
) -> Result<TrainOutput> {
    config.validate()?;
    let t = &config.train;
    let k = t.batch_size;
    if dataset.len() < 2 * k {
        return Err(Error::DatasetTooSmall {
            len: dataset.len(),
            need: 2 * k,
        });
    }
    for example in dataset {
        if example.x.len() != config.embedding.input_dim {
            return Err(Error::DimensionMismatch {
                expected: config.embedding.input_dim,
                actual: example.x.len(),
            });
        }
        if example.y.len() != graph.len() {
            return Err(Error::DimensionMismatch {
                expected: graph.len(),
                actual: example.y.len(),
            });
        }
    }

    let mut streams = RngStreams::from_seed(config.seed);
    let mut model = EmbeddingModel::<f64>::init(&config.embedding, graph.len(), &mut streams.init)?;
    let mut lambda = LambdaGroups::from_array(t.lambda_init)?;
    let mut inner_opt = AdamW::new(t.adam, &tensor_lens(&model));
    let mut outer_opt = AdamW::new(AdamConfig::default(), &[3]);

    let steps_per_epoch = (dataset.len() / (2 * k)) as u64;
    let total_steps = t.epochs as u64 * steps_per_epoch;
    let mut log = Vec::with_capacity(total_steps as usize);
    let mut step: u64 = 0;

    for _epoch in 0..t.epochs {
        let order = shuffled_indices(&mut streams.data, dataset.len());
        for chunk in order.chunks_exact(2 * k) {
            let lr = cosine_lr(step, total_steps, t.inner_lr)?;
            // Perturbations apply to the training minibatch only.
            let train_batch: Vec<LabeledExample<f64>> = chunk[..k]
                .iter()
                .map(|&i| {
                    let mut ex = dataset[i].clone();
                    ex.x = maybe_perturb_features(&ex.x, &t.perturb, &mut streams.perturb);
                    ex
                })
                .collect();
            let val_batch: Vec<LabeledExample<f64>> =
                chunk[k..].iter().map(|&i| dataset[i].clone()).collect();

            // Outer update first, then the inner step at the fresh weights.
            let val_primary_loss = match t.weighting {
                WeightingMode::Bilevel => {
                    let (hypergradient, val_loss) = hypergradient_fd(
                        &model,
                        graph,
                        &lambda,
                        &train_batch,
                        &val_batch,
                        lr,
                        t.fd_epsilon,
                        t.loss,
                    )?;
                    outer_step(&mut lambda, &mut outer_opt, hypergradient, t.outer_lr)?;
                    val_loss
                }
                WeightingMode::Fixed => {
                    let (val_loss, _) = val_primary_gradients(&model, graph, &val_batch, t.loss)?;
                    val_loss
                }
            };

            let loss = inner_step(
                &mut model,
                &mut inner_opt,
                graph,
                &train_batch,
                &lambda,
                t.loss,
                lr,
            )?;

            log.push(TrainLogEntry {
                step,
                lr,
                lambda: lambda.as_array(),
                train_loss: loss.total,
                val_primary_loss,
            });
            step += 1;
        }
    }

    Ok(TrainOutput { model, lambda, log })
}

fn tensor_lens(model: &EmbeddingModel<f64>) -> Vec<usize> {
    model.tensor_views().iter().map(|t| t.len()).collect()
}

/// Trains and writes `checkpoint.json` plus `trainlog.jsonl` under `out_dir`.
pub fn run_training(
    config: &RunConfig,
    graph: &HierarchyGraph,
    dataset: &[LabeledExample<f64>],
    out_dir: impl AsRef<Path>,
) -> Result<TrainOutput> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let output = train(config, graph, dataset)?;
    Checkpoint::from_model(&config.embedding, &output.model, &output.lambda)
        .save(out_dir.join("checkpoint.json"))?;
    let log_path = out_dir.join("trainlog.jsonl");
    let mut text = String::new();
    for entry in &output.log {
        text.push_str(&serde_json::to_string(entry).expect("log entry serializes"));
        text.push('\n');
    }
    std::fs::write(&log_path, text).map_err(|e| Error::io(log_path.display().to_string(), e))?;
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::ScoringMode;
    use crate::hierarchy::{build_expanded_ffpp_graph, LabelConfig, ObservedSet};
    use crate::rng::normal;

    fn tiny_config(seed: u64) -> RunConfig {
        RunConfig {
            format_version: RUN_CONFIG_FORMAT_VERSION,
            seed,
            embedding: EmbeddingConfig {
                input_dim: 8,
                hidden: vec![6],
                embed_dim: 4,
                temperature: 10.0,
                scoring: ScoringMode::InnerProduct,
            },
            train: TrainParams {
                batch_size: 2,
                epochs: 2,
                ..Default::default()
            },
            image_side: 32,
        }
    }

    fn tiny_dataset(graph: &HierarchyGraph, n: usize, seed: u64) -> Vec<LabeledExample<f64>> {
        let mut streams = RngStreams::from_seed(seed);
        (0..n)
            .map(|i| {
                let x: Vec<f64> = (0..8).map(|_| normal(&mut streams.data)).collect();
                let mut y = LabelConfig::zeros(graph.len());
                if i % 2 == 0 {
                    // the face-swap relabeling row
                    for name in ["face", "identity", "physical_inconsistency"] {
                        y.set(graph.node_id(name).unwrap(), true);
                    }
                    for name in crate::hierarchy::LOCAL_REGIONS {
                        y.set(graph.node_id(name).unwrap(), true);
                    }
                }
                LabeledExample {
                    x,
                    y,
                    observed: ObservedSet::all(graph.len()),
                }
            })
            .collect()
    }

    #[test]
    fn zero_lambda_changes_parameters_only_by_decay() {
        let graph = build_expanded_ffpp_graph();
        let config = tiny_config(7);
        let mut streams = RngStreams::from_seed(7);
        let mut model =
            EmbeddingModel::<f64>::init(&config.embedding, graph.len(), &mut streams.init).unwrap();
        let before = model.flatten();
        let lambda = LambdaGroups::new(0.0, 0.0, 0.0).unwrap();
        let mut opt = AdamW::new(AdamConfig::with_weight_decay(0.01), &tensor_lens(&model));
        let batch = tiny_dataset(&graph, 2, 3);
        let lr = 0.5;
        inner_step(&mut model, &mut opt, &graph, &batch, &lambda, LossMode::Fidelity, lr).unwrap();
        let after = model.flatten();
        for (b, a) in before.iter().zip(&after) {
            assert!((a - b * (1.0 - lr * 0.01)).abs() < 1e-12);
        }
    }

    #[test]
    fn inner_gradients_match_finite_differences() {
        let graph = build_expanded_ffpp_graph();
        let config = tiny_config(11);
        let mut streams = RngStreams::from_seed(11);
        let model =
            EmbeddingModel::<f64>::init(&config.embedding, graph.len(), &mut streams.init).unwrap();
        let batch = tiny_dataset(&graph, 1, 5);
        let lambda = LambdaGroups::new(1.0, 0.7, 0.4).unwrap();
        let (_, grads) = batch_gradients(&model, &graph, &batch, &lambda, LossMode::Fidelity).unwrap();
        let analytic: Vec<f64> = grads.tensors.iter().flatten().copied().collect();

        let theta = model.flatten();
        let mut scratch = model.clone();
        let h = 1e-6;
        for p in 0..theta.len() {
            let mut t = theta.clone();
            t[p] += h;
            scratch.unflatten_into(&t).unwrap();
            let up = batch_gradients(&scratch, &graph, &batch, &lambda, LossMode::Fidelity)
                .unwrap()
                .0
                .total;
            t[p] -= 2.0 * h;
            scratch.unflatten_into(&t).unwrap();
            let down = batch_gradients(&scratch, &graph, &batch, &lambda, LossMode::Fidelity)
                .unwrap()
                .0
                .total;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - analytic[p]).abs() / fd.abs().max(analytic[p].abs()).max(1e-4);
            assert!(rel <= 1e-4, "param {p}: fd {fd} vs analytic {}", analytic[p]);
        }
    }

    #[test]
    fn group_sums_are_exact_lambda_gradient() {
        let graph = build_expanded_ffpp_graph();
        let config = tiny_config(13);
        let mut streams = RngStreams::from_seed(13);
        let model =
            EmbeddingModel::<f64>::init(&config.embedding, graph.len(), &mut streams.init).unwrap();
        let batch = tiny_dataset(&graph, 4, 17);
        let sums = group_sums(&model, &graph, &batch, LossMode::Fidelity).unwrap();
        // Finite difference of the weighted loss in each lambda with a dyadic
        // step; linearity makes this exact to rounding.
        let h = 0.5;
        for g in 0..3 {
            let mut lo = [1.0, 1.0, 1.0];
            let mut hi = [1.0, 1.0, 1.0];
            lo[g] -= h;
            hi[g] += h;
            let marginals: Vec<_> = batch
                .iter()
                .map(|e| all_marginals(&graph, &model.scores(&e.x).unwrap()).unwrap())
                .collect();
            let up = batch_loss(
                &graph,
                &batch,
                &marginals,
                &LambdaGroups::from_array(hi).unwrap(),
                LossMode::Fidelity,
            )
            .unwrap()
            .total;
            let down = batch_loss(
                &graph,
                &batch,
                &marginals,
                &LambdaGroups::from_array(lo).unwrap(),
                LossMode::Fidelity,
            )
            .unwrap()
            .total;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - sums[g]).abs() <= 1e-10, "group {g}: {fd} vs {}", sums[g]);
        }
    }

    /// Scalar quadratic toy problem: the finite-difference scheme must agree
    /// with the analytic one-step-lookahead derivative.
    #[test]
    fn toy_hypergradient_matches_analytic() {
        let (theta0, a, b, eta) = (0.0, 1.0, 1.2, 0.5);
        let lambda = 1.0;
        let result = lookahead_hypergradient(
            &[theta0],
            eta,
            0.01,
            1,
            &mut |t: &[f64]| Ok(vec![2.0 * lambda * (t[0] - a)]),
            &mut |t: &[f64]| Ok(vec![(t[0] - a) * (t[0] - a)]),
            &mut |t: &[f64]| Ok(((t[0] - b) * (t[0] - b), vec![2.0 * (t[0] - b)])),
        )
        .unwrap();
        // d/d lambda of L_val(theta - 2 eta lambda (theta - a))
        let lookahead = theta0 - 2.0 * eta * lambda * (theta0 - a);
        let analytic = -4.0 * eta * (theta0 - a) * (lookahead - b);
        assert!(
            (result.hypergradient[0] - analytic).abs() <= 1e-6,
            "fd {} vs analytic {analytic}",
            result.hypergradient[0]
        );
    }

    #[test]
    fn hypergradient_degenerate_cases() {
        // Constant validation loss: zero gradient, zero hypergradient.
        let result = lookahead_hypergradient(
            &[0.3],
            0.5,
            0.01,
            1,
            &mut |t: &[f64]| Ok(vec![2.0 * (t[0] - 1.0)]),
            &mut |t: &[f64]| Ok(vec![(t[0] - 1.0) * (t[0] - 1.0)]),
            &mut |_: &[f64]| Ok((4.0, vec![0.0])),
        )
        .unwrap();
        assert_eq!(result.hypergradient, vec![0.0]);
        assert_eq!(result.val_loss, 4.0);

        // eta = 0: the lookahead degenerates and the scheme returns zero.
        let result = lookahead_hypergradient(
            &[0.3],
            0.0,
            0.01,
            1,
            &mut |t: &[f64]| Ok(vec![2.0 * (t[0] - 1.0)]),
            &mut |t: &[f64]| Ok(vec![(t[0] - 1.0) * (t[0] - 1.0)]),
            &mut |t: &[f64]| Ok(((t[0] - 2.0) * (t[0] - 2.0), vec![2.0 * (t[0] - 2.0)])),
        )
        .unwrap();
        assert_eq!(result.hypergradient, vec![0.0]);
    }

    /// Driving the toy's lambda by outer Adam steps reaches the analytic
    /// one-step optimum within 1e-3 in at most 500 steps.
    #[test]
    fn toy_outer_loop_converges() {
        let (theta0, a, b, eta) = (0.0f64, 1.0, 1.1, 0.5);
        // lookahead(lambda) = theta0 - 2 eta lambda (theta0 - a) = lambda here,
        // so the optimum is lambda* = b.
        let target = b;
        let mut lambda = LambdaGroups::new(1.0, 1.0, 1.0).unwrap();
        let mut outer_opt = AdamW::<f64>::new(AdamConfig::default(), &[3]);
        let mut steps = 0;
        for _ in 0..500 {
            let lam = lambda.primary;
            let result = lookahead_hypergradient(
                &[theta0],
                eta,
                0.01,
                1,
                &mut |t: &[f64]| Ok(vec![2.0 * lam * (t[0] - a)]),
                &mut |t: &[f64]| Ok(vec![(t[0] - a) * (t[0] - a)]),
                &mut |t: &[f64]| Ok(((t[0] - b) * (t[0] - b), vec![2.0 * (t[0] - b)])),
            )
            .unwrap();
            let hg = result.hypergradient[0];
            outer_step(&mut lambda, &mut outer_opt, [hg, 0.0, 0.0], 1e-3).unwrap();
            steps += 1;
            if (lambda.primary - target).abs() <= 1e-3 {
                break;
            }
        }
        assert!(
            (lambda.primary - target).abs() <= 1e-3,
            "lambda {} after {steps} steps, target {target}",
            lambda.primary
        );
        assert!(steps <= 500);
    }

    #[test]
    fn outer_step_keeps_lambda_nonnegative() {
        let mut lambda = LambdaGroups::new(0.0, 1.0, 1.0).unwrap();
        let mut opt = AdamW::<f64>::new(AdamConfig::default(), &[3]);
        // Positive hypergradient pushes the weight negative; the projection
        // holds it at zero.
        outer_step(&mut lambda, &mut opt, [5.0, 0.0, 0.0], 0.1).unwrap();
        assert_eq!(lambda.primary, 0.0);

        // Zero hypergradient on fresh moments leaves lambda exactly unchanged.
        let mut lambda2 = LambdaGroups::new(1.0, 1.0, 1.0).unwrap();
        let mut opt2 = AdamW::<f64>::new(AdamConfig::default(), &[3]);
        outer_step(&mut lambda2, &mut opt2, [0.0, 0.0, 0.0], 0.1).unwrap();
        assert_eq!(lambda2.as_array(), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn epochs_zero_returns_initialization() {
        let graph = build_expanded_ffpp_graph();
        let mut config = tiny_config(21);
        config.train.epochs = 0;
        let dataset = tiny_dataset(&graph, 8, 2);
        let out = train(&config, &graph, &dataset).unwrap();
        let mut streams = RngStreams::from_seed(21);
        let fresh =
            EmbeddingModel::<f64>::init(&config.embedding, graph.len(), &mut streams.init).unwrap();
        assert_eq!(out.model, fresh);
        assert!(out.log.is_empty());
        assert_eq!(out.lambda.as_array(), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn training_is_deterministic() {
        let graph = build_expanded_ffpp_graph();
        let config = tiny_config(42);
        let dataset = tiny_dataset(&graph, 12, 9);
        let a = train(&config, &graph, &dataset).unwrap();
        let b = train(&config, &graph, &dataset).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.log, b.log);
        assert_eq!(a.lambda.as_array(), b.lambda.as_array());
    }

    #[test]
    fn training_rejects_small_datasets() {
        let graph = build_expanded_ffpp_graph();
        let config = tiny_config(1);
        let dataset = tiny_dataset(&graph, 3, 1);
        assert!(matches!(
            train(&config, &graph, &dataset),
            Err(Error::DatasetTooSmall { .. })
        ));
    }

    #[test]
    fn log_is_one_entry_per_step_with_nonnegative_lambda() {
        let graph = build_expanded_ffpp_graph();
        let mut config = tiny_config(5);
        config.train.epochs = 3;
        let dataset = tiny_dataset(&graph, 9, 4);
        let out = train(&config, &graph, &dataset).unwrap();
        // 9 examples, batch 2: two disjoint pairs per step, 2 steps per epoch.
        assert_eq!(out.log.len(), 6);
        for (i, entry) in out.log.iter().enumerate() {
            assert_eq!(entry.step, i as u64);
            assert!(entry.lambda.iter().all(|&l| l >= 0.0));
            assert!(entry.train_loss.is_finite());
            assert!(entry.val_primary_loss.is_finite());
        }
        // Cosine schedule decays across the run.
        assert!(out.log.last().unwrap().lr < out.log[0].lr);
    }

    #[test]
    fn config_defaults_and_unknown_keys() {
        // tau defaults to 10 when omitted.
        let json = r#"{"embedding": {"input_dim": 4, "embed_dim": 2}}"#;
        let config: RunConfig = serde_json::from_str(json).unwrap();
        assert_eq!(config.embedding.temperature, 10.0);
        assert_eq!(config.train.batch_size, 32);
        assert_eq!(config.train.lambda_init, [1.0, 1.0, 1.0]);
        assert_eq!(config.train.perturb.probability, 0.3);
        config.validate().unwrap();

        // Unknown keys are rejected.
        let bad = r#"{"embedding": {"input_dim": 4, "embed_dim": 2}, "mystery": 1}"#;
        assert!(serde_json::from_str::<RunConfig>(bad).is_err());

        // Negative batch sizes cannot parse into the unsigned field.
        let negative =
            r#"{"embedding": {"input_dim": 4, "embed_dim": 2}, "train": {"batch_size": -3}}"#;
        assert!(serde_json::from_str::<RunConfig>(negative).is_err());
    }

    #[test]
    fn artifacts_are_byte_identical_across_runs() {
        let graph = build_expanded_ffpp_graph();
        let config = tiny_config(77);
        let dataset = tiny_dataset(&graph, 8, 6);
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = Vec::new();
        for run in 0..2 {
            let out = dir.path().join(format!("run{run}"));
            run_training(&config, &graph, &dataset, &out).unwrap();
            bytes.push((
                std::fs::read(out.join("checkpoint.json")).unwrap(),
                std::fs::read(out.join("trainlog.jsonl")).unwrap(),
            ));
        }
        assert_eq!(bytes[0].0, bytes[1].0);
        assert_eq!(bytes[0].1, bytes[1].1);
        assert!(!bytes[0].1.is_empty());
    }
}
