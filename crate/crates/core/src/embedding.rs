//! Joint embedding at desk scale: a small feed-forward image encoder and one
//! trainable prototype vector per label template, scored by temperature-scaled
//! inner products.
//!
//! Since the label templates are fixed, the trainable text encoder reduces to
//! the prototype table; freezing the table recovers the frozen-text-encoder
//! ablation. Inner-product scoring is the default; cosine scoring discards
//! embedding magnitudes and is kept as a configurable alternative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::ScoreVector;
use crate::rng::{uniform, DetRng};
use crate::scalar::Real;

/// Default temperature for score scaling.
pub const DEFAULT_TEMPERATURE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    #[default]
    InnerProduct,
    Cosine,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

/// Architecture and scoring configuration for the joint embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// Input feature dimension D.
    pub input_dim: usize,
    /// Hidden layer widths; empty means a single affine map.
    #[serde(default)]
    pub hidden: Vec<usize>,
    /// Embedding dimension N.
    pub embed_dim: usize,
    /// Temperature tau.
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub scoring: ScoringMode,
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.embed_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(
                "embedding dimensions must all be at least 1".into(),
            ));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Layer shapes as (fan_in, fan_out) pairs.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend_from_slice(&self.hidden);
        dims.push(self.embed_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// One affine layer, weight stored row-major as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine<T: Real> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Affine<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Affine {
            in_dim,
            out_dim,
            weight: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut DetRng) -> Self {
        let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
        Affine {
            in_dim,
            out_dim,
            weight: (0..in_dim * out_dim).map(|_| uniform(rng, -a, a)).collect(),
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.in_dim);
        (0..self.out_dim)
            .map(|o| {
                let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                self.bias[o] + row.iter().zip(x).map(|(&w, &v)| w * v).sum::<T>()
            })
            .collect()
    }
}

/// Feed-forward encoder: affine layers with ReLU between them and a linear
/// final layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T: Real> {
    pub layers: Vec<Affine<T>>,
}

/// Intermediate activations kept for the backward pass.
pub struct EncoderTrace<T: Real> {
    /// Input to each affine layer.
    layer_inputs: Vec<Vec<T>>,
    /// Pre-activation output of each affine layer.
    preacts: Vec<Vec<T>>,
}

impl<T: Real> EncoderTrace<T> {
    pub fn embedding(&self) -> &[T] {
        self.preacts.last().expect("encoder has at least one layer")
    }
}

impl<T: Real> Encoder<T> {
    pub fn init(config: &EmbeddingConfig, rng: &mut DetRng) -> Self {
        Encoder {
            layers: config
                .layer_shapes()
                .into_iter()
                .map(|(i, o)| Affine::init(i, o, rng))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mut current = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            current = layer.apply(&current);
            if l < last {
                for v in &mut current {
                    *v = v.max(T::zero());
                }
            }
        }
        Ok(current)
    }

    pub fn forward_trace(&self, x: &[T]) -> Result<EncoderTrace<T>> {
        self.check_input(x)?;
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut current = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let a = layer.apply(&current);
            layer_inputs.push(std::mem::take(&mut current));
            if l < last {
                current = a.iter().map(|&v| v.max(T::zero())).collect();
            }
            preacts.push(a);
        }
        Ok(EncoderTrace {
            layer_inputs,
            preacts,
        })
    }

    /// Backpropagates `d_embedding` through the encoder. Returns per-layer
    /// (weight, bias) gradients and the gradient with respect to the input.
    pub fn backward(
        &self,
        trace: &EncoderTrace<T>,
        d_embedding: &[T],
    ) -> (Vec<(Vec<T>, Vec<T>)>, Vec<T>) {
        let mut grads = vec![(Vec::new(), Vec::new()); self.layers.len()];
        let mut da = d_embedding.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let x = &trace.layer_inputs[l];
            let mut dw = vec![T::zero(); layer.in_dim * layer.out_dim];
            for o in 0..layer.out_dim {
                let row = &mut dw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (slot, &xi) in row.iter_mut().zip(x.iter()) {
                    *slot = da[o] * xi;
                }
            }
            let db = da.clone();
            let mut dx = vec![T::zero(); layer.in_dim];
            for o in 0..layer.out_dim {
                let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (slot, &w) in dx.iter_mut().zip(row.iter()) {
                    *slot += w * da[o];
                }
            }
            grads[l] = (dw, db);
            if l > 0 {
                let pre = &trace.preacts[l - 1];
                da = dx
                    .iter()
                    .zip(pre.iter())
                    .map(|(&g, &a)| if a > T::zero() { g } else { T::zero() })
                    .collect();
            } else {
                da = dx;
            }
        }
        let d_input = da;
        (grads, d_input)
    }
}

/// One trainable embedding vector per label template; column `i` is the
/// prototype of template `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeTable<T: Real> {
    pub embed_dim: usize,
    pub count: usize,
    /// Prototype `i` occupies `values[i * embed_dim .. (i + 1) * embed_dim]`.
    pub values: Vec<T>,
}

impl<T: Real> PrototypeTable<T> {
    pub fn zeros(embed_dim: usize, count: usize) -> Self {
        PrototypeTable {
            embed_dim,
            count,
            values: vec![T::zero(); embed_dim * count],
        }
    }

    pub fn init(embed_dim: usize, count: usize, rng: &mut DetRng) -> Self {
        let a = (6.0 / (embed_dim + count) as f64).sqrt();
        PrototypeTable {
            embed_dim,
            count,
            values: (0..embed_dim * count)
                .map(|_| uniform(rng, -a, a))
                .collect(),
        }
    }

    pub fn prototype(&self, i: usize) -> &[T] {
        &self.values[i * self.embed_dim..(i + 1) * self.embed_dim]
    }
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Temperature-scaled inner-product scores: `s_i = <f, g_i> / tau`.
pub fn raw_scores<T: Real>(
    f: &[T],
    prototypes: &PrototypeTable<T>,
    temperature: T,
) -> Result<ScoreVector<T>> {
    if f.len() != prototypes.embed_dim {
        return Err(Error::DimensionMismatch {
            expected: prototypes.embed_dim,
            actual: f.len(),
        });
    }
    ScoreVector::new(
        (0..prototypes.count)
            .map(|i| dot(f, prototypes.prototype(i)) / temperature)
            .collect(),
    )
}

/// Cosine-normalized scores. Errors on any zero-norm vector rather than
/// silently regularizing.
pub fn raw_scores_cosine<T: Real>(
    f: &[T],
    prototypes: &PrototypeTable<T>,
    temperature: T,
) -> Result<ScoreVector<T>> {
    if f.len() != prototypes.embed_dim {
        return Err(Error::DimensionMismatch {
            expected: prototypes.embed_dim,
            actual: f.len(),
        });
    }
    let nf = norm(f);
    if nf == T::zero() {
        return Err(Error::DegenerateInput(
            "cosine scoring requires a nonzero visual embedding".into(),
        ));
    }
    let mut out = Vec::with_capacity(prototypes.count);
    for i in 0..prototypes.count {
        let g = prototypes.prototype(i);
        let ng = norm(g);
        if ng == T::zero() {
            return Err(Error::DegenerateInput(format!(
                "cosine scoring requires nonzero prototypes; prototype {i} has zero norm"
            )));
        }
        out.push(dot(f, g) / (temperature * nf * ng));
    }
    ScoreVector::new(out)
}

/// Encoder plus prototype table: the full image-to-scores model.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel<T: Real> {
    pub encoder: Encoder<T>,
    pub prototypes: PrototypeTable<T>,
    pub temperature: T,
    pub scoring: ScoringMode,
}

/// Activations retained between a scores forward pass and its backward pass.
pub struct ScoreTrace<T: Real> {
    encoder: EncoderTrace<T>,
    scores: ScoreVector<T>,
}

impl<T: Real> ScoreTrace<T> {
    pub fn scores(&self) -> &ScoreVector<T> {
        &self.scores
    }

    pub fn embedding(&self) -> &[T] {
        self.encoder.embedding()
    }
}

/// Gradients for every model tensor, in [`EmbeddingModel::tensors`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads<T: Real> {
    pub tensors: Vec<Vec<T>>,
}

impl<T: Real> ModelGrads<T> {
    pub fn zeros_like(model: &EmbeddingModel<T>) -> Self {
        ModelGrads {
            tensors: model
                .tensor_views()
                .into_iter()
                .map(|t| vec![T::zero(); t.len()])
                .collect(),
        }
    }

    pub fn accumulate(&mut self, other: &ModelGrads<T>) {
        for (mine, theirs) in self.tensors.iter_mut().zip(&other.tensors) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += *b;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in &mut self.tensors {
            for v in t {
                *v *= factor;
            }
        }
    }

    pub fn l2_norm(&self) -> T {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }
}

impl<T: Real> EmbeddingModel<T> {
    /// Seeded initialization; the number of prototypes equals the number of
    /// hierarchy nodes.
    pub fn init(config: &EmbeddingConfig, num_labels: usize, rng: &mut DetRng) -> Result<Self> {
        config.validate()?;
        if num_labels == 0 {
            return Err(Error::Config("model needs at least one label".into()));
        }
        Ok(EmbeddingModel {
            encoder: Encoder::init(config, rng),
            prototypes: PrototypeTable::init(config.embed_dim, num_labels, rng),
            temperature: T::of(config.temperature),
            scoring: config.scoring,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.prototypes.count
    }

    pub fn encode(&self, x: &[T]) -> Result<Vec<T>> {
        self.encoder.forward(x)
    }

    pub fn scores(&self, x: &[T]) -> Result<ScoreVector<T>> {
        Ok(self.scores_trace(x)?.scores)
    }

    pub fn scores_trace(&self, x: &[T]) -> Result<ScoreTrace<T>> {
        let encoder = self.encoder.forward_trace(x)?;
        let f = encoder.embedding();
        let scores = match self.scoring {
            ScoringMode::InnerProduct => raw_scores(f, &self.prototypes, self.temperature)?,
            ScoringMode::Cosine => raw_scores_cosine(f, &self.prototypes, self.temperature)?,
        };
        Ok(ScoreTrace { encoder, scores })
    }

    /// Reverse-mode pass from a score gradient `ds` to gradients of every
    /// model tensor and of the input features.
    pub fn backward(&self, trace: &ScoreTrace<T>, ds: &[T]) -> Result<(ModelGrads<T>, Vec<T>)> {
        if ds.len() != self.num_labels() {
            return Err(Error::DimensionMismatch {
                expected: self.num_labels(),
                actual: ds.len(),
            });
        }
        let f = trace.encoder.embedding();
        let n = self.prototypes.embed_dim;
        let mut df = vec![T::zero(); n];
        let mut dg = vec![T::zero(); self.prototypes.values.len()];
        match self.scoring {
            ScoringMode::InnerProduct => {
                for i in 0..self.num_labels() {
                    let g = self.prototypes.prototype(i);
                    let slot = &mut dg[i * n..(i + 1) * n];
                    let scale = ds[i] / self.temperature;
                    for k in 0..n {
                        df[k] += scale * g[k];
                        slot[k] = scale * f[k];
                    }
                }
            }
            ScoringMode::Cosine => {
                let nf = norm(f);
                if nf == T::zero() {
                    return Err(Error::DegenerateInput(
                        "cosine scoring requires a nonzero visual embedding".into(),
                    ));
                }
                for i in 0..self.num_labels() {
                    let g = self.prototypes.prototype(i);
                    let ng = norm(g);
                    if ng == T::zero() {
                        return Err(Error::DegenerateInput(format!(
                            "cosine scoring requires nonzero prototypes; prototype {i} has zero norm"
                        )));
                    }
                    let d = dot(f, g);
                    let base = T::one() / (self.temperature * nf * ng);
                    let slot = &mut dg[i * n..(i + 1) * n];
                    for k in 0..n {
                        df[k] += ds[i] * base * (g[k] - d / (nf * nf) * f[k]);
                        slot[k] = ds[i] * base * (f[k] - d / (ng * ng) * g[k]);
                    }
                }
            }
        }
        let (layer_grads, d_input) = self.encoder.backward(&trace.encoder, &df);
        let mut tensors = Vec::with_capacity(layer_grads.len() * 2 + 1);
        for (dw, db) in layer_grads {
            tensors.push(dw);
            tensors.push(db);
        }
        tensors.push(dg);
        Ok((ModelGrads { tensors }, d_input))
    }

    /// Stable tensor naming, aligned with [`Self::tensor_views`].
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for l in 0..self.encoder.layers.len() {
            names.push(format!("encoder.layer{l}.weight"));
            names.push(format!("encoder.layer{l}.bias"));
        }
        names.push("prototypes".into());
        names
    }

    pub fn tensor_views(&self) -> Vec<&Vec<T>> {
        let mut out = Vec::new();
        for layer in &self.encoder.layers {
            out.push(&layer.weight);
            out.push(&layer.bias);
        }
        out.push(&self.prototypes.values);
        out
    }

    pub fn tensor_views_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out = Vec::new();
        for layer in &mut self.encoder.layers {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        out.push(&mut self.prototypes.values);
        out
    }

    /// All parameters concatenated, for lookahead arithmetic.
    pub fn flatten(&self) -> Vec<T> {
        self.tensor_views()
            .into_iter()
            .flat_map(|t| t.iter().copied())
            .collect()
    }

    /// Inverse of [`Self::flatten`]; errors if the length disagrees.
    pub fn unflatten_into(&mut self, flat: &[T]) -> Result<()> {
        let total: usize = self.tensor_views().iter().map(|t| t.len()).sum();
        if flat.len() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        for tensor in self.tensor_views_mut() {
            let len = tensor.len();
            tensor.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }
}
