//! Semantics-oriented face-forgery detection at desk scale.
//!
//! The crate models face authenticity as a small label hierarchy (one root,
//! global attributes, local regions) and performs exact probabilistic
//! inference over it: raw per-label scores come from a joint embedding (a
//! feed-forward image encoder against one trainable prototype per label
//! template), the constrained joint is normalized by exhaustive enumeration
//! of the valid label configurations, and training alternates outer updates
//! of three level-shared loss weights (one-step-lookahead finite-difference
//! hypergradients of the primary-task validation loss) with inner AdamW steps
//! on the weighted fidelity loss.
//!
//! Alongside the model: the dataset-expansion pipeline (landmark-matched
//! region blending with color correction and hierarchy relabeling), a
//! hierarchy-consistent synthetic benchmark with per-node ROC AUC evaluation,
//! and textual explanations composed from per-node marginals.
//!
//! The numeric core is generic over the scalar ([`scalar::Real`], i.e. `f32`
//! or `f64`); the aliases below fix the `f64` instantiation that the file
//! formats and stated tolerances assume.

pub mod checkpoint;
pub mod embedding;
pub mod error;
pub mod expansion;
pub mod explain;
pub mod gradcheck;
pub mod hierarchy;
pub mod image;
pub mod inference;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod perturb;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use hierarchy::{build_expanded_ffpp_graph, HierarchyGraph, LabelConfig, ObservedSet};

/// Working scalar for the shipped tooling.
pub type Scalar = f64;

/// Raw per-label scores at the working precision.
pub type Scores = inference::ScoreVector<Scalar>;
/// Per-label marginals at the working precision.
pub type Marginals = inference::MarginalVector<Scalar>;
/// Marginal Jacobian (posterior covariance) at the working precision.
pub type Jacobian = inference::MarginalJacobian<Scalar>;
/// Image-to-scores model at the working precision.
pub type Model = embedding::EmbeddingModel<Scalar>;
/// Level-shared loss weights at the working precision.
pub type Lambda = loss::LambdaGroups<Scalar>;
/// One training example at the working precision.
pub type Example = loss::LabeledExample<Scalar>;
/// Inner/outer optimizer at the working precision.
pub type Optimizer = optim::AdamW<Scalar>;
