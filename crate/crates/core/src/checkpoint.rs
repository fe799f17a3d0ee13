//! Checkpoint file: every parameter tensor as a named double-precision array,
//! the embedding configuration, the loss weights, and a format version.
//!
//! Serialization goes through JSON with round-trip floats, so a save/load
//! cycle restores every value bit-exactly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{Affine, EmbeddingConfig, EmbeddingModel, Encoder, PrototypeTable};
use crate::error::{Error, Result};
use crate::loss::LambdaGroups;
use crate::scalar::Real;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub embedding: EmbeddingConfig,
    pub num_labels: usize,
    pub lambda: [f64; 3],
    pub tensors: BTreeMap<String, Vec<f64>>,
}

impl Checkpoint {
    pub fn from_model(
        config: &EmbeddingConfig,
        model: &EmbeddingModel<f64>,
        lambda: &LambdaGroups<f64>,
    ) -> Self {
        let tensors = model
            .tensor_names()
            .into_iter()
            .zip(model.tensor_views().into_iter().cloned())
            .collect();
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            embedding: config.clone(),
            num_labels: model.num_labels(),
            lambda: lambda.as_array(),
            tensors,
        }
    }

    /// Rebuilds the model, validating tensor names and shapes against the
    /// stored configuration.
    pub fn to_model(&self) -> Result<(EmbeddingModel<f64>, LambdaGroups<f64>)> {
        self.embedding.validate()?;
        if self.num_labels == 0 {
            return Err(Error::Config("checkpoint has zero labels".into()));
        }
        let layers: Vec<Affine<f64>> = self
            .embedding
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| Affine::zeros(i, o))
            .collect();
        let mut model = EmbeddingModel {
            encoder: Encoder { layers },
            prototypes: PrototypeTable::zeros(self.embedding.embed_dim, self.num_labels),
            temperature: f64::of(self.embedding.temperature),
            scoring: self.embedding.scoring,
        };
        let names = model.tensor_names();
        if self.tensors.len() != names.len() {
            return Err(Error::Config(format!(
                "checkpoint stores {} tensors, the configuration implies {}",
                self.tensors.len(),
                names.len()
            )));
        }
        for (name, view) in names.iter().zip(model.tensor_views_mut()) {
            let stored = self
                .tensors
                .get(name)
                .ok_or_else(|| Error::Config(format!("checkpoint is missing tensor {name:?}")))?;
            if stored.len() != view.len() {
                return Err(Error::Config(format!(
                    "tensor {name:?} has {} values, expected {}",
                    stored.len(),
                    view.len()
                )));
            }
            view.copy_from_slice(stored);
        }
        let lambda = LambdaGroups::from_array(self.lambda)?;
        Ok((model, lambda))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        // Read the version first so a mismatch is reported as such even if
        // the rest of the schema evolved.
        #[derive(Deserialize)]
        struct VersionProbe {
            format_version: u32,
        }
        let probe: VersionProbe = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        if probe.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                path: path.display().to_string(),
                found: probe.format_version,
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
        serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
    }
}
