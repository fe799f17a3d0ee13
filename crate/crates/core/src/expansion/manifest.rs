//! Face-record manifests (JSON lines) and the manipulation-to-labels table.
//!
//! A record's `labels` map holds only observed labels; absent keys are
//! unobserved. Face swaps leave `expression` unobserved because swapping may
//! or may not carry the source expression, and the eye/lip-and-mouth
//! augmentations do the same.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expansion::mask::LANDMARK_COUNT;
use crate::hierarchy::{HierarchyGraph, LabelConfig, ObservedSet};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

/// The known manipulation tags, matching the relabeling table rows.
pub const MANIPULATIONS: [&str; 8] = [
    "eye_aug",
    "lip_mouth_aug",
    "nose_aug",
    "Deepfakes",
    "Face2Face",
    "FaceSwap",
    "NeuralTextures",
    "real",
];

/// One face image with identity, landmarks, manipulation tag, and observed
/// hierarchy labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceRecord {
    pub image_path: String,
    pub identity: String,
    /// 68 (x, y) pixel coordinates.
    pub landmarks: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manipulation: Option<String>,
    /// Observed labels only: node name to 0/1.
    #[serde(default)]
    pub labels: BTreeMap<String, u8>,
}

impl FaceRecord {
    pub fn validate(&self) -> Result<()> {
        if self.landmarks.len() != LANDMARK_COUNT {
            return Err(Error::DimensionMismatch {
                expected: LANDMARK_COUNT,
                actual: self.landmarks.len(),
            });
        }
        for (name, &value) in &self.labels {
            if value > 1 {
                return Err(Error::Domain(format!(
                    "label {name:?} must be 0 or 1, got {value}"
                )));
            }
        }
        Ok(())
    }

    /// Resolves the observed labels against a graph; unobserved entries
    /// become 0.
    pub fn resolved_labels(&self, graph: &HierarchyGraph) -> Result<(LabelConfig, ObservedSet)> {
        resolve_labels(graph, &self.labels)
    }
}

/// Expands a label map into a full configuration (unobserved entries resolved
/// to 0) plus the observed index set.
pub fn resolve_labels(
    graph: &HierarchyGraph,
    labels: &BTreeMap<String, u8>,
) -> Result<(LabelConfig, ObservedSet)> {
    let mut config = LabelConfig::zeros(graph.len());
    let mut observed = Vec::with_capacity(labels.len());
    for (name, &value) in labels {
        let id = graph
            .node_id(name)
            .ok_or_else(|| Error::Domain(format!("label {name:?} is not a graph node")))?;
        config.set(id, value != 0);
        observed.push(id);
    }
    Ok((config, ObservedSet::new(observed, graph.len())?))
}

/// The relabeling table: manipulation tag to observed hierarchy labels.
/// Absent entries are unobserved.
pub fn relabel(manipulation: &str) -> Result<BTreeMap<String, u8>> {
    let row: &[(&str, u8)] = match manipulation {
        "real" => &[
            ("face", 0),
            ("expression", 0),
            ("identity", 0),
            ("physical_inconsistency", 0),
            ("eye", 0),
            ("eyebrow", 0),
            ("lip", 0),
            ("mouth", 0),
            ("nose", 0),
            ("skin", 0),
        ],
        "eye_aug" => &[
            ("face", 1),
            ("identity", 0),
            ("physical_inconsistency", 1),
            ("eye", 1),
            ("eyebrow", 0),
            ("lip", 0),
            ("mouth", 0),
            ("nose", 0),
            ("skin", 0),
        ],
        "lip_mouth_aug" => &[
            ("face", 1),
            ("identity", 0),
            ("physical_inconsistency", 1),
            ("eye", 0),
            ("eyebrow", 0),
            ("lip", 1),
            ("mouth", 1),
            ("nose", 0),
            ("skin", 0),
        ],
        "nose_aug" => &[
            ("face", 1),
            ("expression", 0),
            ("identity", 0),
            ("physical_inconsistency", 1),
            ("eye", 0),
            ("eyebrow", 0),
            ("lip", 0),
            ("mouth", 0),
            ("nose", 1),
            ("skin", 0),
        ],
        "Deepfakes" | "FaceSwap" => &[
            ("face", 1),
            ("identity", 1),
            ("physical_inconsistency", 1),
            ("eye", 1),
            ("eyebrow", 1),
            ("lip", 1),
            ("mouth", 1),
            ("nose", 1),
            ("skin", 1),
        ],
        "Face2Face" | "NeuralTextures" => &[
            ("face", 1),
            ("expression", 1),
            ("identity", 0),
            ("physical_inconsistency", 1),
            ("eye", 0),
            ("eyebrow", 0),
            ("lip", 1),
            ("mouth", 1),
            ("nose", 0),
            ("skin", 0),
        ],
        other => return Err(Error::UnknownManipulation(other.to_string())),
    };
    Ok(row.iter().map(|&(k, v)| (k.to_string(), v)).collect())
}

/// Reads a JSON-lines manifest. Image paths are interpreted relative to the
/// manifest's directory and returned joined.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<FaceRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut record: FaceRecord = serde_json::from_str(&line).map_err(|e| {
            Error::parse(
                path.display().to_string(),
                format!("line {}: {e}", lineno + 1),
            )
        })?;
        record.validate().map_err(|e| {
            Error::parse(
                path.display().to_string(),
                format!("line {}: {e}", lineno + 1),
            )
        })?;
        record.image_path = base.join(&record.image_path).display().to_string();
        records.push(record);
    }
    Ok(records)
}

pub fn save_manifest(path: impl AsRef<Path>, records: &[FaceRecord]) -> Result<()> {
    let path = path.as_ref();
    let file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = std::io::BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, record)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        out.write_all(b"\n")
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    out.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}
