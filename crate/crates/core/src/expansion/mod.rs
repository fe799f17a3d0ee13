//! Dataset expansion: for each target real face, find the landmark-nearest
//! source face of a different identity, blend one local region across, color
//! correct, and emit a relabeled record.

pub mod color;
pub mod manifest;
pub mod mask;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::HierarchyGraph;
use crate::image::{read_ppm, resize_bilinear, write_ppm};
use crate::rng::{shuffled_indices, RngStreams};

use color::{blend, color_correct};
use manifest::{relabel, resolve_labels, FaceRecord};
use mask::{region_mask, Region, RegionSpec};

/// Blur width at a reference image height of 256 pixels; scaled linearly
/// with the actual height.
pub const DEFAULT_BLUR_SIGMA_AT_256: f64 = 5.0;

/// Version tag recorded in expansion provenance.
pub const EXPANSION_GENERATOR_VERSION: u32 = 1;

/// Euclidean distance over all 68 landmark points.
fn landmark_distance(a: &FaceRecord, b: &FaceRecord) -> f64 {
    a.landmarks
        .iter()
        .zip(&b.landmarks)
        .map(|(p, q)| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Index of the candidate minimizing the 68-point landmark distance,
/// excluding candidates that share the target's identity. Ties go to the
/// earliest candidate.
pub fn find_source_index(target: &FaceRecord, candidates: &[FaceRecord]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, candidate) in candidates.iter().enumerate() {
        if candidate.identity == target.identity {
            continue;
        }
        let d = landmark_distance(target, candidate);
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i).ok_or_else(|| {
        Error::Search(format!(
            "no candidate with identity different from {:?}",
            target.identity
        ))
    })
}

/// See [`find_source_index`].
pub fn find_source<'a>(
    target: &FaceRecord,
    candidates: &'a [FaceRecord],
) -> Result<&'a FaceRecord> {
    Ok(&candidates[find_source_index(target, candidates)?])
}

/// Regions the expansion emits, with their relabeling rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugRegion {
    Eye,
    LipAndMouth,
    Nose,
}

impl AugRegion {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "eye" => Ok(AugRegion::Eye),
            "lip_and_mouth" => Ok(AugRegion::LipAndMouth),
            "nose" => Ok(AugRegion::Nose),
            other => Err(Error::Config(format!(
                "unknown augmentation region {other:?}; expected eye, lip_and_mouth, or nose"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AugRegion::Eye => "eye",
            AugRegion::LipAndMouth => "lip_and_mouth",
            AugRegion::Nose => "nose",
        }
    }

    fn mask_region(self) -> Region {
        match self {
            AugRegion::Eye => Region::Eye,
            AugRegion::LipAndMouth => Region::LipAndMouth,
            AugRegion::Nose => Region::Nose,
        }
    }

    /// The manipulation tag carried by emitted records.
    pub fn manipulation(self) -> &'static str {
        match self {
            AugRegion::Eye => "eye_aug",
            AugRegion::LipAndMouth => "lip_mouth_aug",
            AugRegion::Nose => "nose_aug",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandConfig {
    pub regions: Vec<AugRegion>,
    /// Targets per region; capped by the number of available real faces.
    pub quota: usize,
    pub seed: u64,
    /// Blur sigma at height 256, scaled linearly with image height.
    pub blur_sigma_base: f64,
}

impl ExpandConfig {
    pub fn new(regions: Vec<AugRegion>, quota: usize, seed: u64) -> Self {
        ExpandConfig {
            regions,
            quota,
            seed,
            blur_sigma_base: DEFAULT_BLUR_SIGMA_AT_256,
        }
    }
}

/// Run provenance, written next to the output manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpandProvenance {
    pub generator_version: u32,
    pub seed: u64,
    pub regions: Vec<String>,
    pub quota: usize,
    pub records_written: usize,
    pub degenerate_masks: usize,
    pub shift_only_corrections: usize,
    pub errors: Vec<String>,
}

/// Output of one expansion run.
#[derive(Debug)]
pub struct ExpandOutput {
    /// Input real records followed by the new augmented records.
    pub records: Vec<FaceRecord>,
    pub provenance: ExpandProvenance,
}

/// Runs the expansion pipeline, writing one PPM per emitted record into
/// `out_dir`. I/O failures on individual records are collected and the
/// pipeline continues.
pub fn expand(
    real: &[FaceRecord],
    candidates: &[FaceRecord],
    graph: &HierarchyGraph,
    config: &ExpandConfig,
    out_dir: impl AsRef<Path>,
) -> Result<ExpandOutput> {
    let out_dir = out_dir.as_ref();
    if real.is_empty() || candidates.is_empty() {
        return Err(Error::Config(
            "expansion needs nonempty real and candidate manifests".into(),
        ));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let mut provenance = ExpandProvenance {
        generator_version: EXPANSION_GENERATOR_VERSION,
        seed: config.seed,
        regions: config.regions.iter().map(|r| r.name().to_string()).collect(),
        quota: config.quota,
        records_written: 0,
        degenerate_masks: 0,
        shift_only_corrections: 0,
        errors: Vec::new(),
    };
    let mut records: Vec<FaceRecord> = real.to_vec();

    let mut streams = RngStreams::from_seed(config.seed);
    let order = shuffled_indices(&mut streams.data, real.len());
    let chosen: Vec<usize> = order.into_iter().take(config.quota).collect();

    for &region in &config.regions {
        for (slot, &target_idx) in chosen.iter().enumerate() {
            let target = &real[target_idx];
            match expand_one(target, candidates, graph, config, region, slot, out_dir) {
                Ok(done) => {
                    provenance.records_written += 1;
                    provenance.degenerate_masks += done.degenerate_mask as usize;
                    provenance.shift_only_corrections += done.shift_only as usize;
                    records.push(done.record);
                }
                Err(e) => {
                    provenance.errors.push(format!(
                        "{} on {}: {e}",
                        region.name(),
                        target.image_path
                    ));
                }
            }
        }
    }
    Ok(ExpandOutput { records, provenance })
}

struct ExpandedOne {
    record: FaceRecord,
    degenerate_mask: bool,
    shift_only: bool,
}

fn expand_one(
    target: &FaceRecord,
    candidates: &[FaceRecord],
    graph: &HierarchyGraph,
    config: &ExpandConfig,
    region: AugRegion,
    slot: usize,
    out_dir: &Path,
) -> Result<ExpandedOne> {
    let source = find_source(target, candidates)?;
    let target_img = read_ppm(&target.image_path)?;
    let mut source_img = read_ppm(&source.image_path)?;
    if (source_img.width, source_img.height) != (target_img.width, target_img.height) {
        source_img = resize_bilinear(&source_img, target_img.width, target_img.height);
    }
    let sigma = config.blur_sigma_base * target_img.height as f64 / 256.0;
    let spec = RegionSpec::standard(region.mask_region(), sigma);
    let mask = region_mask(&target.landmarks, &spec, target_img.width, target_img.height)?;
    let blended = blend(&target_img, &source_img, &mask)?;
    let (corrected, report) = color_correct(&blended, &target_img, &mask)?;

    let stem = Path::new(&target.image_path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".to_string());
    let filename = format!("{}_{slot:03}_{stem}.ppm", region.name());
    write_ppm(&corrected, out_dir.join(&filename))?;

    let labels = relabel(region.manipulation())?;
    let (resolved, _) = resolve_labels(graph, &labels)?;
    debug_assert!(graph.is_valid(&resolved)?);
    Ok(ExpandedOne {
        record: FaceRecord {
            image_path: filename,
            identity: target.identity.clone(),
            landmarks: target.landmarks.clone(),
            manipulation: Some(region.manipulation().to_string()),
            labels,
        },
        degenerate_mask: mask.degenerate,
        shift_only: !report.shift_only_channels.is_empty(),
    })
}

/// Face-shaped landmark layout in a 64x64 frame, used by fixtures and tests:
/// jaw, brows, nose bridge with nostril line, eye hexagons, and lip/mouth
/// rings, each region enclosing genuine area.
pub fn synthetic_landmarks(shift: f64) -> Vec<[f64; 2]> {
    let mut lm = vec![[0.0f64; 2]; 68];
    let two_pi = 2.0 * std::f64::consts::PI;
    // jaw 0..=16: lower half-ellipse
    for (k, slot) in lm.iter_mut().take(17).enumerate() {
        let t = std::f64::consts::PI * k as f64 / 16.0;
        *slot = [32.0 - 26.0 * t.cos(), 26.0 + 30.0 * t.sin()];
    }
    // brows 17..=21 and 22..=26: two arcs
    for k in 0..5 {
        lm[17 + k] = [14.0 + 3.0 * k as f64, 14.0 - (k as f64 - 2.0).abs()];
        lm[22 + k] = [38.0 + 3.0 * k as f64, 14.0 - (k as f64 - 2.0).abs()];
    }
    // nose 27..=30: bridge, 31..=35: nostril line
    for k in 0..4 {
        lm[27 + k] = [32.0, 20.0 + 4.0 * k as f64];
    }
    for k in 0..5 {
        lm[31 + k] = [26.0 + 3.0 * k as f64, 36.0];
    }
    // eyes 36..=41 and 42..=47: hexagons
    for k in 0..6 {
        let t = two_pi * k as f64 / 6.0;
        lm[36 + k] = [20.0 + 5.0 * t.cos(), 20.0 + 3.0 * t.sin()];
        lm[42 + k] = [44.0 + 5.0 * t.cos(), 20.0 + 3.0 * t.sin()];
    }
    // outer lip ring 48..=59 and inner mouth ring 60..=67
    for k in 0..12 {
        let t = two_pi * k as f64 / 12.0;
        lm[48 + k] = [32.0 + 10.0 * t.cos(), 47.0 + 6.0 * t.sin()];
    }
    for k in 0..8 {
        let t = two_pi * k as f64 / 8.0;
        lm[60 + k] = [32.0 + 6.0 * t.cos(), 47.0 + 3.0 * t.sin()];
    }
    for p in &mut lm {
        p[0] += shift;
        p[1] += shift;
    }
    lm
}

/// Writes `manifest.jsonl` and `provenance.json` under `out_dir`.
pub fn write_expand_artifacts(out_dir: impl AsRef<Path>, output: &ExpandOutput) -> Result<()> {
    let out_dir = out_dir.as_ref();
    manifest::save_manifest(out_dir.join("manifest.jsonl"), &output.records)?;
    let path = out_dir.join("provenance.json");
    let json = serde_json::to_string_pretty(&output.provenance).expect("provenance serializes");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}
