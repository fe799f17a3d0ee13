//! Region masks: the filled convex hull of a landmark subset, softened by a
//! truncated Gaussian blur.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Landmark count of the 68-point annotation convention.
pub const LANDMARK_COUNT: usize = 68;

/// Face regions addressable by landmark subsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Eye,
    Lip,
    Mouth,
    Nose,
    LipAndMouth,
}

impl Region {
    /// Landmark indices in the 68-point convention: eyes 36-47, nose 27-35,
    /// outer lip ring 48-59, inner mouth 60-67.
    pub fn landmark_indices(self) -> Vec<usize> {
        match self {
            Region::Eye => (36..=47).collect(),
            Region::Nose => (27..=35).collect(),
            Region::Lip => (48..=59).collect(),
            Region::Mouth => (60..=67).collect(),
            Region::LipAndMouth => (48..=67).collect(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::Eye => "eye",
            Region::Lip => "lip",
            Region::Mouth => "mouth",
            Region::Nose => "nose",
            Region::LipAndMouth => "lip_and_mouth",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "eye" => Ok(Region::Eye),
            "lip" => Ok(Region::Lip),
            "mouth" => Ok(Region::Mouth),
            "nose" => Ok(Region::Nose),
            "lip_and_mouth" => Ok(Region::LipAndMouth),
            other => Err(Error::Config(format!("unknown region {other:?}"))),
        }
    }
}

/// A region given by a landmark index set plus the blur width.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSpec {
    pub region: Region,
    pub landmark_indices: Vec<usize>,
    pub blur_sigma: f64,
}

impl RegionSpec {
    pub fn standard(region: Region, blur_sigma: f64) -> Self {
        RegionSpec {
            region,
            landmark_indices: region.landmark_indices(),
            blur_sigma,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.landmark_indices.is_empty() {
            return Err(Error::Config("region has no landmarks".into()));
        }
        if let Some(&bad) = self
            .landmark_indices
            .iter()
            .find(|&&i| i >= LANDMARK_COUNT)
        {
            return Err(Error::Config(format!(
                "landmark index {bad} outside the 68-point convention"
            )));
        }
        if !(self.blur_sigma >= 0.0) {
            return Err(Error::Config("blur sigma must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Grayscale mask in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    /// Set when the hull collapsed to a line and the polyline fallback ran.
    pub degenerate: bool,
}

impl Mask {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum()
    }
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Andrew's monotone chain; returns hull vertices in counterclockwise order.
fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn point_in_convex(hull: &[[f64; 2]], p: [f64; 2]) -> bool {
    // hull is counterclockwise; the point is inside iff it is never to the
    // right of an edge.
    let n = hull.len();
    for i in 0..n {
        if cross(hull[i], hull[(i + 1) % n], p) < 0.0 {
            return false;
        }
    }
    true
}

fn rasterize_hull(hull: &[[f64; 2]], width: usize, height: usize) -> Vec<f64> {
    let mut mask = vec![0.0; width * height];
    let min_y = hull.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let max_y = hull.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    let min_x = hull.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let max_x = hull.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let y0 = (min_y.floor().max(0.0)) as usize;
    let y1 = (max_y.ceil() as usize).min(height.saturating_sub(1));
    let x0 = (min_x.floor().max(0.0)) as usize;
    let x1 = (max_x.ceil() as usize).min(width.saturating_sub(1));
    for y in y0..=y1.min(height - 1) {
        for x in x0..=x1.min(width - 1) {
            // pixel-center containment
            if point_in_convex(hull, [x as f64 + 0.5, y as f64 + 0.5]) {
                mask[y * width + x] = 1.0;
            }
        }
    }
    mask
}

/// Bresenham line rasterization followed by a one-pixel dilation.
fn rasterize_polyline_dilated(points: &[[f64; 2]], width: usize, height: usize) -> Vec<f64> {
    let mut thin = vec![0.0; width * height];
    let mark = |x: i64, y: i64, buf: &mut Vec<f64>| {
        if (0..width as i64).contains(&x) && (0..height as i64).contains(&y) {
            buf[y as usize * width + x as usize] = 1.0;
        }
    };
    let segments: Vec<([f64; 2], [f64; 2])> = if points.len() == 1 {
        vec![(points[0], points[0])]
    } else {
        points.windows(2).map(|w| (w[0], w[1])).collect()
    };
    for (a, b) in segments {
        let (mut x0, mut y0) = (a[0].round() as i64, a[1].round() as i64);
        let (x1, y1) = (b[0].round() as i64, b[1].round() as i64);
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            mark(x0, y0, &mut thin);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }
    let mut dilated = vec![0.0; width * height];
    for y in 0..height as i64 {
        for x in 0..width as i64 {
            if thin[y as usize * width + x as usize] > 0.0 {
                for ny in y - 1..=y + 1 {
                    for nx in x - 1..=x + 1 {
                        mark(nx, ny, &mut dilated);
                    }
                }
            }
        }
    }
    dilated
}

/// Separable Gaussian blur with kernel radius `ceil(3 sigma)`, zero-padded;
/// the normalized kernel preserves total mass away from the borders.
fn blur(values: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return values.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= total;
    }
    let mut horizontal = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, &w) in kernel.iter().enumerate() {
                let j = x as i64 + k as i64 - radius;
                if (0..width as i64).contains(&j) {
                    acc += w * values[y * width + j as usize];
                }
            }
            horizontal[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, &w) in kernel.iter().enumerate() {
                let j = y as i64 + k as i64 - radius;
                if (0..height as i64).contains(&j) {
                    acc += w * horizontal[j as usize * width + x];
                }
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Builds a region mask: filled convex hull of the region's landmarks,
/// Gaussian-blurred. Landmarks outside the image are clamped to its bounds.
/// Collinear landmark sets fall back to a one-pixel-dilated polyline, with
/// the mask flagged degenerate.
pub fn region_mask(
    landmarks: &[[f64; 2]],
    spec: &RegionSpec,
    width: usize,
    height: usize,
) -> Result<Mask> {
    spec.validate()?;
    if landmarks.len() != LANDMARK_COUNT {
        return Err(Error::DimensionMismatch {
            expected: LANDMARK_COUNT,
            actual: landmarks.len(),
        });
    }
    if width == 0 || height == 0 {
        return Err(Error::Config("mask dimensions must be positive".into()));
    }
    let points: Vec<[f64; 2]> = spec
        .landmark_indices
        .iter()
        .map(|&i| {
            [
                landmarks[i][0].clamp(0.0, (width - 1) as f64),
                landmarks[i][1].clamp(0.0, (height - 1) as f64),
            ]
        })
        .collect();
    let hull = convex_hull(&points);
    let (binary, degenerate) = if hull.len() >= 3 {
        (rasterize_hull(&hull, width, height), false)
    } else {
        (rasterize_polyline_dilated(&hull, width, height), true)
    };
    let values = blur(&binary, width, height, spec.blur_sigma);
    Ok(Mask {
        width,
        height,
        values,
        degenerate,
    })
}
