//! Mask-weighted linear blending and statistics-matching color correction in
//! the decorrelated l-alpha-beta space.

use crate::error::{Error, Result};
use crate::expansion::mask::Mask;
use crate::image::Image;

/// RGB -> LMS (Reinhard et al. color-transfer matrix).
const RGB_TO_LMS: [[f64; 3]; 3] = [
    [0.3811, 0.5783, 0.0402],
    [0.1967, 0.7244, 0.0782],
    [0.0241, 0.1288, 0.8444],
];

/// Exact inverse of [`RGB_TO_LMS`]. The independently published inverse is
/// rounded to four decimals, which alone costs ~1e-3 per round trip; the
/// statistics-matching contract needs the conversion itself to be lossless.
fn lms_to_rgb_matrix() -> [[f64; 3]; 3] {
    let m = &RGB_TO_LMS;
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let c = |a: f64, b: f64, cc: f64, d: f64| (a * d - b * cc) / det;
    [
        [
            c(m[1][1], m[1][2], m[2][1], m[2][2]),
            -c(m[0][1], m[0][2], m[2][1], m[2][2]),
            c(m[0][1], m[0][2], m[1][1], m[1][2]),
        ],
        [
            -c(m[1][0], m[1][2], m[2][0], m[2][2]),
            c(m[0][0], m[0][2], m[2][0], m[2][2]),
            -c(m[0][0], m[0][2], m[1][0], m[1][2]),
        ],
        [
            c(m[1][0], m[1][1], m[2][0], m[2][1]),
            -c(m[0][0], m[0][1], m[2][0], m[2][1]),
            c(m[0][0], m[0][1], m[1][0], m[1][1]),
        ],
    ]
}

/// Floor that keeps the log of LMS defined on black pixels.
const LMS_FLOOR: f64 = 1e-6;

/// Variance below this is treated as a constant channel: the transfer then
/// shifts the mean without rescaling.
const VARIANCE_FLOOR: f64 = 1e-12;

fn mat_apply(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// RGB in [0, 1] to l-alpha-beta: LMS, log10, then the orthogonal transform.
pub fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lms = mat_apply(&RGB_TO_LMS, rgb);
    let log = [
        lms[0].max(LMS_FLOOR).log10(),
        lms[1].max(LMS_FLOOR).log10(),
        lms[2].max(LMS_FLOOR).log10(),
    ];
    let s3 = 3.0f64.sqrt();
    let s6 = 6.0f64.sqrt();
    let s2 = 2.0f64.sqrt();
    [
        (log[0] + log[1] + log[2]) / s3,
        (log[0] + log[1] - 2.0 * log[2]) / s6,
        (log[0] - log[1]) / s2,
    ]
}

/// Inverse of [`rgb_to_lab`] (unclamped; callers clamp on quantization).
pub fn lab_to_rgb(lab: [f64; 3]) -> [f64; 3] {
    let s3 = 3.0f64.sqrt();
    let s6 = 6.0f64.sqrt();
    let s2 = 2.0f64.sqrt();
    let log = [
        lab[0] / s3 + lab[1] / s6 + lab[2] / s2,
        lab[0] / s3 + lab[1] / s6 - lab[2] / s2,
        lab[0] / s3 - 2.0 * lab[1] / s6,
    ];
    let lms = [
        10f64.powf(log[0]),
        10f64.powf(log[1]),
        10f64.powf(log[2]),
    ];
    mat_apply(&lms_to_rgb_matrix(), lms)
}

fn check_same_dims(a: &Image, b: &Image) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch {
            expected: a.width * a.height,
            actual: b.width * b.height,
        });
    }
    Ok(())
}

fn check_mask_dims(image: &Image, mask: &Mask) -> Result<()> {
    if image.width != mask.width || image.height != mask.height {
        return Err(Error::DimensionMismatch {
            expected: image.width * image.height,
            actual: mask.width * mask.height,
        });
    }
    Ok(())
}

/// `out = mask * source + (1 - mask) * target`, per channel, in floating
/// point with one rounding at the end. Mask extremes reproduce the inputs
/// exactly.
pub fn blend(target: &Image, source: &Image, mask: &Mask) -> Result<Image> {
    check_same_dims(target, source)?;
    check_mask_dims(target, mask)?;
    let mut out = Image::new(target.width, target.height);
    for i in 0..target.width * target.height {
        let m = mask.values[i];
        for c in 0..3 {
            let t = target.data[i * 3 + c] as f64;
            let s = source.data[i * 3 + c] as f64;
            out.data[i * 3 + c] = (m * s + (1.0 - m) * t).round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(out)
}

/// What the correction did, for provenance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrectionReport {
    /// Channels (0..3 in l-alpha-beta order) whose source-region variance was
    /// too small to rescale; those were shifted only.
    pub shift_only_channels: Vec<usize>,
}

fn masked_stats(pixels: &[[f64; 3]]) -> ([f64; 3], [f64; 3]) {
    let n = pixels.len() as f64;
    let mut mean = [0.0; 3];
    for p in pixels {
        for c in 0..3 {
            mean[c] += p[c];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = [0.0; 3];
    for p in pixels {
        for c in 0..3 {
            var[c] += (p[c] - mean[c]).powi(2);
        }
    }
    for v in &mut var {
        *v /= n;
    }
    (mean, [var[0].sqrt(), var[1].sqrt(), var[2].sqrt()])
}

/// Statistics transfer on the mask support (mask > 0.5): every supported
/// pixel of `blended` is shifted and scaled per channel in l-alpha-beta so
/// the region's mean and standard deviation match those of the same region
/// in the original `target`. Returns unquantized RGB floats in [0, 1] scale.
pub fn color_correct_float(
    blended: &Image,
    target: &Image,
    mask: &Mask,
) -> Result<(Vec<[f64; 3]>, CorrectionReport)> {
    check_same_dims(blended, target)?;
    check_mask_dims(blended, mask)?;
    let support: Vec<usize> = (0..mask.values.len())
        .filter(|&i| mask.values[i] > 0.5)
        .collect();
    if support.is_empty() {
        return Err(Error::DegenerateInput(
            "color correction needs a mask with support above 0.5".into(),
        ));
    }
    let to_lab = |img: &Image, i: usize| {
        rgb_to_lab([
            img.data[i * 3] as f64 / 255.0,
            img.data[i * 3 + 1] as f64 / 255.0,
            img.data[i * 3 + 2] as f64 / 255.0,
        ])
    };
    let blended_lab: Vec<[f64; 3]> = support.iter().map(|&i| to_lab(blended, i)).collect();
    let target_lab: Vec<[f64; 3]> = support.iter().map(|&i| to_lab(target, i)).collect();
    let (mean_b, std_b) = masked_stats(&blended_lab);
    let (mean_t, std_t) = masked_stats(&target_lab);

    let mut report = CorrectionReport::default();
    let mut scale = [1.0; 3];
    for c in 0..3 {
        if std_b[c] * std_b[c] < VARIANCE_FLOOR {
            report.shift_only_channels.push(c);
        } else {
            scale[c] = std_t[c] / std_b[c];
        }
    }

    let mut out: Vec<[f64; 3]> = (0..blended.width * blended.height)
        .map(|i| {
            [
                blended.data[i * 3] as f64 / 255.0,
                blended.data[i * 3 + 1] as f64 / 255.0,
                blended.data[i * 3 + 2] as f64 / 255.0,
            ]
        })
        .collect();
    for (k, &i) in support.iter().enumerate() {
        let lab = blended_lab[k];
        let corrected = [
            (lab[0] - mean_b[0]) * scale[0] + mean_t[0],
            (lab[1] - mean_b[1]) * scale[1] + mean_t[1],
            (lab[2] - mean_b[2]) * scale[2] + mean_t[2],
        ];
        out[i] = lab_to_rgb(corrected);
    }
    Ok((out, report))
}

/// Quantized variant of [`color_correct_float`]: clamps to [0, 255] and
/// rounds. Pixels with mask at or below 0.5 are returned untouched.
pub fn color_correct(
    blended: &Image,
    target: &Image,
    mask: &Mask,
) -> Result<(Image, CorrectionReport)> {
    let (float_rgb, report) = color_correct_float(blended, target, mask)?;
    let mut out = blended.clone();
    for (i, rgb) in float_rgb.iter().enumerate() {
        if mask.values[i] > 0.5 {
            for c in 0..3 {
                out.data[i * 3 + c] = (rgb[c] * 255.0).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok((out, report))
}
