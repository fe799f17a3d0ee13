//! Minimal 8-bit RGB image type with binary PPM (P6) i/o and bilinear
//! resampling. PPM keeps every artifact parseable without codec dependencies.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// Interleaved RGB, row-major, 8 bits per channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Image {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let o = (y * self.width + x) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// Flattened features in [0, 1], interleaved RGB row-major.
    pub fn to_features(&self) -> Vec<f64> {
        self.data.iter().map(|&b| b as f64 / 255.0).collect()
    }
}

/// Bilinear resample to the requested size.
pub fn resize_bilinear(src: &Image, width: usize, height: usize) -> Image {
    assert!(width > 0 && height > 0);
    let mut out = Image::new(width, height);
    let sx = src.width as f64 / width as f64;
    let sy = src.height as f64 / height as f64;
    for y in 0..height {
        // Map target pixel centers into source coordinates.
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (src.height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(src.height - 1);
        let wy = fy - y0 as f64;
        for x in 0..width {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (src.width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(src.width - 1);
            let wx = fx - x0 as f64;
            let mut rgb = [0u8; 3];
            for c in 0..3 {
                let p00 = src.pixel(x0, y0)[c] as f64;
                let p10 = src.pixel(x1, y0)[c] as f64;
                let p01 = src.pixel(x0, y1)[c] as f64;
                let p11 = src.pixel(x1, y1)[c] as f64;
                let top = p00 + (p10 - p00) * wx;
                let bottom = p01 + (p11 - p01) * wx;
                rgb[c] = (top + (bottom - top) * wy).round().clamp(0.0, 255.0) as u8;
            }
            out.set_pixel(x, y, rgb);
        }
    }
    out
}

pub fn write_ppm(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    bytes.extend_from_slice(&image.data);
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    // Skip whitespace and '#' comments.
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (*pos > start).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;

    let mut pos = 0;
    let bad = |msg: &str| Error::parse(path.display().to_string(), msg.to_string());
    let magic = next_token(&bytes, &mut pos).ok_or_else(|| bad("missing magic number"))?;
    if magic != "P6" {
        return Err(bad(&format!("expected P6, found {magic:?}")));
    }
    let mut dims = [0usize; 3];
    for (slot, what) in dims.iter_mut().zip(["width", "height", "maxval"]) {
        let token = next_token(&bytes, &mut pos).ok_or_else(|| bad(&format!("missing {what}")))?;
        *slot = token
            .parse()
            .map_err(|_| bad(&format!("invalid {what} {token:?}")))?;
    }
    let [width, height, maxval] = dims;
    if maxval != 255 {
        return Err(bad(&format!("only 8-bit images supported, maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(bad("image dimensions must be positive"));
    }
    // Exactly one whitespace byte separates the header from pixel data.
    pos += 1;
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(bad(&format!(
            "truncated pixel data: need {need} bytes, found {}",
            bytes.len().saturating_sub(pos)
        )));
    }
    Ok(Image {
        width,
        height,
        data: bytes[pos..pos + need].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(width: usize, height: usize) -> Image {
        let mut img = Image::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set_pixel(
                    x,
                    y,
                    [
                        (x * 255 / width.max(1)) as u8,
                        (y * 255 / height.max(1)) as u8,
                        128,
                    ],
                );
            }
        }
        img
    }

    #[test]
    fn ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.ppm");
        let img = gradient(7, 5);
        write_ppm(&img, &path).unwrap();
        assert_eq!(read_ppm(&path).unwrap(), img);
    }

    #[test]
    fn ppm_handles_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ppm");
        let mut bytes = b"P6\n# a comment\n2 1\n# another\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        std::fs::write(&path, bytes).unwrap();
        let img = read_ppm(&path).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.data, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn ppm_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ppm");
        std::fs::write(&path, b"P5\n2 1\n255\n__").unwrap();
        assert!(read_ppm(&path).is_err());
        std::fs::write(&path, b"P6\n2 1\n255\nab").unwrap();
        assert!(read_ppm(&path).is_err(), "truncated data must be rejected");
    }

    #[test]
    fn resize_identity_when_same_size() {
        let img = gradient(8, 6);
        assert_eq!(resize_bilinear(&img, 8, 6), img);
    }

    #[test]
    fn resize_constant_image_stays_constant() {
        let img = Image::filled(10, 10, [40, 90, 200]);
        let out = resize_bilinear(&img, 3, 7);
        for y in 0..7 {
            for x in 0..3 {
                assert_eq!(out.pixel(x, y), [40, 90, 200]);
            }
        }
    }

    #[test]
    fn features_are_unit_scaled() {
        let img = Image::filled(2, 2, [0, 255, 51]);
        let f = img.to_features();
        assert_eq!(f.len(), 12);
        assert_eq!(f[0], 0.0);
        assert_eq!(f[1], 1.0);
        assert!((f[2] - 0.2).abs() < 1e-12);
    }
}
