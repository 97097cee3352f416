//! Grayscale images, binary PGM I/O and the overlapping-patch transform.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Row-major grayscale image with values nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Image(format!(
                "{} values for a {width}×{height} image",
                values.len()
            )));
        }
        Ok(Self { width, height, values })
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Self {
            width,
            height,
            values: vec![v; width * height],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn clipped(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..*self
        }
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        Self::decode_pgm(&bytes)
    }

    /// Decodes binary PGM (P5) with maxval up to 65535.
    pub fn decode_pgm(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = header_token(bytes, &mut pos)?;
        if magic != "P5" {
            return Err(Error::Image(format!("unsupported magic `{magic}`")));
        }
        let mut number = |what: &str| -> Result<usize> {
            let tok = header_token(bytes, &mut pos)?;
            tok.parse()
                .map_err(|_| Error::Image(format!("bad {what} `{tok}`")))
        };
        let width = number("width")?;
        let height = number("height")?;
        let maxval = number("maxval")?;
        if maxval == 0 || maxval > 65535 {
            return Err(Error::Image(format!("maxval {maxval} out of range")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let depth = if maxval < 256 { 1 } else { 2 };
        let need = width * height * depth;
        let raster = bytes
            .get(pos..pos + need)
            .ok_or_else(|| Error::Image(format!("raster truncated: need {need} bytes")))?;
        let scale = maxval as f64;
        let values = if depth == 1 {
            raster.iter().map(|&b| b as f64 / scale).collect()
        } else {
            raster
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
                .collect()
        };
        Self::new(width, height, values)
    }

    /// 8-bit P5 encoding of the clipped image.
    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(
            self.values
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.encode_pgm())?;
        w.flush()?;
        Ok(())
    }
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::Image("header truncated".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

/// 10 log₁₀(1/MSE) with peak 1; identical images give +∞.
pub fn psnr(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::ShapeMismatch(format!(
            "{}×{} vs {}×{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let mse = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.values.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

/// Adds i.i.d. N(0, σ²) noise and clips to [0, 1].
pub fn add_noise<R: Rng + ?Sized>(img: &GrayImage, sigma: f64, rng: &mut R) -> GrayImage {
    GrayImage {
        values: img
            .values
            .iter()
            .map(|v| (v + sigma * rng.sample::<f64, _>(StandardNormal)).clamp(0.0, 1.0))
            .collect(),
        ..*img
    }
}

/// All k×k patches of an image as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Patches {
    pub k: usize,
    pub width: usize,
    pub height: usize,
    /// k² × count; column j is patch j vectorized column-major.
    pub data: Matrix,
    /// Removed per-patch means (zeros when mean removal is off).
    pub means: Vec<f64>,
}

impl Patches {
    fn rows_of_origins(&self) -> usize {
        self.height - self.k + 1
    }

    /// Top-left corner (row, col) of patch `j`.
    pub fn origin(&self, j: usize) -> (usize, usize) {
        let r = self.rows_of_origins();
        (j % r, j / r)
    }
}

/// Extracts every k×k patch with stride 1. Patch j has its top-left corner
/// at (j mod (H−k+1), j div (H−k+1)).
pub fn extract_patches(img: &GrayImage, k: usize, remove_mean: bool) -> Result<Patches> {
    if k == 0 || k > img.width.min(img.height) {
        return Err(Error::invalid("patch", format!("{k} does not fit a {}×{} image", img.width, img.height)));
    }
    let rows = img.height - k + 1;
    let cols = img.width - k + 1;
    let count = rows * cols;
    let mut data = Matrix::zeros(k * k, count);
    let mut means = vec![0.0; count];
    for c0 in 0..cols {
        for r0 in 0..rows {
            let j = c0 * rows + r0;
            let mut col = data.column_mut(j);
            for dc in 0..k {
                for dr in 0..k {
                    col[dc * k + dr] = img.get(r0 + dr, c0 + dc);
                }
            }
            if remove_mean {
                let m = col.sum() / (k * k) as f64;
                col.add_scalar_mut(-m);
                means[j] = m;
            }
        }
    }
    Ok(Patches {
        k,
        width: img.width,
        height: img.height,
        data,
        means,
    })
}

/// Re-adds the means of `layout` to the columns of `data` and averages the
/// overlapping patches per pixel. No clipping is applied.
pub fn reconstruct(layout: &Patches, data: &Matrix) -> Result<GrayImage> {
    let k = layout.k;
    if data.nrows() != k * k || data.ncols() != layout.means.len() {
        return Err(Error::ShapeMismatch(format!(
            "patch matrix {}×{}, layout expects {}×{}",
            data.nrows(),
            data.ncols(),
            k * k,
            layout.means.len()
        )));
    }
    let (w, h) = (layout.width, layout.height);
    let mut sum = vec![0.0; w * h];
    let mut hits = vec![0u32; w * h];
    for (j, col) in data.column_iter().enumerate() {
        let (r0, c0) = layout.origin(j);
        let m = layout.means[j];
        for dc in 0..k {
            for dr in 0..k {
                let idx = (r0 + dr) * w + c0 + dc;
                sum[idx] += col[dc * k + dr] + m;
                hits[idx] += 1;
            }
        }
    }
    let values = sum.iter().zip(&hits).map(|(s, &c)| s / c as f64).collect();
    GrayImage::new(w, h, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn ramp(w: usize, h: usize) -> GrayImage {
        let values = (0..w * h).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
        GrayImage::new(w, h, values).unwrap()
    }

    #[test]
    fn patch_count_and_layout() {
        let img = ramp(12, 9);
        let p = extract_patches(&img, 4, false).unwrap();
        assert_eq!(p.data.shape(), (16, 9 * 6));
        // Column-major inside the patch: entry 1 is one row down.
        let j = 7;
        let (r0, c0) = p.origin(j);
        assert_eq!(p.data[(0, j)], img.get(r0, c0));
        assert_eq!(p.data[(1, j)], img.get(r0 + 1, c0));
        assert_eq!(p.data[(4, j)], img.get(r0, c0 + 1));
        assert!(extract_patches(&img, 10, true).is_err());
    }

    #[test]
    fn full_size_patch_count() {
        let img = GrayImage::filled(512, 512, 0.3);
        let p = extract_patches(&img, 8, true).unwrap();
        assert_eq!(p.data.ncols(), 255_025);
        assert_eq!(p.data.nrows(), 64);
        assert!(p.data.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn round_trip_is_identity() {
        let img = ramp(20, 15);
        for &remove in &[true, false] {
            let p = extract_patches(&img, 5, remove).unwrap();
            let back = reconstruct(&p, &p.data).unwrap();
            let worst = back
                .values
                .iter()
                .zip(&img.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(worst <= 1e-10, "{worst}");
        }
    }

    #[test]
    fn psnr_cases() {
        let a = ramp(30, 30);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = GrayImage {
            values: a.values.iter().map(|v| v + 0.05).collect(),
            ..a.clone()
        };
        assert!((psnr(&a, &b).unwrap() - 26.0206).abs() < 1e-3);
        assert!(psnr(&a, &GrayImage::filled(3, 3, 0.0)).is_err());
    }

    #[test]
    fn psnr_of_unclipped_gaussian_noise() {
        let a = GrayImage::filled(512, 512, 0.5);
        let mut rng = seeded(1);
        let sigma: f64 = 0.05;
        let b = GrayImage {
            values: a
                .values
                .iter()
                .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            ..a.clone()
        };
        let expected = -10.0 * (sigma * sigma).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 0.1);
    }

    #[test]
    fn pgm_round_trip() {
        let values: Vec<f64> = (0..=255).map(|v| v as f64 / 255.0).collect();
        let img = GrayImage::new(16, 16, values).unwrap();
        let bytes = img.encode_pgm();
        assert!(bytes.starts_with(b"P5\n16 16\n255\n"));
        let back = GrayImage::decode_pgm(&bytes).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn pgm_header_comments_and_errors() {
        let mut bytes = b"P5\n# made by hand\n2 1\n# max\n255\n".to_vec();
        bytes.extend([0u8, 255]);
        let img = GrayImage::decode_pgm(&bytes).unwrap();
        assert_eq!(img.values, vec![0.0, 1.0]);
        assert!(GrayImage::decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(GrayImage::decode_pgm(b"P5\n4 4\n255\n\x00").is_err());
    }

    #[test]
    fn bundled_image_loads() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/camera.pgm");
        let img = GrayImage::read_pgm(&path).unwrap();
        assert_eq!((img.width, img.height), (512, 512));
        assert!(img.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
