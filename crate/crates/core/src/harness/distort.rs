//! Input distortions: additive Gaussian noise and a block-DCT compression
//! surrogate.
//!
//! The surrogate follows the baseline-JPEG recipe on each channel separately
//! (8×8 orthonormal DCT, quality-scaled luminance table, rounding) but has no
//! colour transform, chroma subsampling or entropy coding, so it is not
//! bit-compatible with real JPEG files. Externally compressed files can be
//! read through the usual image loaders instead.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::raster::Image;

pub const DEFAULT_NOISE_SIGMA: f64 = 0.1;
pub const DEFAULT_QUALITY: u32 = 50;

/// Adds i.i.d. `N(0, σ²)` to every sample and clamps to `[0, 1]`.
pub fn distort_noise(image: &Image, sigma: f64, seed: u64) -> Result<Image> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise sigma must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(image.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
    }
    Ok(out)
}

const LUMINANCE: [u32; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Standard luminance table scaled for `quality` (IJG convention).
pub fn quantization_table(quality: u32) -> Result<[u32; 64]> {
    if !(1..=100).contains(&quality) {
        return Err(Error::InvalidArgument(format!("quality must be in 1..=100, got {quality}")));
    }
    let scale = if quality < 50 { 5000 / quality } else { 200 - 2 * quality };
    let mut t = [0u32; 64];
    for (q, &base) in t.iter_mut().zip(&LUMINANCE) {
        *q = ((base * scale + 50) / 100).clamp(1, 255);
    }
    Ok(t)
}

/// Orthonormal 8-point DCT-II matrix, `m[k][n]`.
fn dct_matrix() -> &'static [[f64; 8]; 8] {
    static M: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    M.get_or_init(|| {
        let mut m = [[0.0; 8]; 8];
        for (k, row) in m.iter_mut().enumerate() {
            let a = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (n, v) in row.iter_mut().enumerate() {
                *v = a * (PI * (2 * n + 1) as f64 * k as f64 / 16.0).cos();
            }
        }
        m
    })
}

fn dct2(block: &[f64; 64], inverse: bool) -> [f64; 64] {
    let m = dct_matrix();
    let at = |k: usize, n: usize| if inverse { m[n][k] } else { m[k][n] };
    let mut tmp = [0.0; 64];
    for r in 0..8 {
        for k in 0..8 {
            tmp[r * 8 + k] = (0..8).map(|n| at(k, n) * block[r * 8 + n]).sum();
        }
    }
    let mut out = [0.0; 64];
    for c in 0..8 {
        for k in 0..8 {
            out[k * 8 + c] = (0..8).map(|n| at(k, n) * tmp[n * 8 + c]).sum();
        }
    }
    out
}

/// Block-DCT quantisation at `quality`, clamped to `[0, 1]`. Image sides must
/// be multiples of 8.
pub fn distort_compress(image: &Image, quality: u32) -> Result<Image> {
    let table = quantization_table(quality)?;
    let (w, h, channels) = image.shape();
    if w % 8 != 0 || h % 8 != 0 {
        return Err(Error::Shape(format!("block compression needs sides divisible by 8, got {w}x{h}")));
    }
    let mut out = image.clone();
    for c in 0..channels {
        for by in (0..h).step_by(8) {
            for bx in (0..w).step_by(8) {
                let mut block = [0.0; 64];
                for (i, v) in block.iter_mut().enumerate() {
                    *v = image.get(bx + i % 8, by + i / 8, c) * 255.0 - 128.0;
                }
                let mut coeffs = dct2(&block, false);
                for (v, &q) in coeffs.iter_mut().zip(&table) {
                    *v = (*v / q as f64).round() * q as f64;
                }
                let back = dct2(&coeffs, true);
                for (i, v) in back.iter().enumerate() {
                    out.set(bx + i % 8, by + i / 8, c, ((v + 128.0) / 255.0).clamp(0.0, 1.0));
                }
            }
        }
    }
    Ok(out)
}
