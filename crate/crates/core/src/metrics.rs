//! Representation similarity: linear CKA, windowed SSIM, and the
//! token-matrix reshape that lets SSIM run on encoder outputs.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::raster::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CkaScore {
    pub value: f64,
    /// Set when either block has zero centred energy; `value` is then 0.
    pub degenerate: bool,
}

fn centered(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mean = x.mean_axis(Axis(0)).expect("at least one row");
    &x - &mean
}

/// Linear centred kernel alignment between two representations of the same
/// `s` samples (rows).
///
/// `‖Ȳᵀ X̄‖²_F / (‖X̄ᵀ X̄‖_F ‖Ȳᵀ Ȳ‖_F)` with column-centred `X̄`, `Ȳ`.
pub fn linear_cka(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<CkaScore> {
    if x.nrows() != y.nrows() {
        return Err(Error::Shape(format!(
            "CKA needs the same sample count, got {} and {}",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.nrows() < 2 {
        return Err(Error::Shape("CKA needs at least two samples".into()));
    }
    let xc = centered(x);
    let yc = centered(y);
    let frob2 = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>();
    let cross = frob2(&yc.t().dot(&xc));
    let xx = frob2(&xc.t().dot(&xc)).sqrt();
    let yy = frob2(&yc.t().dot(&yc)).sqrt();
    if xx == 0.0 || yy == 0.0 {
        return Ok(CkaScore {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(CkaScore {
        value: cross / (xx * yy),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window_size: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `R`. `None` uses the joint `max - min` of the pair.
    pub data_range: Option<f64>,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window_size: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: None,
        }
    }
}

impl SsimParams {
    /// Normalised separable Gaussian window, row-major `size × size`.
    pub fn window(&self) -> Vec<f64> {
        let n = self.window_size;
        let centre = (n as f64 - 1.0) / 2.0;
        let g: Vec<f64> = (0..n)
            .map(|i| {
                let d = i as f64 - centre;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let mut w: Vec<f64> = g
            .iter()
            .flat_map(|a| g.iter().map(move |b| a * b))
            .collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        w
    }

    /// Stabilisers `(C1, C2)` for range `r`.
    pub fn constants(&self, r: f64) -> (f64, f64) {
        ((self.k1 * r).powi(2), (self.k2 * r).powi(2))
    }

    /// Range used for the pair `(a, b)`.
    pub fn range_for(&self, a: &Image, b: &Image) -> f64 {
        if let Some(r) = self.data_range {
            return r;
        }
        let (alo, ahi) = a.min_max();
        let (blo, bhi) = b.min_max();
        let span = ahi.max(bhi) - alo.min(blo);
        if span > 0.0 {
            span
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityReport {
    /// Mean SSIM over every map entry of every channel.
    pub score: f64,
    pub channel_scores: Vec<f64>,
    /// One `(height - window + 1) × (width - window + 1)` map per channel.
    pub maps: Vec<Array2<f64>>,
    pub data_range: f64,
}

/// Windowed SSIM over valid window positions, channel by channel.
pub fn ssim(a: &Image, b: &Image, params: &SsimParams) -> Result<SimilarityReport> {
    a.check_same_shape(b, "ssim")?;
    let n = params.window_size;
    let (w, h, c) = a.shape();
    if n == 0 || w < n || h < n {
        return Err(Error::Shape(format!(
            "{w}x{h} image is smaller than the {n}x{n} SSIM window"
        )));
    }
    let r = params.range_for(a, b);
    if r <= 0.0 || !r.is_finite() {
        return Err(Error::InvalidArgument(format!("SSIM data range must be positive, got {r}")));
    }
    let (c1, c2) = params.constants(r);
    let window = params.window();
    let (mw, mh) = (w - n + 1, h - n + 1);

    let mut maps = Vec::with_capacity(c);
    let mut channel_scores = Vec::with_capacity(c);
    for ch in 0..c {
        let pa = a.channel_plane(ch);
        let pb = b.channel_plane(ch);
        let mut map = Array2::zeros((mh, mw));
        for oy in 0..mh {
            for ox in 0..mw {
                let at = |p: &[f64], i: usize| p[(oy + i / n) * w + ox + i % n];
                let (mut mx, mut my) = (0.0, 0.0);
                for (i, &g) in window.iter().enumerate() {
                    mx += g * at(&pa, i);
                    my += g * at(&pb, i);
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for (i, &g) in window.iter().enumerate() {
                    let dx = at(&pa, i) - mx;
                    let dy = at(&pb, i) - my;
                    vx += g * dx * dx;
                    vy += g * dy * dy;
                    cov += g * dx * dy;
                }
                map[(oy, ox)] = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
        channel_scores.push(map.mean().expect("non-empty map"));
        maps.push(map);
    }
    let score = channel_scores.iter().sum::<f64>() / c as f64;
    Ok(SimilarityReport {
        score,
        channel_scores,
        maps,
        data_range: r,
    })
}

/// Reshapes patch tokens `(N-1) × D` onto a `width × height × channels`
/// raster by flattening token-major and refilling in image order.
pub fn tokens_to_image(tokens: ArrayView2<'_, f64>, shape: (usize, usize, usize)) -> Result<Image> {
    let (w, h, c) = shape;
    let (n, d) = tokens.dim();
    if n * d != w * h * c {
        return Err(Error::Shape(format!(
            "cannot reshape {n}x{d} tokens ({} values) into {w}x{h}x{c} ({} values); \
             strip the CLS row and check that (N-1)·D = W·H·C",
            n * d,
            w * h * c
        )));
    }
    Image::from_vec(w, h, c, tokens.iter().copied().collect())
}

/// Inverse of [`tokens_to_image`].
pub fn image_to_tokens(image: &Image, tokens: usize) -> Result<Array2<f64>> {
    let len = image.data().len();
    if tokens == 0 || !len.is_multiple_of(tokens) {
        return Err(Error::Shape(format!(
            "{len} samples do not split into {tokens} tokens"
        )));
    }
    Ok(Array2::from_shape_vec((tokens, len / tokens), image.data().to_vec())
        .expect("length checked"))
}
