//! Layerwise CKA curves and final-layer SSIM maps.

use ndarray::{s, Array2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harness::cache::traces_of;
use crate::metrics::{linear_cka, ssim, tokens_to_image, SimilarityReport, SsimParams};
use crate::raster::Image;
use crate::vit::{LayerTrace, Model};
use crate::wavelet::WaveletBasis;

/// `Σₚ weights[p] · trace_p[layer]` over full token matrices.
pub fn combine_layer(parts: &[LayerTrace], weights: &[f64], layer: usize) -> Result<Array2<f64>> {
    if parts.len() != weights.len() || parts.is_empty() {
        return Err(Error::Shape(format!("{} weights for {} primitive traces", weights.len(), parts.len())));
    }
    let mut acc = parts[0].layer(layer)?.clone() * weights[0];
    for (t, &w) in parts.iter().zip(weights).skip(1) {
        acc.scaled_add(w, t.layer(layer)?);
    }
    Ok(acc)
}

/// CKA at layers `1..=L` between one trace and another, tokens as samples.
pub fn layer_cka(a: &LayerTrace, b: &LayerTrace) -> Result<Vec<f64>> {
    (1..=a.num_layers())
        .map(|l| Ok(linear_cka(a.layer(l)?.view(), b.layer(l)?.view())?.value))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CkaCurve {
    /// Index `i` holds layer `i + 1`.
    pub per_layer: Vec<f64>,
    pub images: usize,
}

/// Mean over `images` of per-layer CKA between the original trace and the
/// `weights`-combined primitive traces, for each weight vector in `weight_sets`.
pub fn layerwise_cka_report(
    model: &Model,
    images: &[&Image],
    basis: &WaveletBasis,
    levels: usize,
    weight_sets: &[&[f64]],
) -> Result<Vec<CkaCurve>> {
    if images.is_empty() {
        return Err(Error::Data("layerwise CKA needs at least one image".into()));
    }
    let layers = model.config().num_layers;
    let per_image: Vec<Vec<Vec<f64>>> = images
        .par_iter()
        .map(|img| {
            let (original, parts) = traces_of(model, img, basis, levels)?;
            weight_sets
                .iter()
                .map(|w| {
                    (1..=layers)
                        .map(|l| Ok(linear_cka(original.layer(l)?.view(), combine_layer(&parts, w, l)?.view())?.value))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let curves = (0..weight_sets.len())
        .map(|k| {
            let mut per_layer = vec![0.0; layers];
            for img in &per_image {
                for (acc, v) in per_layer.iter_mut().zip(&img[k]) {
                    *acc += v;
                }
            }
            per_layer.iter_mut().for_each(|v| *v /= images.len() as f64);
            CkaCurve {
                per_layer,
                images: images.len(),
            }
        })
        .collect();
    Ok(curves)
}

/// Final-layer patch tokens (CLS stripped) reshaped onto the input raster.
pub fn final_tokens_image(model: &Model, tokens: &Array2<f64>) -> Result<Image> {
    let cfg = model.config();
    let patches = tokens.slice(s![1.., ..]);
    tokens_to_image(patches, (cfg.image_size, cfg.image_size, cfg.channels))
}

/// Per-channel SSIM between the original and the composed final-layer
/// representation of `image`.
pub fn ssim_map_report(
    model: &Model,
    image: &Image,
    basis: &WaveletBasis,
    levels: usize,
    weights: &[f64],
) -> Result<SimilarityReport> {
    let (original, parts) = traces_of(model, image, basis, levels)?;
    let last = original.num_layers();
    let a = final_tokens_image(model, original.last())?;
    let b = final_tokens_image(model, &combine_layer(&parts, weights, last)?)?;
    ssim(&a, &b, &SsimParams::default())
}
