//! A compact pre-norm Vision Transformer encoder with a linear classifier head.
//!
//! The model is a frozen function of its parameters: [`forward`] returns the
//! token matrix after every encoder layer so that representations can be
//! probed layer by layer, and [`classify`] exposes the head on its own.
//!
//! Linear layers follow the `y = x · Wᵀ + b` convention with `W` stored as
//! `[out, in]`, which matches most exported checkpoints.

mod weights;

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::raster::Image;
use crate::tensor::Tensor;

pub use weights::{load_weights, save_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};

pub const LAYER_NORM_EPS: f64 = 1e-6;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub mlp_dim: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    /// 32×32×3 inputs, 4×4 patches, 4 layers of width 48.
    ///
    /// `(N - 1) · D = 64 · 48 = 32 · 32 · 3`, so final-layer patch tokens can
    /// be reshaped back onto the input grid.
    pub const fn toy() -> Self {
        ModelConfig {
            image_size: 32,
            channels: 3,
            patch_size: 4,
            hidden_dim: 48,
            num_heads: 4,
            num_layers: 4,
            mlp_dim: 192,
            num_classes: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = self.fields();
        if let Some((name, _)) = FIELD_NAMES.iter().zip(fields).find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!(
                "model config field {name} must be positive"
            )));
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::InvalidArgument(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return Err(Error::InvalidArgument(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Patch tokens plus the CLS token.
    pub fn num_tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    /// The eight fields in container order.
    pub fn fields(&self) -> [usize; 8] {
        [
            self.image_size,
            self.channels,
            self.patch_size,
            self.hidden_dim,
            self.num_heads,
            self.num_layers,
            self.mlp_dim,
            self.num_classes,
        ]
    }

    pub fn from_fields(f: [usize; 8]) -> Self {
        ModelConfig {
            image_size: f[0],
            channels: f[1],
            patch_size: f[2],
            hidden_dim: f[3],
            num_heads: f[4],
            num_layers: f[5],
            mlp_dim: f[6],
            num_classes: f[7],
        }
    }

    /// Every parameter tensor as `(name, dims)`, in canonical order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.hidden_dim;
        let mut out = vec![
            ("patch_embed.weight".to_string(), vec![d, self.patch_dim()]),
            ("patch_embed.bias".to_string(), vec![d]),
            ("cls_token".to_string(), vec![d]),
            ("pos_embed".to_string(), vec![self.num_tokens(), d]),
        ];
        for l in 0..self.num_layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            out.push((p("ln1.scale"), vec![d]));
            out.push((p("ln1.shift"), vec![d]));
            for proj in ["q", "k", "v", "out"] {
                out.push((p(&format!("attn.{proj}.weight")), vec![d, d]));
                out.push((p(&format!("attn.{proj}.bias")), vec![d]));
            }
            out.push((p("ln2.scale"), vec![d]));
            out.push((p("ln2.shift"), vec![d]));
            out.push((p("mlp.fc1.weight"), vec![self.mlp_dim, d]));
            out.push((p("mlp.fc1.bias"), vec![self.mlp_dim]));
            out.push((p("mlp.fc2.weight"), vec![d, self.mlp_dim]));
            out.push((p("mlp.fc2.bias"), vec![d]));
        }
        out.push(("final_ln.scale".to_string(), vec![d]));
        out.push(("final_ln.shift".to_string(), vec![d]));
        out.push(("head.weight".to_string(), vec![self.num_classes, d]));
        out.push(("head.bias".to_string(), vec![self.num_classes]));
        out
    }
}

const FIELD_NAMES: [&str; 8] = [
    "image_size",
    "channels",
    "patch_size",
    "hidden_dim",
    "num_heads",
    "num_layers",
    "mlp_dim",
    "num_classes",
];

enum Init {
    Normal,
    Zeros,
    Ones,
}

fn init_kind(name: &str) -> Init {
    if name.ends_with(".bias") || name.ends_with(".shift") {
        Init::Zeros
    } else if name.ends_with(".scale") {
        Init::Ones
    } else {
        Init::Normal
    }
}

/// Immutable parameter set. Every tensor shape is fixed by the config.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: BTreeMap<String, Tensor>,
}

impl Model {
    /// Builds a model from named tensors; the set of names and all shapes
    /// must match `config` exactly and every value must be finite.
    pub fn from_parameters(config: ModelConfig, params: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = config.parameter_shapes();
        for (name, dims) in &shapes {
            let t = params
                .get(name)
                .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))?;
            if &t.dims != dims {
                return Err(Error::Format(format!(
                    "tensor `{name}` has dims {:?}, config requires {dims:?}",
                    t.dims
                )));
            }
            if let Some(i) = t.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::Format(format!(
                    "tensor `{name}` has non-finite value at index {i}"
                )));
            }
        }
        if params.len() != shapes.len() {
            let expected: std::collections::HashSet<&str> =
                shapes.iter().map(|(n, _)| n.as_str()).collect();
            let extra: Vec<String> = params
                .keys()
                .filter(|k| !expected.contains(k.as_str()))
                .cloned()
                .collect();
            return Err(Error::Format(format!(
                "unexpected tensors for this config: {}",
                extra.join(", ")
            )));
        }
        Ok(Model { config, params })
    }

    /// All parameters zero (including layer-norm scales).
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = config
            .parameter_shapes()
            .into_iter()
            .map(|(name, dims)| {
                let n = dims.iter().product();
                (name, Tensor { dims, data: vec![0.0; n] })
            })
            .collect();
        Self::from_parameters(config, params)
    }

    /// Returns a new model with one tensor replaced.
    pub fn with_parameter(&self, name: &str, tensor: Tensor) -> Result<Self> {
        if !self.params.contains_key(name) {
            return Err(Error::InvalidArgument(format!("no parameter named `{name}`")));
        }
        let mut params = self.params.clone();
        params.insert(name.to_string(), tensor);
        Self::from_parameters(self.config, params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    /// Parameters in canonical order.
    pub fn named_parameters(&self) -> impl Iterator<Item = (String, &Tensor)> + '_ {
        self.config
            .parameter_shapes()
            .into_iter()
            .map(move |(name, _)| {
                let t = &self.params[&name];
                (name, t)
            })
    }

    fn vec(&self, name: &str) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[name].data[..])
    }

    fn mat(&self, name: &str) -> ArrayView2<'_, f64> {
        let t = &self.params[name];
        ArrayView2::from_shape((t.dims[0], t.dims[1]), &t.data).expect("shape checked at construction")
    }

    /// Classifier matrix `W_c`, `K × D`.
    pub fn head_weight(&self) -> ArrayView2<'_, f64> {
        self.mat("head.weight")
    }

    /// Classifier bias `b_c`, length `K`.
    pub fn head_bias(&self) -> ArrayView1<'_, f64> {
        self.vec("head.bias")
    }

    /// SHA-256 of the serialized weights, hex encoded.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(save_weights(self));
        hex::encode(digest)
    }
}

/// Deterministic random initialisation: truncated normal (±2σ, σ = 0.02) for
/// matrices and embeddings, zero biases, unit layer-norm scales.
pub fn init_random(config: ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = BTreeMap::new();
    for (name, dims) in config.parameter_shapes() {
        let n: usize = dims.iter().product();
        let data = match init_kind(&name) {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Normal => (0..n).map(|_| truncated_normal(&mut rng) * INIT_STD).collect(),
        };
        params.insert(name, Tensor { dims, data });
    }
    Model::from_parameters(config, params)
}

fn truncated_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

/// Token matrices for every layer.
///
/// `layers[0]` is the embedded input and `layers[l]` the output of encoder
/// layer `l`; the last entry has the terminal layer norm applied. Row 0 of
/// every matrix is the CLS token.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub layers: Vec<Array2<f64>>,
}

impl LayerTrace {
    pub fn num_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn layer(&self, l: usize) -> Result<&Array2<f64>> {
        self.layers.get(l).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "layer {l} out of range 0..={}",
                self.layers.len() - 1
            ))
        })
    }

    pub fn last(&self) -> &Array2<f64> {
        self.layers.last().expect("trace is never empty")
    }
}

/// CLS row of layer `l`.
pub fn cls_token(trace: &LayerTrace, layer: usize) -> Result<Array1<f64>> {
    Ok(trace.layer(layer)?.row(0).to_owned())
}

/// `W_c · cls + b_c`.
pub fn classify(model: &Model, cls: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    let d = model.config.hidden_dim;
    if cls.len() != d {
        return Err(Error::Shape(format!(
            "classifier expects a {d}-vector, got {}",
            cls.len()
        )));
    }
    Ok(model.head_weight().dot(&cls) + model.head_bias())
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Flattens patches row-major over the grid, each patch as `(dy, dx, c)`.
pub fn patchify(config: &ModelConfig, image: &Image) -> Array2<f64> {
    let p = config.patch_size;
    let g = config.grid();
    let c = config.channels;
    let mut out = Array2::zeros((g * g, config.patch_dim()));
    for py in 0..g {
        for px in 0..g {
            let mut row = out.row_mut(py * g + px);
            let mut j = 0;
            for dy in 0..p {
                for dx in 0..p {
                    for ch in 0..c {
                        row[j] = image.get(px * p + dx, py * p + dy, ch);
                        j += 1;
                    }
                }
            }
        }
    }
    out
}

fn linear(model: &Model, x: &Array2<f64>, prefix: &str) -> Array2<f64> {
    let w = model.mat(&format!("{prefix}.weight"));
    let b = model.vec(&format!("{prefix}.bias"));
    x.dot(&w.t()) + b
}

/// Row-wise layer norm. Zero-variance rows normalise to zero.
pub fn layer_norm(
    x: &Array2<f64>,
    scale: ArrayView1<'_, f64>,
    shift: ArrayView1<'_, f64>,
) -> Array2<f64> {
    let d = x.ncols() as f64;
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for (i, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * scale[i] + shift[i];
        }
    }
    out
}

/// Exact Gaussian-CDF GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

pub(crate) fn softmax_rows(scores: &mut Array2<f64>) {
    for mut row in scores.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

fn self_attention(
    model: &Model,
    x: &Array2<f64>,
    layer: usize,
    maps: Option<&mut Vec<Array2<f64>>>,
) -> Array2<f64> {
    let cfg = &model.config;
    let prefix = format!("layers.{layer}.attn");
    let q = linear(model, x, &format!("{prefix}.q"));
    let k = linear(model, x, &format!("{prefix}.k"));
    let v = linear(model, x, &format!("{prefix}.v"));
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Array2::zeros(x.raw_dim());
    let mut collected = Vec::new();
    for h in 0..cfg.num_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        softmax_rows(&mut scores);
        heads.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        if maps.is_some() {
            collected.push(scores);
        }
    }
    if let Some(m) = maps {
        m.extend(collected);
    }
    linear(model, &heads, &format!("{prefix}.out"))
}

fn mlp(model: &Model, x: &Array2<f64>, layer: usize) -> Array2<f64> {
    let hidden = linear(model, x, &format!("layers.{layer}.mlp.fc1")).mapv(gelu);
    linear(model, &hidden, &format!("layers.{layer}.mlp.fc2"))
}

fn check_image(model: &Model, image: &Image) -> Result<()> {
    let cfg = &model.config;
    let expect = (cfg.image_size, cfg.image_size, cfg.channels);
    if image.shape() != expect {
        return Err(Error::Shape(format!(
            "model expects {expect:?} images, got {:?}",
            image.shape()
        )));
    }
    Ok(())
}

fn embed(model: &Model, image: &Image) -> Array2<f64> {
    let cfg = &model.config;
    let patches = patchify(cfg, image);
    let projected = linear(model, &patches, "patch_embed");
    let mut tokens = Array2::zeros((cfg.num_tokens(), cfg.hidden_dim));
    tokens.row_mut(0).assign(&model.vec("cls_token"));
    tokens.slice_mut(s![1.., ..]).assign(&projected);
    tokens + model.mat("pos_embed")
}

fn run(model: &Model, image: &Image, mut maps: Option<&mut Vec<Vec<Array2<f64>>>>) -> Result<LayerTrace> {
    check_image(model, image)?;
    let cfg = &model.config;
    let mut x = embed(model, image);
    let mut layers = Vec::with_capacity(cfg.num_layers + 1);
    layers.push(x.clone());
    for l in 0..cfg.num_layers {
        let p = |s: &str| format!("layers.{l}.{s}");
        let normed = layer_norm(&x, model.vec(&p("ln1.scale")), model.vec(&p("ln1.shift")));
        let mut layer_maps = Vec::new();
        let attn = self_attention(model, &normed, l, maps.as_ref().map(|_| &mut layer_maps));
        x += &attn;
        let normed = layer_norm(&x, model.vec(&p("ln2.scale")), model.vec(&p("ln2.shift")));
        x += &mlp(model, &normed, l);
        if let Some(m) = maps.as_deref_mut() {
            m.push(layer_maps);
        }
        layers.push(x.clone());
    }
    let last = layers.last_mut().expect("at least one layer");
    *last = layer_norm(last, model.vec("final_ln.scale"), model.vec("final_ln.shift"));
    Ok(LayerTrace { layers })
}

/// Runs the encoder and records every layer's tokens.
pub fn forward(model: &Model, image: &Image) -> Result<LayerTrace> {
    run(model, image, None)
}

/// Like [`forward`], also returning per-layer, per-head attention matrices.
pub fn forward_with_attention(
    model: &Model,
    image: &Image,
) -> Result<(LayerTrace, Vec<Vec<Array2<f64>>>)> {
    let mut maps = Vec::new();
    let trace = run(model, image, Some(&mut maps))?;
    Ok((trace, maps))
}

#[cfg(test)]
fn row_means(x: &Array2<f64>) -> Array1<f64> {
    x.mean_axis(ndarray::Axis(1)).expect("non-empty")
}
