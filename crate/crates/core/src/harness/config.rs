//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored; unknown keys are rejected.
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `model` | (none) | VITW weight file; when absent a toy model is initialised |
//! | `model_seed` | `0` | init seed for the toy model |
//! | `dataset` | `synthetic` | `synthetic` or a manifest CSV path |
//! | `classes` | `10` | class count (synthetic, or manifest label range) |
//! | `per_class` | `20` | synthetic images per class |
//! | `image_size` | `32` | synthetic image side |
//! | `data_seed` | `7` | synthetic generator seed |
//! | `split_seed` | `1` | train/val/test shuffle seed |
//! | `basis` | `haar` | `haar` or `db4` |
//! | `levels` | `1` | decomposition depth, 1 or 2 |
//! | `layer` | last | encoder layer whose CLS tokens are composed |
//! | `modes` | `unconstrained,conic,convex` | constraint modes to train |
//! | `lr` | `0.001` | SGD step |
//! | `epochs` | `100` | passes over the training split |
//! | `train_seed` | `0` | per-epoch shuffle seed |
//! | `soft_targets` | `false` | distil the original softmax instead of its argmax |
//! | `noise_sigma` | `0.1` | Gaussian noise level on `[0, 1]` pixels |
//! | `noise_seed` | `0` | noise seed |
//! | `quality` | `50` | block-DCT compression quality, 1..=100 |
//! | `cka_samples` | `20` | test images averaged in the CKA curve |
//! | `out` | `out` | output directory |

use std::path::{Path, PathBuf};

use crate::composer::ConstraintMode;
use crate::error::{Error, Result};
use crate::harness::distort::{DEFAULT_NOISE_SIGMA, DEFAULT_QUALITY};
use crate::wavelet::{WaveletBasis, WaveletName, MAX_LEVELS};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Synthetic,
    Manifest(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: Option<PathBuf>,
    pub model_seed: u64,
    pub dataset: DataSource,
    pub classes: usize,
    pub per_class: usize,
    pub image_size: usize,
    pub data_seed: u64,
    pub split_seed: u64,
    pub basis: WaveletName,
    pub levels: usize,
    pub layer: Option<usize>,
    pub modes: Vec<ConstraintMode>,
    pub lr: f64,
    pub epochs: usize,
    pub train_seed: u64,
    pub soft_targets: bool,
    pub noise_sigma: f64,
    pub noise_seed: u64,
    pub quality: u32,
    pub cka_samples: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: None,
            model_seed: 0,
            dataset: DataSource::Synthetic,
            classes: 10,
            per_class: 20,
            image_size: 32,
            data_seed: 7,
            split_seed: 1,
            basis: WaveletName::Haar,
            levels: 1,
            layer: None,
            modes: ConstraintMode::ALL.to_vec(),
            lr: 0.001,
            epochs: 100,
            train_seed: 0,
            soft_targets: false,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            noise_seed: 0,
            quality: DEFAULT_QUALITY,
            cka_samples: 20,
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("config key `{key}`: cannot parse `{value}`")))
}

impl ExperimentConfig {
    pub fn basis_filters(&self) -> WaveletBasis {
        WaveletBasis::new(self.basis)
    }

    /// Parses config text. Relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("config line {}: expected `key = value`, got `{line}`", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim(), base)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        match key {
            "model" => self.model = Some(base.join(value)),
            "model_seed" => self.model_seed = parse(key, value)?,
            "dataset" => {
                self.dataset = if value == "synthetic" {
                    DataSource::Synthetic
                } else {
                    DataSource::Manifest(base.join(value))
                }
            }
            "classes" => self.classes = parse(key, value)?,
            "per_class" => self.per_class = parse(key, value)?,
            "image_size" => self.image_size = parse(key, value)?,
            "data_seed" => self.data_seed = parse(key, value)?,
            "split_seed" => self.split_seed = parse(key, value)?,
            "basis" => self.basis = value.parse()?,
            "levels" => self.levels = parse(key, value)?,
            "layer" => self.layer = Some(parse(key, value)?),
            "modes" => {
                self.modes = value
                    .split(',')
                    .map(str::trim)
                    .filter(|m| !m.is_empty())
                    .map(str::parse)
                    .collect::<Result<Vec<_>>>()?
            }
            "lr" => self.lr = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "train_seed" => self.train_seed = parse(key, value)?,
            "soft_targets" => self.soft_targets = parse(key, value)?,
            "noise_sigma" => self.noise_sigma = parse(key, value)?,
            "noise_seed" => self.noise_seed = parse(key, value)?,
            "quality" => self.quality = parse(key, value)?,
            "cka_samples" => self.cka_samples = parse(key, value)?,
            "out" => self.out = base.join(value),
            other => return Err(Error::InvalidArgument(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_LEVELS).contains(&self.levels) {
            return Err(Error::InvalidArgument(format!("levels must be 1 or 2, got {}", self.levels)));
        }
        if self.modes.is_empty() {
            return Err(Error::InvalidArgument("`modes` lists no constraint mode".into()));
        }
        let mut seen = self.modes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.modes.len() {
            return Err(Error::InvalidArgument("`modes` lists a mode twice".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if !(1..=100).contains(&self.quality) {
            return Err(Error::InvalidArgument(format!("quality must be in 1..=100, got {}", self.quality)));
        }
        if self.cka_samples == 0 {
            return Err(Error::InvalidArgument("cka_samples must be positive".into()));
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields the same config.
    pub fn to_text(&self) -> String {
        let modes: Vec<&str> = self.modes.iter().map(|m| m.as_str()).collect();
        let mut lines = Vec::new();
        if let Some(m) = &self.model {
            lines.push(format!("model = {}", m.display()));
        }
        lines.push(format!("model_seed = {}", self.model_seed));
        lines.push(format!(
            "dataset = {}",
            match &self.dataset {
                DataSource::Synthetic => "synthetic".to_string(),
                DataSource::Manifest(p) => p.display().to_string(),
            }
        ));
        lines.push(format!("classes = {}", self.classes));
        lines.push(format!("per_class = {}", self.per_class));
        lines.push(format!("image_size = {}", self.image_size));
        lines.push(format!("data_seed = {}", self.data_seed));
        lines.push(format!("split_seed = {}", self.split_seed));
        lines.push(format!("basis = {}", self.basis));
        lines.push(format!("levels = {}", self.levels));
        if let Some(l) = self.layer {
            lines.push(format!("layer = {l}"));
        }
        lines.push(format!("modes = {}", modes.join(",")));
        lines.push(format!("lr = {}", self.lr));
        lines.push(format!("epochs = {}", self.epochs));
        lines.push(format!("train_seed = {}", self.train_seed));
        lines.push(format!("soft_targets = {}", self.soft_targets));
        lines.push(format!("noise_sigma = {}", self.noise_sigma));
        lines.push(format!("noise_seed = {}", self.noise_seed));
        lines.push(format!("quality = {}", self.quality));
        lines.push(format!("cka_samples = {}", self.cka_samples));
        lines.push(format!("out = {}", self.out.display()));
        lines.join("\n") + "\n"
    }
}
