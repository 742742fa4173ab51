//! Config-driven end-to-end run writing every report into one directory.
//!
//! Files, relative to the output directory:
//!
//! | file | content |
//! |---|---|
//! | `table_accuracy.csv` | test-split accuracy of original, summed and learned tokens |
//! | `weights.json` | learned weights per mode, canonical subband order |
//! | `table_reweighted.csv` | accuracy after reweighting subbands in pixel space |
//! | `errors.csv` | learned/original error breakdown per mode |
//! | `distortion.csv` | accuracy on clean, compressed and noisy test images |
//! | `cka_layers.csv` | per-layer CKA of summed and learned compositions |
//! | `ssim/<composition>_c<k>.tnsr`, `ssim_scores.csv` | final-layer SSIM maps |
//! | `composition_<mode>.txt` | composition records |
//! | `cache.bin` | CLS cache of the whole dataset |
//! | `manifest.json` | status, completed stages, file list and digests |
//!
//! No timestamps or absolute paths are written, so identical configs give
//! byte-identical directories.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::composer::{train, ClsBundle, CompositionModel, ConstraintMode, Provenance, TrainConfig};
use crate::error::{Error, Result};
use crate::harness::cache::{cache_primitive_cls, primitives_of};
use crate::harness::config::{DataSource, ExperimentConfig};
use crate::harness::dataset::{generate_synthetic_dataset, load_manifest, split, Dataset, Split};
use crate::harness::distort::{distort_compress, distort_noise};
use crate::harness::eval::{agreement, error_breakdown, eval_row, predictions, reweight_image, EvalRow, Pathway};
use crate::harness::reports::{layerwise_cka_report, ssim_map_report};
use crate::raster::Image;
use crate::tensor::Tensor;
use crate::vit::{argmax, classify, cls_token, forward, init_random, load_weights, Model, ModelConfig};
use crate::wavelet::{subband_order, WaveletBasis};

/// Everything a finished run produced, in memory.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out: PathBuf,
    pub files: Vec<String>,
    pub accuracy: Vec<EvalRow>,
    pub compositions: Vec<CompositionModel>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    status: &'a str,
    failed_stage: Option<&'a str>,
    stages: &'a [String],
    files: &'a [String],
    /// SHA-256 of every file written before the manifest.
    digests: BTreeMap<&'a str, String>,
    config: Vec<(String, String)>,
}

#[derive(Serialize)]
struct ModeWeights<'a> {
    mode: &'a str,
    weights: &'a [f64],
    best_epoch: usize,
    train_loss: f64,
    val_relative_accuracy: f64,
}

#[derive(Serialize)]
struct WeightsReport<'a> {
    basis: String,
    levels: usize,
    layer: usize,
    subbands: Vec<String>,
    modes: Vec<ModeWeights<'a>>,
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    out: PathBuf,
    files: Vec<String>,
    stages: Vec<String>,
}

impl Run<'_> {
    fn path(&mut self, rel: &str) -> PathBuf {
        self.files.push(rel.to_string());
        self.out.join(rel)
    }

    fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(rel);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    }

    fn write_csv(&mut self, rel: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory write");
        for r in rows {
            w.write_record(r).expect("in-memory write");
        }
        let bytes = w.into_inner().expect("in-memory flush");
        self.write(rel, bytes)
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        log::info!("stage {name}");
        match f(self) {
            Ok(v) => {
                self.stages.push(name.to_string());
                Ok(v)
            }
            Err(e) => {
                let _ = self.write_manifest(Some(name));
                Err(Error::Stage {
                    stage: name.to_string(),
                    source: Box::new(e),
                })
            }
        }
    }

    fn write_manifest(&mut self, failed: Option<&str>) -> Result<()> {
        let config = self
            .cfg
            .to_text()
            .lines()
            .filter(|l| !l.starts_with("out ="))
            .filter_map(|l| l.split_once(" = ").map(|(k, v)| (k.to_string(), v.to_string())))
            .collect();
        let mut digests = BTreeMap::new();
        for rel in &self.files {
            let p = self.out.join(rel);
            if let Ok(bytes) = fs::read(&p) {
                digests.insert(rel.as_str(), hex::encode(Sha256::digest(bytes)));
            }
        }
        let mut files = self.files.clone();
        files.push("manifest.json".into());
        let m = Manifest {
            status: if failed.is_some() { "incomplete" } else { "complete" },
            failed_stage: failed,
            stages: &self.stages,
            files: &files,
            digests,
            config,
        };
        let text = serde_json::to_string_pretty(&m).expect("serialisable") + "\n";
        let p = self.out.join("manifest.json");
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.dataset {
        DataSource::Synthetic => generate_synthetic_dataset(cfg.classes, cfg.per_class, cfg.image_size, cfg.data_seed),
        DataSource::Manifest(p) => load_manifest(p, Some(cfg.classes)),
    }
}

fn load_model(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Model> {
    let model = match &cfg.model {
        Some(p) => load_weights(&fs::read(p).map_err(|e| Error::io(p, e))?)?,
        None => init_random(
            ModelConfig {
                image_size: cfg.image_size,
                num_classes: cfg.classes,
                ..ModelConfig::toy()
            },
            cfg.model_seed,
        )?,
    };
    let mc = model.config();
    if let Some(s) = ds.samples.first() {
        if s.image.shape() != (mc.image_size, mc.image_size, mc.channels) {
            return Err(Error::Shape(format!(
                "dataset images are {:?} but the model expects {}x{}x{}",
                s.image.shape(),
                mc.image_size,
                mc.image_size,
                mc.channels
            )));
        }
    }
    if mc.num_classes < ds.num_classes {
        return Err(Error::Data(format!(
            "model predicts {} classes, dataset has {}",
            mc.num_classes, ds.num_classes
        )));
    }
    Ok(model)
}

/// Final-layer prediction of the model on raw images.
fn image_predictions(model: &Model, images: &[Image]) -> Result<Vec<usize>> {
    use rayon::prelude::*;
    let last = model.config().num_layers;
    images
        .par_iter()
        .map(|img| Ok(argmax(classify(model, cls_token(&forward(model, img)?, last)?.view())?.view())))
        .collect()
}

fn test_cache(
    model: &Model,
    ds: &Dataset,
    idx: &[usize],
    images: &[Image],
    basis: &WaveletBasis,
    cfg: &ExperimentConfig,
    layer: usize,
) -> Result<Vec<ClsBundle>> {
    let items = idx
        .iter()
        .zip(images)
        .map(|(&i, img)| (ds.samples[i].id.as_str(), img, Some(ds.samples[i].label)));
    Ok(cache_primitive_cls(model, items, basis, cfg.levels, layer)?.bundles)
}

/// Runs every stage. On failure `manifest.json` is written with status
/// `incomplete` and the error names the failing stage.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let mut run = Run {
        cfg,
        out: cfg.out.clone(),
        files: Vec::new(),
        stages: Vec::new(),
    };
    let basis = cfg.basis_filters();
    let basis_name = basis.name.to_string();

    let ds = run.stage("data", |_| load_dataset(cfg))?;
    let model = run.stage("model", |_| load_model(cfg, &ds))?;
    let layer = cfg.layer.unwrap_or(model.config().num_layers);
    let model_tag = if cfg.model.is_some() { "loaded" } else { "toy" };
    let parts: Split = run.stage("split", |_| split(&ds.labels(), cfg.split_seed))?;

    let cache = run.stage("cache", |r| {
        let items = ds.samples.iter().map(|s| (s.id.as_str(), &s.image, Some(s.label)));
        let cache = cache_primitive_cls(&model, items, &basis, cfg.levels, layer)?;
        cache.write(&r.path("cache.bin"))?;
        Ok(cache)
    })?;
    let (train_b, val_b, test_b) = (cache.select(&parts.train), cache.select(&parts.val), cache.select(&parts.test));
    let n = cache.bundles.first().map_or(0, |b| b.num_primitives());

    let compositions = run.stage("train", |r| {
        let mut out = Vec::new();
        for &mode in &cfg.modes {
            let tc = TrainConfig {
                mode,
                lr: cfg.lr,
                epochs: cfg.epochs,
                seed: cfg.train_seed,
                soft_targets: cfg.soft_targets,
            };
            let prov = Provenance {
                basis: basis_name.clone(),
                levels: cfg.levels,
                layer,
            };
            let m = train(&model, &train_b, &val_b, &tc, prov)?;
            r.write(&format!("composition_{mode}.txt"), m.to_text())?;
            out.push(m);
        }
        Ok(out)
    })?;

    let accuracy = run.stage("eval", |r| {
        let mut rows = vec![
            eval_row(&model, Pathway::Original, &test_b, "original", model_tag, &basis_name, cfg.levels)?,
            eval_row(&model, Pathway::Summed, &test_b, "summed", model_tag, &basis_name, cfg.levels)?,
        ];
        for c in &compositions {
            rows.push(eval_row(&model, Pathway::Learned(c), &test_b, c.mode.as_str(), model_tag, &basis_name, cfg.levels)?);
        }
        let table: Vec<Vec<String>> = rows
            .iter()
            .map(|e| {
                vec![
                    e.condition.clone(),
                    e.model.clone(),
                    e.basis.clone(),
                    e.levels.to_string(),
                    fmt(e.acc_gt),
                    fmt(e.acc_relative),
                    e.n.to_string(),
                ]
            })
            .collect();
        r.write_csv(
            "table_accuracy.csv",
            &["condition", "model", "basis", "levels", "acc_gt", "acc_relative", "n"],
            &table,
        )?;
        Ok(rows)
    })?;

    run.stage("weights", |r| {
        let report = WeightsReport {
            basis: basis_name.clone(),
            levels: cfg.levels,
            layer,
            subbands: subband_order(cfg.levels).iter().map(|s| s.to_string()).collect(),
            modes: compositions
                .iter()
                .map(|c| {
                    let best = &c.history[c.best_epoch];
                    ModeWeights {
                        mode: c.mode.as_str(),
                        weights: &c.weights,
                        best_epoch: c.best_epoch,
                        train_loss: best.train_loss,
                        val_relative_accuracy: best.val_relative_accuracy,
                    }
                })
                .collect(),
        };
        r.write("weights.json", serde_json::to_string_pretty(&report).expect("serialisable") + "\n")
    })?;

    let test_images: Vec<&Image> = parts.test.iter().map(|&i| &ds.samples[i].image).collect();
    let labels: Vec<usize> = parts.test.iter().map(|&i| ds.samples[i].label).collect();
    let original_preds = predictions(&model, Pathway::Original, &test_b)?;

    run.stage("reweight", |r| {
        let prims = test_images
            .iter()
            .map(|img| primitives_of(img, &basis, cfg.levels))
            .collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::new();
        let summed = CompositionModel::summed(n, ConstraintMode::Unconstrained, Provenance::default());
        let conditions = std::iter::once(("summed", &summed)).chain(compositions.iter().map(|c| (c.mode.as_str(), c)));
        for (name, c) in conditions {
            let images = prims.iter().map(|p| reweight_image(p, &c.weights)).collect::<Result<Vec<_>>>()?;
            let clamped = images.iter().filter(|im| im.clamped_unit().1).count();
            let preds = image_predictions(&model, &images)?;
            rows.push(vec![
                name.to_string(),
                fmt(agreement(&preds, &labels)?),
                fmt(agreement(&preds, &original_preds)?),
                images.len().to_string(),
                clamped.to_string(),
            ]);
        }
        r.write_csv("table_reweighted.csv", &["condition", "acc_gt", "acc_relative", "n", "clamped"], &rows)
    })?;

    run.stage("errors", |r| {
        let mut rows = Vec::new();
        for c in &compositions {
            let learned = predictions(&model, Pathway::Learned(c), &test_b)?;
            let e = error_breakdown(&learned, &original_preds, &labels)?;
            let mut row = vec![c.mode.to_string()];
            row.extend(e.percentages().iter().map(|&v| fmt(v)));
            row.push(e.n.to_string());
            rows.push(row);
        }
        r.write_csv(
            "errors.csv",
            &["mode", "err_learned", "err_org", "err_learned_not_org", "err_org_not_learned", "err_both", "n"],
            &rows,
        )
    })?;

    run.stage("distortion", |r| {
        let compressed = test_images
            .iter()
            .map(|img| distort_compress(img, cfg.quality))
            .collect::<Result<Vec<_>>>()?;
        let noisy = test_images
            .iter()
            .zip(&parts.test)
            .map(|(img, &i)| distort_noise(img, cfg.noise_sigma, cfg.noise_seed.wrapping_add(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let variants = [
            ("original", test_b.clone()),
            ("compressed", test_cache(&model, &ds, &parts.test, &compressed, &basis, cfg, layer)?),
            ("noisy", test_cache(&model, &ds, &parts.test, &noisy, &basis, cfg, layer)?),
        ];
        let mut rows = Vec::new();
        for (name, bundles) in &variants {
            let gt: Vec<usize> = bundles.iter().map(|b| b.label.expect("labelled")).collect();
            let mut row = vec![name.to_string(), fmt(agreement(&predictions(&model, Pathway::Original, bundles)?, &gt)?)];
            for mode in ConstraintMode::ALL {
                row.push(match compositions.iter().find(|c| c.mode == mode) {
                    Some(c) => fmt(agreement(&predictions(&model, Pathway::Learned(c), bundles)?, &gt)?),
                    None => String::new(),
                });
            }
            rows.push(row);
        }
        r.write_csv("distortion.csv", &["condition", "original", "unconstrained", "conic", "convex"], &rows)
    })?;

    run.stage("cka", |r| {
        let sample: Vec<&Image> = test_images.iter().take(cfg.cka_samples).copied().collect();
        let ones = vec![1.0; n];
        let learned = &compositions[0].weights;
        let curves = layerwise_cka_report(&model, &sample, &basis, cfg.levels, &[ones.as_slice(), learned.as_slice()])?;
        let rows: Vec<Vec<String>> = (0..curves[0].per_layer.len())
            .map(|l| vec![(l + 1).to_string(), fmt(curves[0].per_layer[l]), fmt(curves[1].per_layer[l])])
            .collect();
        r.write_csv("cka_layers.csv", &["layer", "summed", "learned"], &rows)
    })?;

    run.stage("ssim", |r| {
        let image = *test_images.first().ok_or_else(|| Error::Data("test split is empty".into()))?;
        let dir = r.out.join("ssim");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let ones = vec![1.0; n];
        let sets = std::iter::once(("summed", &ones)).chain(compositions.iter().map(|c| (c.mode.as_str(), &c.weights)));
        let mut rows = Vec::new();
        for (name, w) in sets {
            let rep = ssim_map_report(&model, image, &basis, cfg.levels, w)?;
            for (k, map) in rep.maps.iter().enumerate() {
                let (h, w) = map.dim();
                let t = Tensor::new(vec![h, w], map.iter().copied().collect())?;
                t.write(&r.path(&format!("ssim/{name}_c{k}.tnsr")))?;
            }
            let mut row = vec![name.to_string(), fmt(rep.score)];
            row.extend(rep.channel_scores.iter().map(|&v| fmt(v)));
            rows.push(row);
        }
        let channels = model.config().channels;
        let mut header = vec!["composition".to_string(), "score".to_string()];
        header.extend((0..channels).map(|k| format!("channel_{k}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        r.write_csv("ssim_scores.csv", &header, &rows)
    })?;

    run.write_manifest(None)?;
    let mut files = run.files.clone();
    files.push("manifest.json".into());
    Ok(RunSummary {
        out: run.out,
        files,
        accuracy,
        compositions,
    })
}
