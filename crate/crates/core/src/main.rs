use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wavecomp::composer::{train, CompositionModel, ConstraintMode, Provenance, TrainConfig};
use wavecomp::harness::cache::{cache_primitive_cls, primitives_of, BundleCache};
use wavecomp::harness::dataset::{generate_synthetic_dataset, load_manifest, read_image, save_dataset, split, write_pnm};
use wavecomp::harness::distort::{distort_compress, distort_noise};
use wavecomp::harness::eval::{error_breakdown, eval_row, predictions, reweight_image, Pathway};
use wavecomp::harness::reports::{layerwise_cka_report, ssim_map_report};
use wavecomp::harness::{run_experiment, ExperimentConfig};
use wavecomp::tensor::Tensor;
use wavecomp::vit::{init_random, load_weights, save_weights, Model, ModelConfig};
use wavecomp::wavelet::{decompose, WaveletBasis, WaveletName};
use wavecomp::{Error, Result};

#[derive(Parser)]
#[command(name = "wavecomp", version, about = "Wavelet-primitive composition probes for ViT encoders")]
struct Cli {
    /// Seed for data generation, model init, shuffling and noise.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory [default: out, or the config's `out` for `run`].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Flat `key = value` experiment config (used by `run`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct BasisArgs {
    #[arg(long, default_value = "haar", value_parser = parse_basis)]
    basis: WaveletName,
    #[arg(long, default_value_t = 1)]
    levels: usize,
}

impl BasisArgs {
    fn basis(&self) -> Result<WaveletBasis> {
        Ok(WaveletBasis::new(self.basis))
    }
}

fn parse_basis(s: &str) -> std::result::Result<WaveletName, String> {
    s.parse().map_err(|e: wavecomp::Error| e.to_string())
}

#[derive(Args)]
struct SplitArgs {
    /// Evaluate on `test`, `val`, `train` or `all` bundles.
    #[arg(long, default_value = "test")]
    part: String,
    #[arg(long, default_value_t = 1)]
    split_seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labelled dataset (PPM images + manifest.csv).
    GenData {
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        per_class: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
    },
    /// Randomly initialise a ViT and save it as model.vitw.
    InitModel {
        #[arg(long, default_value_t = 32)]
        image_size: usize,
        #[arg(long, default_value_t = 3)]
        channels: usize,
        #[arg(long, default_value_t = 4)]
        patch_size: usize,
        #[arg(long, default_value_t = 48)]
        hidden_dim: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[arg(long, default_value_t = 192)]
        mlp_dim: usize,
        #[arg(long, default_value_t = 10)]
        classes: usize,
    },
    /// Split an image into its subband primitives (TNSR files).
    Decompose {
        #[arg(long)]
        image: PathBuf,
        #[command(flatten)]
        basis: BasisArgs,
    },
    /// Compute primitive CLS tokens for a manifest and write cache.bin.
    Cache {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        basis: BasisArgs,
        /// Encoder layer (default: last).
        #[arg(long)]
        layer: Option<usize>,
    },
    /// Fit a composition on the train split of a cache.
    Train {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long, default_value = "unconstrained")]
        mode: String,
        #[arg(long, default_value_t = 0.001)]
        lr: f64,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long)]
        soft_targets: bool,
        #[arg(long, default_value_t = 1)]
        split_seed: u64,
    },
    /// Accuracy of original, summed and learned tokens (table_accuracy.csv).
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        /// Composition records to evaluate alongside original and summed.
        #[arg(long)]
        composition: Vec<PathBuf>,
        #[command(flatten)]
        split: SplitArgs,
    },
    /// Error breakdown of a learned composition against the original (errors.csv).
    Errors {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        composition: Vec<PathBuf>,
        #[command(flatten)]
        split: SplitArgs,
    },
    /// Apply composition weights to an image's subbands in pixel space.
    Reweight {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        composition: PathBuf,
    },
    /// Add Gaussian noise or block-DCT compression to an image.
    Distort {
        #[arg(long)]
        image: PathBuf,
        /// Noise standard deviation on [0, 1] pixels.
        #[arg(long, conflicts_with = "quality")]
        noise: Option<f64>,
        /// Compression quality 1..=100.
        #[arg(long)]
        quality: Option<u32>,
    },
    /// Per-layer CKA of summed and learned compositions (cka_layers.csv).
    Cka {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        composition: PathBuf,
        #[arg(long, default_value_t = 20)]
        samples: usize,
    },
    /// Final-layer SSIM maps between original and composed tokens.
    SsimMap {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Composition record; summed weights when absent.
        #[arg(long)]
        composition: Option<PathBuf>,
        #[command(flatten)]
        basis: BasisArgs,
    },
    /// Full pipeline driven by --config.
    Run,
}

fn ensure_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })
}

fn write_file(p: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(p, bytes).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })
}

fn read_text(p: &Path) -> Result<String> {
    fs::read_to_string(p).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })
}

fn read_model(p: &Path) -> Result<Model> {
    load_weights(&fs::read(p).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })?)
}

fn read_composition(p: &Path) -> Result<CompositionModel> {
    CompositionModel::from_text(&read_text(p)?)
}

/// Loads a cache and refuses it if it was built with a different model.
fn read_cache(model: &Model, p: &Path) -> Result<BundleCache> {
    let raw = BundleCache::read(p)?;
    let mut expected = raw.key.clone();
    expected.model = model.fingerprint();
    BundleCache::read_checked(p, &expected)
}

fn select_part(cache: &BundleCache, args: &SplitArgs) -> Result<Vec<wavecomp::composer::ClsBundle>> {
    if args.part == "all" {
        return Ok(cache.bundles.clone());
    }
    let s = split(&cache.labels()?, args.split_seed)?;
    let idx = match args.part.as_str() {
        "train" => s.train,
        "val" => s.val,
        "test" => s.test,
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown split part `{other}` (train, val, test, all)"
            )))
        }
    };
    Ok(cache.select(&idx))
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string()
}

fn execute(cli: Cli) -> Result<()> {
    let out = &cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    match cli.command {
        Command::GenData {
            classes,
            per_class,
            size,
        } => {
            let ds = generate_synthetic_dataset(classes, per_class, size, cli.seed)?;
            ensure_dir(out)?;
            let manifest = save_dataset(&ds, out)?;
            println!("wrote {} images, manifest {}", ds.len(), manifest.display());
        }
        Command::InitModel {
            image_size,
            channels,
            patch_size,
            hidden_dim,
            heads,
            layers,
            mlp_dim,
            classes,
        } => {
            let cfg = ModelConfig {
                image_size,
                channels,
                patch_size,
                hidden_dim,
                num_heads: heads,
                num_layers: layers,
                mlp_dim,
                num_classes: classes,
            };
            let model = init_random(cfg, cli.seed)?;
            ensure_dir(out)?;
            let p = out.join("model.vitw");
            write_file(&p, save_weights(&model))?;
            println!("wrote {} (fingerprint {})", p.display(), model.fingerprint());
        }
        Command::Decompose { image, basis } => {
            let img = read_image(&image)?;
            let tree = decompose(&img, &basis.basis()?, basis.levels)?;
            let prims = wavecomp::wavelet::primitive_images(&tree)?;
            ensure_dir(out)?;
            let name = stem(&image);
            for (id, p) in &prims.items {
                let path = out.join(format!("{name}_{id}.tnsr"));
                Tensor::from_image(p).write(&path)?;
                println!("{id}\tenergy {}\t{}", p.energy(), path.display());
            }
        }
        Command::Cache {
            model,
            manifest,
            basis,
            layer,
        } => {
            let model = read_model(&model)?;
            let ds = load_manifest(&manifest, Some(model.config().num_classes))?;
            let layer = layer.unwrap_or(model.config().num_layers);
            let items = ds.samples.iter().map(|s| (s.id.as_str(), &s.image, Some(s.label)));
            let cache = cache_primitive_cls(&model, items, &basis.basis()?, basis.levels, layer)?;
            ensure_dir(out)?;
            let p = out.join("cache.bin");
            cache.write(&p)?;
            println!("cached {} bundles to {}", cache.bundles.len(), p.display());
        }
        Command::Train {
            model,
            cache,
            mode,
            lr,
            epochs,
            soft_targets,
            split_seed,
        } => {
            let model = read_model(&model)?;
            let cache = read_cache(&model, &cache)?;
            let mode: ConstraintMode = mode.parse()?;
            let s = split(&cache.labels()?, split_seed)?;
            let tc = TrainConfig {
                mode,
                lr,
                epochs,
                seed: cli.seed,
                soft_targets,
            };
            let prov = Provenance {
                basis: cache.key.basis.clone(),
                levels: cache.key.levels,
                layer: cache.key.layer,
            };
            let m = train(&model, &cache.select(&s.train), &cache.select(&s.val), &tc, prov)?;
            ensure_dir(out)?;
            let p = out.join(format!("composition_{mode}.txt"));
            write_file(&p, m.to_text())?;
            let best = &m.history[m.best_epoch];
            println!(
                "{mode}: weights {:?}, epoch {}, train loss {}, val relative accuracy {} -> {}",
                m.weights,
                m.best_epoch,
                best.train_loss,
                best.val_relative_accuracy,
                p.display()
            );
        }
        Command::Eval {
            model,
            cache,
            composition,
            split: part,
        } => {
            let model = read_model(&model)?;
            let cache = read_cache(&model, &cache)?;
            let bundles = select_part(&cache, &part)?;
            let comps = composition.iter().map(|p| read_composition(p)).collect::<Result<Vec<_>>>()?;
            let (b, l) = (cache.key.basis.as_str(), cache.key.levels);
            let mut rows = vec![
                eval_row(&model, Pathway::Original, &bundles, "original", "loaded", b, l)?,
                eval_row(&model, Pathway::Summed, &bundles, "summed", "loaded", b, l)?,
            ];
            for c in &comps {
                rows.push(eval_row(&model, Pathway::Learned(c), &bundles, c.mode.as_str(), "loaded", b, l)?);
            }
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|e| {
                    vec![
                        e.condition.clone(),
                        e.model.clone(),
                        e.basis.clone(),
                        e.levels.to_string(),
                        e.acc_gt.to_string(),
                        e.acc_relative.to_string(),
                        e.n.to_string(),
                    ]
                })
                .collect();
            for r in &table {
                println!("{}", r.join("\t"));
            }
            ensure_dir(out)?;
            write_file(
                &out.join("table_accuracy.csv"),
                csv_bytes(&["condition", "model", "basis", "levels", "acc_gt", "acc_relative", "n"], &table),
            )?;
        }
        Command::Errors {
            model,
            cache,
            composition,
            split: part,
        } => {
            let model = read_model(&model)?;
            let cache = read_cache(&model, &cache)?;
            let bundles = select_part(&cache, &part)?;
            if composition.is_empty() {
                return Err(Error::InvalidArgument("pass at least one --composition".into()));
            }
            let labels: Vec<usize> = bundles
                .iter()
                .map(|b| b.label.ok_or_else(|| Error::Data(format!("bundle `{}` has no label", b.id))))
                .collect::<Result<_>>()?;
            let original = predictions(&model, Pathway::Original, &bundles)?;
            let mut rows = Vec::new();
            for p in &composition {
                let c = read_composition(p)?;
                let e = error_breakdown(&predictions(&model, Pathway::Learned(&c), &bundles)?, &original, &labels)?;
                let mut row = vec![c.mode.to_string()];
                row.extend(e.percentages().iter().map(|v| v.to_string()));
                row.push(e.n.to_string());
                println!("{}", row.join("\t"));
                rows.push(row);
            }
            ensure_dir(out)?;
            write_file(
                &out.join("errors.csv"),
                csv_bytes(
                    &["mode", "err_learned", "err_org", "err_learned_not_org", "err_org_not_learned", "err_both", "n"],
                    &rows,
                ),
            )?;
        }
        Command::Reweight { image, composition } => {
            let img = read_image(&image)?;
            let c = read_composition(&composition)?;
            let basis = WaveletBasis::new(c.provenance.basis.parse()?);
            let prims = primitives_of(&img, &basis, c.provenance.levels)?;
            let re = reweight_image(&prims, &c.weights)?;
            ensure_dir(out)?;
            let name = stem(&image);
            Tensor::from_image(&re).write(&out.join(format!("{name}_reweighted.tnsr")))?;
            let clamped = write_pnm(&re, &out.join(format!("{name}_reweighted.ppm")))?;
            let (lo, hi) = re.min_max();
            println!("range [{lo}, {hi}], 8-bit export clamped: {clamped}");
        }
        Command::Distort { image, noise, quality } => {
            let img = read_image(&image)?;
            let (tag, d) = match (noise, quality) {
                (Some(s), None) => ("noisy", distort_noise(&img, s, cli.seed)?),
                (None, Some(q)) => ("compressed", distort_compress(&img, q)?),
                _ => return Err(Error::InvalidArgument("pass exactly one of --noise or --quality".into())),
            };
            ensure_dir(out)?;
            let name = stem(&image);
            Tensor::from_image(&d).write(&out.join(format!("{name}_{tag}.tnsr")))?;
            write_pnm(&d, &out.join(format!("{name}_{tag}.ppm")))?;
            println!("max change {}", d.max_abs_diff(&img));
        }
        Command::Cka {
            model,
            manifest,
            composition,
            samples,
        } => {
            let model = read_model(&model)?;
            let c = read_composition(&composition)?;
            let ds = load_manifest(&manifest, Some(model.config().num_classes))?;
            let images: Vec<_> = ds.samples.iter().take(samples).map(|s| &s.image).collect();
            let basis = WaveletBasis::new(c.provenance.basis.parse()?);
            let ones = vec![1.0; c.weights.len()];
            let curves = layerwise_cka_report(&model, &images, &basis, c.provenance.levels, &[ones.as_slice(), c.weights.as_slice()])?;
            let rows: Vec<Vec<String>> = (0..curves[0].per_layer.len())
                .map(|l| {
                    vec![
                        (l + 1).to_string(),
                        curves[0].per_layer[l].to_string(),
                        curves[1].per_layer[l].to_string(),
                    ]
                })
                .collect();
            for r in &rows {
                println!("{}", r.join("\t"));
            }
            ensure_dir(out)?;
            write_file(&out.join("cka_layers.csv"), csv_bytes(&["layer", "summed", "learned"], &rows))?;
        }
        Command::SsimMap {
            model,
            image,
            composition,
            basis,
        } => {
            let model = read_model(&model)?;
            let img = read_image(&image)?;
            let (name, wb, levels, weights) = match composition {
                Some(p) => {
                    let c = read_composition(&p)?;
                    let wb = WaveletBasis::new(c.provenance.basis.parse()?);
                    (c.mode.to_string(), wb, c.provenance.levels, c.weights)
                }
                None => ("summed".to_string(), basis.basis()?, basis.levels, vec![1.0; 3 * basis.levels + 1]),
            };
            let rep = ssim_map_report(&model, &img, &wb, levels, &weights)?;
            let dir = out.join("ssim");
            ensure_dir(&dir)?;
            for (k, m) in rep.maps.iter().enumerate() {
                let (h, w) = m.dim();
                Tensor::new(vec![h, w], m.iter().copied().collect())?.write(&dir.join(format!("{name}_c{k}.tnsr")))?;
            }
            println!("ssim {} channels {:?}", rep.score, rep.channel_scores);
        }
        Command::Run => {
            let path = cli
                .config
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("`run` needs --config <file>".into()))?;
            let mut cfg = ExperimentConfig::load(path)?;
            if let Some(o) = &cli.out {
                cfg.out = o.clone();
            }
            let summary = run_experiment(&cfg)?;
            for r in &summary.accuracy {
                println!("{}\tacc_gt {}\tacc_relative {}\tn {}", r.condition, r.acc_gt, r.acc_relative, r.n);
            }
            println!("{} files in {}", summary.files.len(), summary.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
