//! Labelled image collections, seeded splits and image file IO.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::Image;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSource {
    Synthetic { seed: u64 },
    Manifest(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub source: DatasetSource,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn images(&self) -> Vec<&Image> {
        self.samples.iter().map(|s| &s.image).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Vec<&Sample> {
        indices.iter().map(|&i| &self.samples[i]).collect()
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.samples {
            if s.label >= self.num_classes {
                return Err(Error::Data(format!(
                    "sample `{}` has label {} but there are {} classes",
                    s.id, s.label, self.num_classes
                )));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Data(format!("duplicate sample id `{}`", s.id)));
            }
        }
        Ok(())
    }
}

struct ClassStyle {
    tint: [f64; 3],
    angle: f64,
    frequency: f64,
    blob: (f64, f64),
}

fn class_style(class: usize, num_classes: usize) -> ClassStyle {
    let t = class as f64 / num_classes as f64;
    let hue = 2.0 * PI * t;
    ClassStyle {
        tint: [
            0.5 + 0.4 * hue.cos(),
            0.5 + 0.4 * (hue - 2.0 * PI / 3.0).cos(),
            0.5 + 0.4 * (hue + 2.0 * PI / 3.0).cos(),
        ],
        angle: PI * t,
        frequency: 2.0 + (class % 3) as f64,
        blob: (0.25 + 0.5 * (hue * 2.0).cos().abs(), 0.25 + 0.5 * hue.sin().abs()),
    }
}

/// Seeded class-conditional images: a per-class colour tint, an oriented
/// grating with random phase and a soft blob near a per-class location.
pub fn generate_synthetic_dataset(
    num_classes: usize,
    per_class: usize,
    size: usize,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 classes, got {num_classes}")));
    }
    if per_class == 0 {
        return Err(Error::InvalidArgument("per-class count must be positive".into()));
    }
    if size < 8 || !size.is_multiple_of(4) {
        return Err(Error::InvalidArgument(format!(
            "image size {size} must be a multiple of 4 and at least 8"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(num_classes * per_class);
    for i in 0..per_class {
        for class in 0..num_classes {
            let style = class_style(class, num_classes);
            let phase = rng.random::<f64>() * 0.6;
            let (bx, by) = (
                style.blob.0 + (rng.random::<f64>() - 0.5) * 0.1,
                style.blob.1 + (rng.random::<f64>() - 0.5) * 0.1,
            );
            let noise: Vec<f64> = (0..size * size * 3).map(|_| (rng.random::<f64>() - 0.5) * 0.1).collect();
            let (ca, sa) = (style.angle.cos(), style.angle.sin());
            let n = size as f64;
            let image = Image::from_fn(size, size, 3, |x, y, c| {
                let (u, v) = (x as f64 / n, y as f64 / n);
                let grating = (2.0 * PI * style.frequency * (u * ca + v * sa) + phase).sin();
                let r2 = (u - bx).powi(2) + (v - by).powi(2);
                let blob = (-r2 / 0.02).exp();
                let value = 0.55 * style.tint[c] + 0.2 * grating + 0.35 * blob - 0.1
                    + noise[(y * size + x) * 3 + c];
                value.clamp(0.0, 1.0)
            });
            samples.push(Sample {
                id: format!("c{class:02}_{i:04}"),
                image,
                label: class,
            });
        }
    }
    let ds = Dataset {
        samples,
        num_classes,
        source: DatasetSource::Synthetic { seed },
    };
    ds.validate()?;
    Ok(ds)
}

/// Train/val/test index sets, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    pub stratified: bool,
}

fn split_counts(c: usize) -> (usize, usize) {
    (3 * c / 5, c / 5)
}

/// Seeded 60:20:20 split, stratified per class. Classes with fewer than five
/// members make the split fall back to one pooled shuffle.
pub fn split(labels: &[usize], seed: u64) -> Result<Split> {
    if labels.is_empty() {
        return Err(Error::Data("cannot split an empty dataset".into()));
    }
    let k = labels.iter().max().copied().unwrap_or(0) + 1;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let stratified = by_class.iter().all(|c| c.is_empty() || c.len() >= 5);
    let groups = if stratified {
        by_class
    } else {
        log::warn!("some class has fewer than 5 samples; using an unstratified split");
        vec![(0..labels.len()).collect()]
    };
    for mut group in groups {
        group.shuffle(&mut rng);
        let (a, b) = split_counts(group.len());
        train.extend_from_slice(&group[..a]);
        val.extend_from_slice(&group[a..a + b]);
        test.extend_from_slice(&group[a + b..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        train,
        val,
        test,
        seed,
        stratified,
    })
}

/// Reads a PPM/PGM file (scaled to `[0, 1]`) or a TNSR image tensor.
pub fn read_image(path: &Path) -> Result<Image> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    if ext == "tnsr" {
        return Tensor::read(path)?.into_image();
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory_with_format(&bytes, ImageFormat::Pnm)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    if decoded.color().channel_count() == 1 {
        let g = decoded.to_luma8();
        Image::from_vec(w, h, 1, g.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
    } else {
        let rgb = decoded.to_rgb8();
        Image::from_vec(w, h, 3, rgb.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
    }
}

/// 8-bit binary PPM (3 channels) or PGM (1 channel). Values are clamped to
/// `[0, 1]`; the flag reports whether any clamping happened.
pub fn encode_pnm(image: &Image) -> Result<(Vec<u8>, bool)> {
    let (clamped, was_clamped) = image.clamped_unit();
    let bytes: Vec<u8> = clamped.data().iter().map(|v| (v * 255.0).round() as u8).collect();
    let (subtype, color) = match image.channels() {
        1 => (PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8),
        3 => (PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8),
        c => {
            return Err(Error::Shape(format!("8-bit export needs 1 or 3 channels, image has {c}")));
        }
    };
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(subtype)
        .write_image(&bytes, image.width() as u32, image.height() as u32, color)
        .map_err(|e| Error::Format(format!("pnm encoding failed: {e}")))?;
    Ok((out, was_clamped))
}

pub fn write_pnm(image: &Image, path: &Path) -> Result<bool> {
    let (bytes, clamped) = encode_pnm(image)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(clamped)
}

/// Writes every sample as `<dir>/images/<id>.ppm` plus `<dir>/manifest.csv`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let manifest = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| csv_error(&manifest, e))?;
    w.write_record(["id", "relative_path", "label"]).map_err(|e| csv_error(&manifest, e))?;
    for s in &ds.samples {
        let rel = format!("images/{}.ppm", s.id);
        write_pnm(&s.image, &dir.join(&rel))?;
        w.write_record([s.id.as_str(), rel.as_str(), &s.label.to_string()])
            .map_err(|e| csv_error(&manifest, e))?;
    }
    w.flush().map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

/// Loads a CSV manifest of `id,relative_path,label` rows; paths are relative
/// to the manifest's directory. A leading header row is skipped. When
/// `num_classes` is `None` it is inferred from the largest label.
pub fn load_manifest(path: &Path, num_classes: Option<usize>) -> Result<Dataset> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut samples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != 3 {
            return Err(Error::Data(format!(
                "{} row {}: expected 3 fields `id,relative_path,label`, got {}",
                path.display(),
                row + 1,
                record.len()
            )));
        }
        if row == 0 && &record[2] == "label" {
            continue;
        }
        let label: usize = record[2].parse().map_err(|_| {
            Error::Data(format!("{} row {}: bad label `{}`", path.display(), row + 1, &record[2]))
        })?;
        let file = base.join(&record[1]);
        if !file.is_file() {
            return Err(Error::Data(format!(
                "{} row {} (`{}`): image file {} does not exist",
                path.display(),
                row + 1,
                &record[0],
                file.display()
            )));
        }
        let image = read_image(&file)?;
        samples.push(Sample {
            id: record[0].to_string(),
            image,
            label,
        });
    }
    if samples.is_empty() {
        return Err(Error::Data(format!("{} lists no images", path.display())));
    }
    let inferred = samples.iter().map(|s| s.label).max().unwrap_or(0) + 1;
    let ds = Dataset {
        samples,
        num_classes: num_classes.unwrap_or(inferred),
        source: DatasetSource::Manifest(path.to_path_buf()),
    };
    ds.validate()?;
    Ok(ds)
}
