//! Per-image primitive CLS tokens and their on-disk cache.
//!
//! ```text
//! magic   b"WCCH"
//! version u32
//! key     model fingerprint (u16 len + utf-8), basis (u16 len + utf-8), levels u32, layer u32
//! count   u32
//! count × { id (u16 len + utf-8), label u32 (u32::MAX = none), target u32, n u32, d u32,
//!           f64 × n·d primitives, f64 × d original }
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::composer::ClsBundle;
use crate::error::{Error, Result};
use crate::raster::Image;
use crate::tensor::{put_f64s, put_u16, put_u32, ByteReader};
use crate::vit::{cls_token, forward, LayerTrace, Model};
use crate::wavelet::{decompose, primitive_images, PrimitiveSet, WaveletBasis};

pub const CACHE_MAGIC: &[u8; 4] = b"WCCH";
pub const CACHE_VERSION: u32 = 1;
const NO_LABEL: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheKey {
    pub model: String,
    pub basis: String,
    pub levels: usize,
    pub layer: usize,
}

impl CacheKey {
    pub fn new(model: &Model, basis: &WaveletBasis, levels: usize, layer: usize) -> Self {
        CacheKey {
            model: model.fingerprint(),
            basis: basis.name.to_string(),
            levels,
            layer,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleCache {
    pub key: CacheKey,
    pub bundles: Vec<ClsBundle>,
}

/// Primitive images of one input.
pub fn primitives_of(image: &Image, basis: &WaveletBasis, levels: usize) -> Result<PrimitiveSet> {
    primitive_images(&decompose(image, basis, levels)?)
}

/// Full encoder traces of the original image and each of its primitives.
pub fn traces_of(
    model: &Model,
    image: &Image,
    basis: &WaveletBasis,
    levels: usize,
) -> Result<(LayerTrace, Vec<LayerTrace>)> {
    let prims = primitives_of(image, basis, levels)?;
    let original = forward(model, image)?;
    let parts = prims.images().map(|p| forward(model, p)).collect::<Result<Vec<_>>>()?;
    Ok((original, parts))
}

/// Layer-`layer` CLS tokens of one image and its primitives.
pub fn bundle_for(
    model: &Model,
    id: &str,
    image: &Image,
    label: Option<usize>,
    basis: &WaveletBasis,
    levels: usize,
    layer: usize,
) -> Result<ClsBundle> {
    let (original, parts) = traces_of(model, image, basis, levels)?;
    let d = model.config().hidden_dim;
    let mut z = Array2::zeros((parts.len(), d));
    for (mut row, t) in z.rows_mut().into_iter().zip(&parts) {
        row.assign(&cls_token(t, layer)?);
    }
    ClsBundle::new(model, id, z, cls_token(&original, layer)?, label)
}

/// Bundles for `(id, image, label)` triples, computed in parallel and
/// returned in input order.
pub fn cache_primitive_cls<'a, I>(
    model: &Model,
    items: I,
    basis: &WaveletBasis,
    levels: usize,
    layer: usize,
) -> Result<BundleCache>
where
    I: IntoIterator<Item = (&'a str, &'a Image, Option<usize>)>,
{
    let layers = model.config().num_layers;
    if layer == 0 || layer > layers {
        return Err(Error::InvalidArgument(format!("layer {layer} out of range 1..={layers}")));
    }
    let items: Vec<_> = items.into_iter().collect();
    let bundles = items
        .par_iter()
        .map(|&(id, img, label)| bundle_for(model, id, img, label, basis, levels, layer))
        .collect::<Result<Vec<_>>>()?;
    Ok(BundleCache {
        key: CacheKey::new(model, basis, levels, layer),
        bundles,
    })
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u16(out, s.len() as u16);
    out.extend_from_slice(s.as_bytes());
}

fn take_str(r: &mut ByteReader<'_>, field: &str) -> Result<String> {
    let len = r.u16(field)? as usize;
    String::from_utf8(r.take(len, field)?.to_vec()).map_err(|_| Error::Format(format!("{field} is not utf-8")))
}

impl BundleCache {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CACHE_MAGIC);
        put_u32(&mut out, CACHE_VERSION);
        put_str(&mut out, &self.key.model);
        put_str(&mut out, &self.key.basis);
        put_u32(&mut out, self.key.levels as u32);
        put_u32(&mut out, self.key.layer as u32);
        put_u32(&mut out, self.bundles.len() as u32);
        for b in &self.bundles {
            put_str(&mut out, &b.id);
            put_u32(&mut out, b.label.map_or(NO_LABEL, |l| l as u32));
            put_u32(&mut out, b.target as u32);
            let (n, d) = b.primitives.dim();
            put_u32(&mut out, n as u32);
            put_u32(&mut out, d as u32);
            put_f64s(&mut out, &b.primitives.iter().copied().collect::<Vec<_>>());
            put_f64s(&mut out, &b.original.to_vec());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4, "magic")? != CACHE_MAGIC {
            return Err(Error::Format("not a CLS cache file (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != CACHE_VERSION {
            return Err(Error::Format(format!("unsupported cache version {version}")));
        }
        let key = CacheKey {
            model: take_str(&mut r, "model fingerprint")?,
            basis: take_str(&mut r, "basis")?,
            levels: r.u32("levels")? as usize,
            layer: r.u32("layer")? as usize,
        };
        let count = r.u32("bundle count")? as usize;
        let mut bundles = Vec::with_capacity(count);
        for i in 0..count {
            let id = take_str(&mut r, &format!("bundle #{i} id"))?;
            let label = match r.u32("label")? {
                NO_LABEL => None,
                l => Some(l as usize),
            };
            let target = r.u32("target")? as usize;
            let n = r.u32("primitive count")? as usize;
            let d = r.u32("width")? as usize;
            let z = r.f64s(n * d, &format!("bundle `{id}` primitives"))?;
            let original = r.f64s(d, &format!("bundle `{id}` original"))?;
            bundles.push(ClsBundle {
                id,
                primitives: Array2::from_shape_vec((n, d), z).expect("length read"),
                original: Array1::from(original),
                target,
                label,
            });
        }
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes in cache file", r.remaining())));
        }
        Ok(BundleCache { key, bundles })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Reads a cache and refuses it unless it was built for `expected`.
    pub fn read_checked(path: &Path, expected: &CacheKey) -> Result<Self> {
        let cache = Self::read(path)?;
        if &cache.key != expected {
            return Err(Error::Data(format!(
                "stale cache {}: built for model {} / {} level {} layer {}, expected model {} / {} level {} layer {}",
                path.display(),
                short(&cache.key.model),
                cache.key.basis,
                cache.key.levels,
                cache.key.layer,
                short(&expected.model),
                expected.basis,
                expected.levels,
                expected.layer
            )));
        }
        Ok(cache)
    }

    /// Bundles at the given positions.
    pub fn select(&self, indices: &[usize]) -> Vec<ClsBundle> {
        indices.iter().map(|&i| self.bundles[i].clone()).collect()
    }

    pub fn labels(&self) -> Result<Vec<usize>> {
        self.bundles
            .iter()
            .map(|b| b.label.ok_or_else(|| Error::Data(format!("bundle `{}` has no label", b.id))))
            .collect()
    }
}

fn short(fingerprint: &str) -> &str {
    &fingerprint[..fingerprint.len().min(12)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vit::{init_random, ModelConfig};

    fn tiny() -> ModelConfig {
        ModelConfig {
            image_size: 8,
            channels: 3,
            patch_size: 4,
            hidden_dim: 8,
            num_heads: 2,
            num_layers: 2,
            mlp_dim: 16,
            num_classes: 3,
        }
    }

    #[test]
    fn bundle_shapes_and_byte_stable_cache() {
        let model = init_random(tiny(), 1).unwrap();
        let imgs: Vec<Image> = (0..3)
            .map(|k| Image::from_fn(8, 8, 3, |x, y, c| ((x * 3 + y * 5 + c + k) % 7) as f64 / 7.0))
            .collect();
        let ids = ["a", "b", "c"];
        let items = || ids.iter().zip(&imgs).map(|(id, im)| (*id, im, Some(1)));
        for (levels, n) in [(1, 4), (2, 7)] {
            let cache = cache_primitive_cls(&model, items(), &WaveletBasis::haar(), levels, 2).unwrap();
            assert!(cache.bundles.iter().all(|b| b.primitives.dim() == (n, 8)));
            let again = cache_primitive_cls(&model, items(), &WaveletBasis::haar(), levels, 2).unwrap();
            assert_eq!(cache.to_bytes(), again.to_bytes());
            assert_eq!(BundleCache::from_bytes(&cache.to_bytes()).unwrap(), cache);
        }
    }

    #[test]
    fn constant_image_details_match_zero_image() {
        let model = init_random(tiny(), 2).unwrap();
        let img = Image::filled(8, 8, 3, 0.4);
        let b = bundle_for(&model, "k", &img, None, &WaveletBasis::db4(), 1, 2).unwrap();
        let zero = cls_token(&forward(&model, &Image::zeros(8, 8, 3)).unwrap(), 2).unwrap();
        for p in 1..4 {
            let diff = (&b.primitives.row(p) - &zero).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff < 1e-12, "primitive {p}: {diff}");
        }
    }

    #[test]
    fn stale_cache_refused() {
        let dir = tempfile::tempdir().unwrap();
        let m1 = init_random(tiny(), 1).unwrap();
        let m2 = init_random(tiny(), 2).unwrap();
        let img = Image::filled(8, 8, 3, 0.2);
        let cache = cache_primitive_cls(&m1, [("x", &img, None)], &WaveletBasis::haar(), 1, 1).unwrap();
        let p = dir.path().join("c.bin");
        cache.write(&p).unwrap();
        assert!(BundleCache::read_checked(&p, &cache.key).is_ok());
        let err = BundleCache::read_checked(&p, &CacheKey::new(&m2, &WaveletBasis::haar(), 1, 1)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("stale"));
        assert!(cache_primitive_cls(&m1, [("x", &img, None)], &WaveletBasis::haar(), 1, 3).is_err());
    }
}
