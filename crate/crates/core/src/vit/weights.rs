//! `VITW` weight container.
//!
//! ```text
//! magic    b"VITW"
//! version  u32
//! config   u32 × 8   (ModelConfig field order)
//! count    u32
//! count × { name_len u16, name utf-8, ndim u32, dims u32 × ndim, f64 × Π dims }
//! ```
//!
//! Little-endian throughout, payloads row-major. [`save_weights`] always
//! writes tensors in canonical order, so saving a loaded canonical file
//! reproduces it byte for byte.

use std::collections::BTreeMap;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{put_f64s, put_u16, put_u32, ByteReader, Tensor};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"VITW";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn save_weights(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    put_u32(&mut out, WEIGHTS_VERSION);
    for f in model.config().fields() {
        put_u32(&mut out, f as u32);
    }
    let named: Vec<_> = model.named_parameters().collect();
    put_u32(&mut out, named.len() as u32);
    for (name, t) in named {
        put_u16(&mut out, name.len() as u16);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.dims.len() as u32);
        for &d in &t.dims {
            put_u32(&mut out, d as u32);
        }
        put_f64s(&mut out, &t.data);
    }
    out
}

pub fn load_weights(bytes: &[u8]) -> Result<Model> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != WEIGHTS_MAGIC {
        return Err(Error::Format(format!(
            "bad weight-file magic {:?}, expected \"VITW\"",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u32("version")?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Format(format!(
            "unsupported weight-file version {version}"
        )));
    }
    let mut fields = [0usize; 8];
    for (i, f) in fields.iter_mut().enumerate() {
        *f = r.u32(&format!("config field {i}"))? as usize;
    }
    let config = ModelConfig::from_fields(fields);
    config
        .validate()
        .map_err(|e| Error::Format(format!("embedded config is invalid: {e}")))?;
    let expected = config.parameter_shapes();

    let count = r.u32("tensor count")? as usize;
    let mut params = BTreeMap::new();
    for i in 0..count {
        // name of the tensor we would expect here, for truncation diagnostics
        let hint = expected
            .iter()
            .map(|(n, _)| n.as_str())
            .find(|n| !params.contains_key(*n))
            .unwrap_or("<extra>");
        let what = |field: &str| format!("tensor #{i} (expected `{hint}`) {field}");
        let len = r.u16(&what("name length"))? as usize;
        let name = std::str::from_utf8(r.take(len, &what("name"))?)
            .map_err(|_| Error::Format(format!("tensor #{i} name is not utf-8")))?
            .to_string();
        let ndim = r.u32(&format!("tensor `{name}` ndim"))? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32(&format!("tensor `{name}` dims"))? as usize);
        }
        let n: usize = dims.iter().product();
        let data = r.f64s(n, &format!("tensor `{name}` payload"))?;
        if params.insert(name.clone(), Tensor { dims, data }).is_some() {
            return Err(Error::Format(format!("duplicate tensor `{name}`")));
        }
    }
    if !r.is_empty() {
        return Err(Error::Format(format!(
            "{} trailing bytes after tensor directory",
            r.remaining()
        )));
    }
    if let Some((missing, _)) = expected.iter().find(|(n, _)| !params.contains_key(n)) {
        return Err(Error::Format(format!(
            "missing tensor `{missing}` (config has {} layers, file holds {count} tensors)",
            config.num_layers
        )));
    }
    Model::from_parameters(config, params)
}
