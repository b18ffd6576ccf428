//! Binary checkpoints.
//!
//! Layout: the magic bytes `CGMCKPT\0`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a JSON header describing
//! the model configuration, feature schemas and tensor shapes, then every
//! tensor's values as little-endian `f64` in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{Dequantization, FeatureSchema};
use crate::error::{CgmError, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CGMCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    dequantization: Dequantization,
    schemas: Vec<FeatureSchema>,
    tensors: Vec<TensorEntry>,
}

fn bad(msg: impl Into<String>) -> CgmError {
    CgmError::Checkpoint(msg.into())
}

pub fn to_bytes(params: &ModelParams) -> Result<Vec<u8>> {
    let named = params.named_tensors();
    let header = Header {
        config: params.config,
        dequantization: params.dequantization(),
        schemas: params.schemas(),
        tensors: named
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let n_values: usize = named.iter().map(|(_, t)| t.len()).sum();
    let mut out = Vec::with_capacity(20 + json.len() + 8 * n_values);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &named {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a model checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(bad(format!(
            "unsupported checkpoint version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let body_start = usize::try_from(header_len)
        .ok()
        .and_then(|n| n.checked_add(20))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[20..body_start])
        .map_err(|e| bad(format!("corrupt header: {e}")))?;
    for s in &header.schemas {
        s.validate()?;
    }

    let expected: usize = header
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    let body = &bytes[body_start..];
    if body.len() != expected * 8 {
        return Err(bad(format!(
            "body holds {} bytes, header describes {}",
            body.len(),
            expected * 8
        )));
    }

    let mut params = ModelParams::init(header.schemas, header.config, 0)?;
    params.set_dequantization(header.dequantization);
    let names: Vec<(String, Vec<usize>)> = params
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if names.len() != header.tensors.len() {
        return Err(bad(format!(
            "header lists {} tensors, model has {}",
            header.tensors.len(),
            names.len()
        )));
    }
    let mut loaded = Vec::with_capacity(names.len());
    let mut offset = 0;
    for ((name, shape), entry) in names.iter().zip(&header.tensors) {
        if *name != entry.name || *shape != entry.shape {
            return Err(bad(format!(
                "tensor {} {:?} does not match expected {name} {shape:?}",
                entry.name, entry.shape
            )));
        }
        let n: usize = shape.iter().product();
        let data: Vec<f64> = body[offset * 8..(offset + n) * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        offset += n;
        let t = Tensor::new(shape, data)?;
        if !t.is_finite() {
            return Err(bad(format!("tensor {name} holds non-finite values")));
        }
        loaded.push(t);
    }
    for (dst, src) in params.tensors_mut().into_iter().zip(loaded) {
        *dst = src;
    }
    Ok(params)
}

/// Write atomically: a sibling temporary file is renamed over `path`.
pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    let bytes = to_bytes(params)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::fit_numerical;
    use crate::codec::fit_categorical;

    fn model() -> ModelParams {
        let a = fit_categorical("a", ["x", "y", "z"].iter().map(|s| Some(*s))).unwrap();
        let b = fit_numerical("b", &(0..20).map(|i| Some(i as f64)).collect::<Vec<_>>(), 4).unwrap();
        let cfg = ModelConfig {
            hidden: 8,
            n_blocks: 1,
            n_heads: 2,
        };
        ModelParams::init(vec![a, b], cfg, 3).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let back = from_bytes(&to_bytes(&m).unwrap()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let bytes = to_bytes(&model()).unwrap();
        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(matches!(from_bytes(&b), Err(CgmError::Checkpoint(_))));
        let mut b = bytes.clone();
        b[8] = 9;
        assert!(from_bytes(&b).unwrap_err().to_string().contains("version"));
        assert!(from_bytes(&bytes[..bytes.len() - 8]).is_err());
        let mut b = bytes.clone();
        b.push(0);
        assert!(from_bytes(&b).is_err());
    }
}
