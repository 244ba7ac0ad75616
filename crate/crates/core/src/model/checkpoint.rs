//! Binary parameter file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PLCNET1"                      7-byte magic
//! u32 meta_len, meta_len bytes   UTF-8 metadata (opaque to this module)
//! u32 entry_count
//! per entry: u32 name_len, name, u32 ndim, ndim × u32 dims, u64 element_count
//! per entry, in manifest order: element_count × f32
//! ```

use std::io::Read;
use std::path::Path;

use plc_autodiff::Tensor;

use super::params::{ModelParams, PARAMS_VERSION};
use super::{layer_shapes, ConvLayer};
use crate::error::{PlcError, Result};

pub const MAGIC: &[u8; 7] = b"PLCNET1";

pub fn encode(params: &ModelParams<f32>, metadata: &str) -> Vec<u8> {
    let tensors = params.named_tensors();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(metadata.len() as u32).to_le_bytes());
    out.extend_from_slice(metadata.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(t.numel() as u64).to_le_bytes());
    }
    for (_, t) in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Parses a parameter file, validating every entry against the layout the
/// stored shapes imply. Returns the metadata text and the parameters.
pub fn decode(bytes: &[u8]) -> std::result::Result<(String, ModelParams<f32>), String> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(MAGIC.len())? != MAGIC {
        return Err("bad magic (not a PLCNET1 checkpoint)".into());
    }
    let meta_len = cur.u32()? as usize;
    let metadata = std::str::from_utf8(cur.take(meta_len)?)
        .map_err(|e| format!("metadata is not UTF-8: {e}"))?
        .to_string();
    let count = cur.u32()? as usize;
    let mut manifest = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|e| format!("entry name is not UTF-8: {e}"))?
            .to_string();
        let ndim = cur.u32()? as usize;
        let shape = (0..ndim).map(|_| cur.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let numel = cur.u64()? as usize;
        if shape.iter().product::<usize>() != numel {
            return Err(format!("{name}: shape {shape:?} does not hold {numel} elements"));
        }
        manifest.push((name, shape, numel));
    }
    let mut tensors = std::collections::HashMap::new();
    for (name, shape, numel) in &manifest {
        let raw = cur.take(numel * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(shape.clone(), data).map_err(|e| format!("{name}: {e}"))?;
        tensors.insert(name.clone(), t);
    }
    if cur.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - cur.pos));
    }

    // Shapes are checked by `infer_config` below; here every expected name
    // must be present exactly once.
    let skeleton = layer_shapes(&Default::default()).map(|_| ());
    let mut missing = Vec::new();
    let mut take = |name: String| -> Tensor<f32> {
        tensors.remove(&name).unwrap_or_else(|| {
            missing.push(name);
            Tensor::scalar(0.0)
        })
    };
    let mut loaded = skeleton.named().into_iter().map(|(n, _)| ConvLayer {
        weight: take(format!("{n}.weight")),
        bias: take(format!("{n}.bias")),
    }).collect::<Vec<_>>().into_iter();
    let layers = skeleton.map(|_| loaded.next().expect("one layer per name"));
    if !missing.is_empty() {
        return Err(format!("missing entries: {}", missing.join(", ")));
    }
    if !tensors.is_empty() {
        let mut extra: Vec<_> = tensors.into_keys().collect();
        extra.sort();
        return Err(format!("unexpected entries: {}", extra.join(", ")));
    }
    let params = ModelParams {
        version: PARAMS_VERSION,
        layers,
    };
    params.infer_config().map_err(|e| e.to_string())?;
    Ok((metadata, params))
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn save(path: &Path, params: &ModelParams<f32>, metadata: &str) -> Result<()> {
    crate::io::write_atomic(path, &encode(params, metadata))
}

pub fn load(path: &Path) -> Result<(String, ModelParams<f32>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| PlcError::io(path, e))?;
    decode(&bytes).map_err(|detail| PlcError::format(path, detail))
}
