//! "PLAB1" model files.
//!
//! ```text
//! b"PLAB1"
//! u32 LE          length of the architecture descriptor
//! [u8]            descriptor, JSON-encoded ArchitectureSpec
//! per layer:      weights (row-major) then biases, f64 LE
//! per layer:      mask bitmap, ceil(n / 8) bytes, bit i = weight i (LSB first), 1 = live
//! ```
//!
//! Trailing bytes are rejected.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::arch::ArchitectureSpec;
use super::model::Model;
use crate::error::{bail, Error, Result};

pub const MAGIC: &[u8; 5] = b"PLAB1";

const MAX_DESCRIPTOR: usize = 1 << 20;

pub fn encode_model(model: &Model) -> Vec<u8> {
    let descriptor = serde_json::to_vec(model.arch()).expect("architecture serializes");
    let mut out = Vec::with_capacity(16 + descriptor.len() + 9 * model.weight_count());
    out.extend_from_slice(MAGIC);
    out.extend((descriptor.len() as u32).to_le_bytes());
    out.extend(&descriptor);
    for layer in model.layers() {
        for v in layer.weight().iter().chain(layer.bias().iter()) {
            out.extend(v.to_le_bytes());
        }
    }
    for layer in model.layers() {
        let mut bits = vec![0u8; layer.mask().len().div_ceil(8)];
        for (i, &live) in layer.mask().iter().enumerate() {
            if live {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend(bits);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            bail!(Format, "truncated {what}: need {n} bytes, have {}", self.bytes.len());
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| Error::Format(format!("{what} too large")))?;
        Ok(self
            .take(len, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        bail!(Format, "not a PLAB1 model file");
    }
    let len = u32::from_le_bytes(r.take(4, "descriptor length")?.try_into().expect("4 bytes")) as usize;
    if len > MAX_DESCRIPTOR {
        bail!(Format, "descriptor length {len} exceeds limit");
    }
    let arch: ArchitectureSpec = serde_json::from_slice(r.take(len, "descriptor")?)
        .map_err(|e| Error::Format(format!("architecture descriptor: {e}")))?;
    let geoms = arch.param_geometry().map_err(|e| Error::Format(e.to_string()))?;

    // Size check before allocating anything proportional to the descriptor.
    let mut needed: usize = 0;
    for g in &geoms {
        let (rows, cols) = g.weight_dims();
        let n = rows.checked_mul(cols).ok_or_else(|| Error::Format("layer too large".into()))?;
        needed = n
            .checked_add(rows)
            .and_then(|v| v.checked_mul(8))
            .and_then(|v| v.checked_add(n.div_ceil(8)))
            .and_then(|v| v.checked_add(needed))
            .ok_or_else(|| Error::Format("model too large".into()))?;
    }
    if needed != r.bytes.len() {
        bail!(Format, "parameter section has {} bytes, descriptor implies {needed}", r.bytes.len());
    }

    let mut params = Vec::with_capacity(geoms.len());
    for g in &geoms {
        let dims = g.weight_dims();
        let w = r.f64s(dims.0 * dims.1, "weights")?;
        let b = r.f64s(dims.0, "biases")?;
        params.push((Array2::from_shape_vec(dims, w).expect("length checked"), Array1::from(b)));
    }
    let mut parts = Vec::with_capacity(geoms.len());
    for (g, (w, b)) in geoms.iter().zip(params) {
        let n = w.len();
        let bits = r.take(n.div_ceil(8), "mask")?;
        if n % 8 != 0 && bits[n / 8] >> (n % 8) != 0 {
            bail!(Format, "mask padding bits must be zero");
        }
        let mask = Array2::from_shape_fn(g.weight_dims(), |(i, j)| {
            let k = i * dims_cols(g) + j;
            bits[k / 8] & (1 << (k % 8)) != 0
        });
        parts.push((w, b, mask));
    }
    Model::from_parts(arch, parts).map_err(|e| Error::Format(e.to_string()))
}

fn dims_cols(g: &super::arch::ParamGeometry) -> usize {
    g.weight_dims().1
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    decode_model(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
