//! IDX reader (the MNIST / Fashion-MNIST distribution format).
//!
//! Layout: two zero bytes, a type code (0x08 = unsigned byte), the number of
//! dimensions, then one big-endian `u32` per dimension followed by the payload.
//! Gzip input is detected by its magic bytes and decompressed transparently.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::Array2;

use super::Dataset;
use crate::error::{bail, Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

// Largest decompressed payload we accept (MNIST train images are ~47 MB).
const MAX_PAYLOAD: u64 = 1 << 30;

/// A decoded unsigned-byte IDX array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn decompress(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    GzDecoder::new(bytes)
        .take(MAX_PAYLOAD + 1)
        .read_to_end(&mut out)
        .map_err(|e| Error::Format(format!("gzip: {e}")))?;
    if out.len() as u64 > MAX_PAYLOAD {
        bail!(Format, "decompressed payload exceeds {MAX_PAYLOAD} bytes");
    }
    Ok(out)
}

/// Decodes an IDX buffer (optionally gzip-compressed) and checks its magic.
pub fn parse_idx(bytes: &[u8], expected_magic: u32) -> Result<IdxArray> {
    let owned;
    let bytes = if bytes.starts_with(&[0x1f, 0x8b]) {
        owned = decompress(bytes)?;
        &owned[..]
    } else {
        bytes
    };
    if bytes.len() < 4 {
        bail!(Format, "truncated header ({} bytes)", bytes.len());
    }
    let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if magic != expected_magic {
        bail!(Format, "bad magic {magic:#010x}, expected {expected_magic:#010x}");
    }
    let ndims = bytes[3] as usize;
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        bail!(Format, "truncated dimension table");
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("dimension product overflows".into()))?;
    let payload = &bytes[header..];
    if payload.len() != expected {
        bail!(Format, "payload has {} bytes, header declares {expected}", payload.len());
    }
    Ok(IdxArray {
        dims,
        data: payload.to_vec(),
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Decodes an image file and its label file into `(features, labels)`,
/// scaling pixels to `[0, 1]`.
pub fn decode_pair(images: &[u8], labels: &[u8]) -> Result<(Array2<f64>, Vec<usize>, usize)> {
    let img = parse_idx(images, IMAGES_MAGIC)?;
    let lab = parse_idx(labels, LABELS_MAGIC)?;
    let (n, rows, cols) = match img.dims[..] {
        [n, r, c] => (n, r, c),
        _ => bail!(Format, "image file must have 3 dimensions"),
    };
    if lab.dims[..] != [n] {
        bail!(Format, "image/label count mismatch: {n} images, label dims {:?}", lab.dims);
    }
    let per = rows * cols;
    let features = Array2::from_shape_fn((n, per), |(i, j)| f64::from(img.data[i * per + j]) / 255.0);
    Ok((features, lab.data.iter().map(|&b| b as usize).collect(), per))
}

/// Where the four IDX files of a train/test distribution live.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxOptions {
    pub name: String,
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Trim test classes to equal counts.
    pub force_balance: bool,
}

/// Loads a train/test IDX distribution. Validation is carved later, per seed,
/// with [`Dataset::carve_validation`].
pub fn load_idx(opts: &IdxOptions) -> Result<Dataset> {
    let (train_x, train_y, per) = decode_pair(
        &read_file(&opts.train_images)?,
        &read_file(&opts.train_labels)?,
    )?;
    let (test_x, test_y, test_per) = decode_pair(
        &read_file(&opts.test_images)?,
        &read_file(&opts.test_labels)?,
    )?;
    if per != test_per {
        bail!(Format, "train samples have {per} pixels, test samples {test_per}");
    }
    let n_train = train_y.len();
    let n_test = test_y.len();
    let classes = train_y.iter().chain(&test_y).max().map_or(0, |&m| m + 1).max(2);
    let features = ndarray::concatenate(ndarray::Axis(0), &[train_x.view(), test_x.view()])
        .expect("column counts checked above");
    let mut labels = train_y;
    labels.extend(test_y);
    let mut ds = Dataset::new(
        opts.name.clone(),
        features,
        labels,
        classes,
        (0..n_train).collect(),
        Vec::new(),
        (n_train..n_train + n_test).collect(),
    )?;
    if opts.force_balance {
        ds.balance_test();
    }
    Ok(ds)
}
