//! IDX files as used by MNIST: big-endian magic, dimension sizes, then u8 data.

use std::fs;
use std::path::Path;

use faultrange_core::data::Dataset;
use faultrange_core::Tensor;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn idx_err(message: impl Into<String>, offset: usize) -> Error {
    Error::Idx {
        message: message.into(),
        offset: offset as u64,
    }
}

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| idx_err(format!("truncated {what}"), offset))
}

/// Returns the dimension sizes and the u8 payload.
pub fn parse_idx(bytes: &[u8], magic: u32) -> Result<(Vec<usize>, &[u8])> {
    let found = read_u32(bytes, 0, "magic")?;
    if found != magic {
        return Err(idx_err(format!("magic {found:#010x}, expected {magic:#010x}"), 0));
    }
    let ndims = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        dims.push(read_u32(bytes, 4 + 4 * d, "dimension")? as usize);
    }
    let start = 4 + 4 * ndims;
    let expected = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let available = bytes.len() - start;
    match expected {
        Some(n) if n == available => Ok((dims, &bytes[start..])),
        Some(n) if n < available => Err(idx_err(
            format!("{} trailing bytes after {n} data bytes", available - n),
            start + n,
        )),
        _ => Err(idx_err(
            format!("dimensions {dims:?} need more than the {available} data bytes present"),
            bytes.len(),
        )),
    }
}

/// Image and label IDX pair to a dataset, pixels scaled to [0, 1].
pub fn decode_mnist(id: &str, images: &[u8], labels: &[u8], class_names: Vec<String>) -> Result<Dataset> {
    let (idims, pixels) = parse_idx(images, IMAGES_MAGIC)?;
    let (ldims, lbytes) = parse_idx(labels, LABELS_MAGIC)?;
    if idims[0] != ldims[0] {
        return Err(idx_err(
            format!("{} images but {} labels", idims[0], ldims[0]),
            4,
        ));
    }
    let (h, w) = (idims[1], idims[2]);
    let k = class_names.len();
    if let Some(pos) = lbytes.iter().position(|&l| l as usize >= k) {
        return Err(idx_err(format!("label {} outside {k} classes", lbytes[pos]), 8 + pos));
    }
    let images = if h * w == 0 {
        vec![Tensor::zeros(&[1, h, w]); idims[0]]
    } else {
        pixels
            .chunks_exact(h * w)
            .map(|c| Tensor::new(vec![1, h, w], c.iter().map(|&p| p as f32 / 255.0).collect()))
            .collect::<faultrange_core::Result<Vec<_>>>()?
    };
    let labels = lbytes.iter().map(|&l| l as usize).collect();
    Ok(Dataset::new(id.to_string(), class_names, images, labels)?)
}

pub fn digit_class_names() -> Vec<String> {
    (0..10).map(|d| d.to_string()).collect()
}

pub fn load_mnist(images: &Path, labels: &Path) -> Result<Dataset> {
    let ib = fs::read(images).map_err(|e| Error::io(images, e))?;
    let lb = fs::read(labels).map_err(|e| Error::io(labels, e))?;
    let id = images
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    decode_mnist(&id, &ib, &lb, digit_class_names())
}

/// Encodes u8 data with the given magic and dimensions.
pub fn encode_idx(magic: u32, dims: &[u32], data: &[u8]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for d in dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}
