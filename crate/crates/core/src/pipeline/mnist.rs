//! IDX image files (`0x00000803`: big-endian count, rows, cols, then `u8`
//! pixels).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Reads an IDX image file into `n×1×rows×cols` with pixels scaled to [0, 1].
pub fn ingest_mnist(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_images(&bytes, path)
}

pub fn parse_idx_images(bytes: &[u8], origin: &Path) -> Result<Tensor<f32>> {
    if bytes.len() < 16 {
        return Err(Error::Format(format!(
            "{}: IDX header needs 16 bytes, file has {}",
            origin.display(),
            bytes.len()
        )));
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize;
    let magic = word(0) as u32;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "{}: magic {magic:#010x} is not an IDX image file ({IDX_IMAGES_MAGIC:#010x})",
            origin.display()
        )));
    }
    let (n, rows, cols) = (word(1), word(2), word(3));
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::Format(format!("{}: empty IDX dimensions {n}×{rows}×{cols}", origin.display())));
    }
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: expected {expected} bytes for {n} images of {rows}×{cols}, found {}",
            origin.display(),
            bytes.len()
        )));
    }
    let data = bytes[16..].iter().map(|&p| p as f32 / 255.0).collect();
    Tensor::new(&[n, 1, rows, cols], data)
}

/// Encodes `n×1×rows×cols` images in [0, 1] as an IDX image file.
pub fn encode_idx_images(images: &Tensor<f32>) -> Result<Vec<u8>> {
    let [n, 1, rows, cols] = images.shape()[..] else {
        return Err(Error::dim(format!("IDX images must be n×1×rows×cols, got {:?}", images.shape())));
    };
    let mut out = Vec::with_capacity(16 + images.numel());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(images.data().iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}
