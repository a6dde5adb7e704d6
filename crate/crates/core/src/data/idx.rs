//! IDX binary format (big-endian), as used by MNIST and Fashion-MNIST:
//! images carry magic 0x00000803 with dims [N, rows, cols]; labels carry
//! 0x00000801 with dims [N]. Multi-channel image sets use the four-dim
//! variant 0x00000804 with dims [N, C, rows, cols].

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{DataError, Result};
use crate::scalar::Scalar;

use super::Dataset;

pub const MAGIC_IMAGES: u32 = 0x0000_0803;
pub const MAGIC_IMAGES_4D: u32 = 0x0000_0804;
pub const MAGIC_LABELS: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], off: &mut usize) -> Result<u32, DataError> {
    if *off + 4 > bytes.len() {
        return Err(DataError::Truncated("header".into()));
    }
    let v = u32::from_be_bytes(bytes[*off..*off + 4].try_into().unwrap());
    *off += 4;
    Ok(v)
}

/// Parse an IDX image file into a [N,C,H,W] tensor with pixels scaled to
/// [0,1] by /255.
pub fn load_idx_images<F: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<F>> {
    let bytes = fs::read(path).map_err(DataError::Io)?;
    parse_idx_images(&bytes)
}

/// Parse IDX image bytes (the file-level loader delegates here).
pub fn parse_idx_images<F: Scalar>(bytes: &[u8]) -> Result<Tensor<F>> {
    let mut off = 0;
    let magic = read_u32_be(bytes, &mut off)?;
    let (n, c, h, w) = match magic {
        MAGIC_IMAGES => {
            let n = read_u32_be(bytes, &mut off)? as usize;
            let h = read_u32_be(bytes, &mut off)? as usize;
            let w = read_u32_be(bytes, &mut off)? as usize;
            (n, 1, h, w)
        }
        MAGIC_IMAGES_4D => {
            let n = read_u32_be(bytes, &mut off)? as usize;
            let c = read_u32_be(bytes, &mut off)? as usize;
            let h = read_u32_be(bytes, &mut off)? as usize;
            let w = read_u32_be(bytes, &mut off)? as usize;
            (n, c, h, w)
        }
        got => {
            return Err(DataError::BadMagic {
                got,
                expected: MAGIC_IMAGES,
            }
            .into())
        }
    };
    let count = n * c * h * w;
    if bytes.len() - off != count {
        return Err(DataError::Truncated(format!(
            "expected {count} pixel bytes, found {}",
            bytes.len() - off
        ))
        .into());
    }
    let scale = F::one() / F::of(255.0);
    let data: Vec<F> = bytes[off..].iter().map(|&b| F::of(b as f64) * scale).collect();
    Ok(Tensor::new(vec![n, c, h, w], data)?)
}

/// Parse an IDX label file.
pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let bytes = fs::read(path).map_err(DataError::Io)?;
    parse_idx_labels(&bytes)
}

/// Parse IDX label bytes.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let mut off = 0;
    let magic = read_u32_be(bytes, &mut off)?;
    if magic != MAGIC_LABELS {
        return Err(DataError::BadMagic {
            got: magic,
            expected: MAGIC_LABELS,
        }
        .into());
    }
    let n = read_u32_be(bytes, &mut off)? as usize;
    if bytes.len() - off != n {
        return Err(DataError::Truncated(format!(
            "expected {n} label bytes, found {}",
            bytes.len() - off
        ))
        .into());
    }
    Ok(bytes[off..].iter().map(|&b| b as usize).collect())
}

/// Load a paired (images, labels) IDX dataset.
pub fn load_idx<F: Scalar>(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<Dataset<F>> {
    let images = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if images.shape()[0] != labels.len() {
        return Err(DataError::CountMismatch {
            images: images.shape()[0],
            labels: labels.len(),
        }
        .into());
    }
    let classes = labels.iter().copied().max().map_or(1, |m| m + 1).max(10);
    Dataset::new(images, labels, classes)
}

/// Serialize images back to IDX bytes; pixels quantized by round(x·255).
/// Single-channel sets use the canonical 3-dim layout.
pub fn idx_image_bytes<F: Scalar>(images: &Tensor<F>) -> Vec<u8> {
    let s = images.shape();
    assert_eq!(s.len(), 4, "images must be [N,C,H,W]");
    let mut out = Vec::with_capacity(images.numel() + 20);
    if s[1] == 1 {
        out.extend_from_slice(&MAGIC_IMAGES.to_be_bytes());
        out.extend_from_slice(&(s[0] as u32).to_be_bytes());
        out.extend_from_slice(&(s[2] as u32).to_be_bytes());
        out.extend_from_slice(&(s[3] as u32).to_be_bytes());
    } else {
        out.extend_from_slice(&MAGIC_IMAGES_4D.to_be_bytes());
        for &d in s {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
    }
    for &p in images.data() {
        out.push((p.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8);
    }
    out
}

pub fn write_idx_images<F: Scalar>(path: impl AsRef<Path>, images: &Tensor<F>) -> Result<()> {
    fs::write(path, idx_image_bytes(images)).map_err(DataError::Io)?;
    Ok(())
}

pub fn idx_label_bytes(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(labels.len() + 8);
    out.extend_from_slice(&MAGIC_LABELS.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    out
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    fs::write(path, idx_label_bytes(labels)).map_err(DataError::Io)?;
    Ok(())
}
