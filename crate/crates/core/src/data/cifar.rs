//! CIFAR binary records: CIFAR-10 stores 1 label byte + 3072 pixel bytes
//! per record; CIFAR-100 stores coarse+fine label bytes + 3072. Pixels are
//! channel-major (1024 R, 1024 G, 1024 B) over a 32x32 grid.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{DataError, Result};
use crate::scalar::Scalar;

use super::Dataset;

const PIXELS: usize = 3 * 32 * 32;
const REC_C10: usize = 1 + PIXELS;
const REC_C100: usize = 2 + PIXELS;

/// Load a CIFAR binary file, auto-detecting the CIFAR-10 vs CIFAR-100 record
/// layout from the file length. CIFAR-100 uses the fine label.
pub fn load_cifar_binary<F: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<F>> {
    let bytes = fs::read(path).map_err(DataError::Io)?;
    parse_cifar(&bytes)
}

pub(crate) fn parse_cifar<F: Scalar>(bytes: &[u8]) -> Result<Dataset<F>> {
    let (record, label_off, classes) = if !bytes.is_empty() && bytes.len() % REC_C10 == 0 {
        (REC_C10, 0usize, 10usize)
    } else if !bytes.is_empty() && bytes.len() % REC_C100 == 0 {
        (REC_C100, 1usize, 100usize)
    } else {
        return Err(DataError::BadRecordSize { len: bytes.len() }.into());
    };
    let n = bytes.len() / record;
    let scale = F::one() / F::of(255.0);
    let mut images = Tensor::zeros(&[n, 3, 32, 32]);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let rec = &bytes[i * record..(i + 1) * record];
        labels.push(rec[label_off] as usize);
        let dst = &mut images.data_mut()[i * PIXELS..(i + 1) * PIXELS];
        for (d, &b) in dst.iter_mut().zip(&rec[record - PIXELS..]) {
            *d = F::of(b as f64) * scale;
        }
    }
    Dataset::new(images, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_c10_records_parse() {
        let mut bytes = vec![0u8; 10 * REC_C10];
        for i in 0..10 {
            bytes[i * REC_C10] = (i % 10) as u8;
        }
        let ds: Dataset<f32> = parse_cifar(&bytes).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.images.shape(), &[10, 3, 32, 32]);
        assert_eq!(ds.labels[3], 3);
    }

    #[test]
    fn all_zero_record_gives_zero_image_label_zero() {
        let bytes = vec![0u8; REC_C10];
        let ds: Dataset<f64> = parse_cifar(&bytes).unwrap();
        assert_eq!(ds.labels[0], 0);
        assert!(ds.images.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn c100_records_use_fine_label() {
        let mut bytes = vec![0u8; 3 * REC_C100];
        bytes[0] = 7; // coarse
        bytes[1] = 42; // fine
        let ds: Dataset<f32> = parse_cifar(&bytes).unwrap();
        assert_eq!(ds.classes, 100);
        assert_eq!(ds.labels[0], 42);
    }

    #[test]
    fn missing_label_byte_is_a_format_error() {
        let bytes = vec![0u8; PIXELS]; // 3072: neither record size divides
        assert!(parse_cifar::<f32>(&bytes).is_err());
    }
}
