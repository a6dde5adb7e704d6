//! Datasets and batches. Images are [N,C,H,W] tensors in [0,1]; labels are
//! carried as per-row distributions (one-hot for raw data, soft after Mixup).

mod cifar;
pub mod digits;
mod idx;

pub use cifar::load_cifar_binary;
pub use idx::{
    idx_image_bytes, idx_label_bytes, load_idx, load_idx_images, load_idx_labels,
    parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels,
};

use crate::autodiff::Tensor;
use crate::crc::Crc32;
use crate::error::{DataError, Error, Result};
use crate::scalar::Scalar;

/// A minibatch: images with soft label distributions.
#[derive(Clone, Debug)]
pub struct Batch<F: Scalar> {
    images: Tensor<F>,
    labels: Tensor<F>,
}

impl<F: Scalar> Batch<F> {
    /// Validates the batch contract: rank-4 images with pixels in [0,1],
    /// rank-2 labels with each row summing to 1 within 1e-6.
    pub fn new(images: Tensor<F>, labels: Tensor<F>) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::Invalid(format!(
                "batch images must be [N,C,H,W], got {:?}",
                images.shape()
            )));
        }
        if labels.shape().len() != 2 || labels.shape()[0] != images.shape()[0] {
            return Err(Error::Invalid(format!(
                "batch labels must be [N,K] with N={}, got {:?}",
                images.shape()[0],
                labels.shape()
            )));
        }
        for &p in images.data() {
            let v = p.as_f64();
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Invalid(format!("pixel {v} outside [0,1]")));
            }
        }
        let k = labels.shape()[1];
        for row in 0..labels.shape()[0] {
            let mut sum = 0.0;
            for j in 0..k {
                let v = labels.data()[row * k + j].as_f64();
                if v < 0.0 {
                    return Err(Error::Invalid(format!("negative label weight {v}")));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Invalid(format!(
                    "label row {row} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(Batch { images, labels })
    }

    /// Construct without validation; for internal transforms that preserve
    /// the invariants by construction.
    pub(crate) fn from_parts_unchecked(images: Tensor<F>, labels: Tensor<F>) -> Self {
        Batch { images, labels }
    }

    pub fn images(&self) -> &Tensor<F> {
        &self.images
    }

    pub fn labels(&self) -> &Tensor<F> {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.labels.shape()[1]
    }

    /// [C,H,W] of a single image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// View of image `i` as a standalone [C,H,W] tensor.
    pub fn image(&self, i: usize) -> Tensor<F> {
        let [c, h, w] = self.image_shape();
        let stride = c * h * w;
        Tensor::new(
            vec![c, h, w],
            self.images.data()[i * stride..(i + 1) * stride].to_vec(),
        )
        .expect("image slice")
    }

    pub fn replace_images(&self, images: Tensor<F>) -> Result<Self> {
        Batch::new(images, self.labels.clone())
    }

    /// Hard class per row: argmax with ties broken by the lowest index.
    pub fn hard_labels(&self) -> Vec<usize> {
        let k = self.num_classes();
        (0..self.len())
            .map(|i| {
                let row = &self.labels.data()[i * k..(i + 1) * k];
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// A labelled image collection with hard labels.
#[derive(Clone, Debug)]
pub struct Dataset<F: Scalar> {
    pub images: Tensor<F>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl<F: Scalar> Dataset<F> {
    pub fn new(images: Tensor<F>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::Invalid(format!(
                "dataset images must be [N,C,H,W], got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(DataError::CountMismatch {
                images: images.shape()[0],
                labels: labels.len(),
            }
            .into());
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::LabelRange {
                label: bad,
                classes,
            }
            .into());
        }
        Ok(Dataset {
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn image(&self, i: usize) -> Tensor<F> {
        let [c, h, w] = self.image_shape();
        let stride = c * h * w;
        Tensor::new(
            vec![c, h, w],
            self.images.data()[i * stride..(i + 1) * stride].to_vec(),
        )
        .expect("image slice")
    }

    /// Assemble a batch with one-hot labels for the given indices.
    pub fn batch(&self, indices: &[usize]) -> Batch<F> {
        let [c, h, w] = self.image_shape();
        let stride = c * h * w;
        let mut images = Tensor::zeros(&[indices.len(), c, h, w]);
        let mut labels = Tensor::zeros(&[indices.len(), self.classes]);
        for (row, &i) in indices.iter().enumerate() {
            images.data_mut()[row * stride..(row + 1) * stride]
                .copy_from_slice(&self.images.data()[i * stride..(i + 1) * stride]);
            labels.data_mut()[row * self.classes + self.labels[i]] = F::one();
        }
        Batch::from_parts_unchecked(images, labels)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset<F> {
        let [c, h, w] = self.image_shape();
        let stride = c * h * w;
        let mut images = Tensor::zeros(&[indices.len(), c, h, w]);
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &i) in indices.iter().enumerate() {
            images.data_mut()[row * stride..(row + 1) * stride]
                .copy_from_slice(&self.images.data()[i * stride..(i + 1) * stride]);
            labels.push(self.labels[i]);
        }
        Dataset {
            images,
            labels,
            classes: self.classes,
        }
    }

    pub fn take(&self, n: usize) -> Dataset<F> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Replace images wholesale (corruption pipelines), keeping labels.
    pub fn with_images(&self, images: Tensor<F>) -> Result<Self> {
        Dataset::new(images, self.labels.clone(), self.classes)
    }

    /// CRC32 digest over quantized pixel bytes and labels; identifies the
    /// source data in corrupted-set manifests.
    pub fn digest(&self) -> u32 {
        let mut crc = Crc32::new();
        for &p in self.images.data() {
            let b = (p.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8;
            crc.update(&[b]);
        }
        for &l in &self.labels {
            crc.update(&(l as u32).to_le_bytes());
        }
        crc.finish()
    }

    pub fn cast<G: Scalar>(&self) -> Dataset<G> {
        Dataset {
            images: self.images.cast(),
            labels: self.labels.clone(),
            classes: self.classes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset() -> Dataset<f32> {
        let images = Tensor::from_fn(&[4, 1, 2, 2], |i| (i % 4) as f32 / 4.0);
        Dataset::new(images, vec![0, 1, 2, 1], 3).unwrap()
    }

    #[test]
    fn batch_one_hot_rows_sum_to_one() {
        let ds = tiny_dataset();
        let b = ds.batch(&[0, 2, 3]);
        assert_eq!(b.len(), 3);
        assert_eq!(b.hard_labels(), vec![0, 2, 1]);
        for i in 0..3 {
            let s: f32 = b.labels().data()[i * 3..(i + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_rejects_out_of_range_pixels() {
        let images = Tensor::<f32>::full(&[1, 1, 2, 2], 1.5);
        let labels = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        assert!(Batch::new(images, labels).is_err());
    }

    #[test]
    fn batch_rejects_non_simplex_labels() {
        let images = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        let labels = Tensor::new(vec![1, 2], vec![0.7, 0.7]).unwrap();
        assert!(Batch::new(images, labels).is_err());
    }

    #[test]
    fn hard_label_ties_break_low() {
        let images = Tensor::<f32>::zeros(&[1, 1, 1, 1]);
        let labels = Tensor::new(vec![1, 3], vec![0.4, 0.4, 0.2]).unwrap();
        let b = Batch::new(images, labels).unwrap();
        assert_eq!(b.hard_labels(), vec![0]);
    }

    #[test]
    fn digest_changes_with_content() {
        let a = tiny_dataset();
        let mut b = tiny_dataset();
        b.images.data_mut()[0] = 0.9;
        assert_ne!(a.digest(), b.digest());
    }
}
