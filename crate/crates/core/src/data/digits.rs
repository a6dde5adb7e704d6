//! Bundled handwritten-digit corpus and its desk-scale expansion.
//!
//! The assets embed the UCI Optical Recognition of Handwritten Digits
//! images (1797 samples, 8x8 grayscale, 10 classes) in IDX form. For
//! experiments that want MNIST-shaped data without network access,
//! [`synth_digits`] deterministically expands the corpus to 28x28 by
//! upsampling each source digit through a randomized affine warp plus blur
//! and pixel noise. Real MNIST IDX files drop in through the same loaders.

use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::Result;
use crate::imgops;
use crate::rng::{self, tags};
use crate::scalar::Scalar;

use super::{idx, Dataset};

const IMAGES_IDX: &[u8] = include_bytes!("../../assets/digits-8x8-images.idx");
const LABELS_IDX: &[u8] = include_bytes!("../../assets/digits-8x8-labels.idx");

/// The embedded 8x8 corpus (1797 samples, labels 0-9).
pub fn bundled_digits<F: Scalar>() -> Result<Dataset<F>> {
    let images = idx::parse_idx_images(IMAGES_IDX)?;
    let labels = idx::parse_idx_labels(LABELS_IDX)?;
    Dataset::new(images, labels, 10)
}

/// Controls for the expansion. Jitter scales every geometric distortion;
/// 0 disables them.
#[derive(Debug, Clone)]
pub struct DigitSynthConfig {
    pub count: usize,
    pub side: usize,
    pub jitter: f64,
    pub blur_sigma: (f64, f64),
    pub noise_std: f64,
}

impl Default for DigitSynthConfig {
    fn default() -> Self {
        DigitSynthConfig {
            count: 10_000,
            side: 28,
            jitter: 1.0,
            blur_sigma: (0.3, 0.9),
            noise_std: 0.08,
        }
    }
}

/// Deterministic (seed, config) → dataset expansion of the bundled corpus.
pub fn synth_digits<F: Scalar>(cfg: &DigitSynthConfig, seed: u64) -> Result<Dataset<F>> {
    let corpus: Dataset<f64> = bundled_digits()?;
    let side = cfg.side;
    let mut images = Tensor::zeros(&[cfg.count, 1, side, side]);
    let mut labels = Vec::with_capacity(cfg.count);
    let stride = side * side;
    for i in 0..cfg.count {
        let mut r = rng::substream(seed, &[tags::DATA, i as u64]);
        let src_idx = r.gen_range(0..corpus.len());
        labels.push(corpus.labels[src_idx]);
        let up = imgops::resize_bilinear(&corpus.image(src_idx), side, side);

        let j = cfg.jitter;
        let theta = r.gen_range(-0.22..0.22) * j;
        let scale = 1.0 + r.gen_range(-0.15..0.15) * j;
        let shear = r.gen_range(-0.15..0.15) * j;
        let tx = r.gen_range(-2.5..2.5) * j;
        let ty = r.gen_range(-2.5..2.5) * j;
        let map = imgops::inverse_rigid_map((side, side), theta, scale, shear, 0.0, (tx, ty));
        let mut img = imgops::affine_warp(&up, &map);

        let gain = r.gen_range(0.7..1.0);
        for v in img.data_mut() {
            *v *= gain;
        }
        let sigma = r.gen_range(cfg.blur_sigma.0..=cfg.blur_sigma.1);
        let mut img = imgops::gaussian_blur(&img, sigma);
        if cfg.noise_std > 0.0 {
            for v in img.data_mut() {
                let n: f64 = rand_distr::Distribution::sample(
                    &rand_distr::StandardNormal,
                    &mut r,
                );
                *v += n * cfg.noise_std;
            }
        }
        imgops::clamp01(&mut img);
        let dst = &mut images.data_mut()[i * stride..(i + 1) * stride];
        for (d, &s) in dst.iter_mut().zip(img.data()) {
            *d = F::of(s);
        }
    }
    Dataset::new(images, labels, 10)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_corpus_loads() {
        let ds: Dataset<f32> = bundled_digits().unwrap();
        assert_eq!(ds.len(), 1797);
        assert_eq!(ds.image_shape(), [1, 8, 8]);
        assert!(ds.labels.iter().all(|&l| l < 10));
        // Every class is represented.
        for k in 0..10 {
            assert!(ds.labels.iter().any(|&l| l == k));
        }
    }

    #[test]
    fn synthesis_is_deterministic_per_seed() {
        let cfg = DigitSynthConfig {
            count: 12,
            ..Default::default()
        };
        let a: Dataset<f32> = synth_digits(&cfg, 7).unwrap();
        let b: Dataset<f32> = synth_digits(&cfg, 7).unwrap();
        let c: Dataset<f32> = synth_digits(&cfg, 8).unwrap();
        assert_eq!(a.images.data(), b.images.data());
        assert_eq!(a.labels, b.labels);
        assert_ne!(a.images.data(), c.images.data());
    }

    #[test]
    fn synthesized_pixels_stay_in_range() {
        let cfg = DigitSynthConfig {
            count: 6,
            noise_std: 0.3,
            ..Default::default()
        };
        let ds: Dataset<f64> = synth_digits(&cfg, 1).unwrap();
        assert!(ds
            .images
            .data()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(ds.image_shape(), [1, 28, 28]);
    }
}
