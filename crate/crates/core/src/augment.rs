//! Data augmentation strategies applied to minibatches before the loss:
//! Mixup (convex pair mixing), AugMix-style chains with a Jensen–Shannon
//! consistency term, and NoisyMix-style mixing with noise injection plus a
//! stability term. Augmentation happens outside the gradient graph; only the
//! final augmented tensors enter it.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ExprGraph, NodeId, Tensor};
use crate::data::Batch;
use crate::error::{AugmentError, Error, GraphError, Result};
use crate::imgops;
use crate::scalar::Scalar;

// ── Mixup ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixupConfig {
    /// Beta(α, α) concentration for the mixing weight λ.
    pub alpha: f64,
}

impl Default for MixupConfig {
    fn default() -> Self {
        MixupConfig { alpha: 1.0 }
    }
}

pub(crate) fn draw_lambda(alpha: f64, rng: &mut impl Rng) -> f64 {
    rand_distr::Beta::new(alpha, alpha)
        .expect("alpha > 0")
        .sample(rng)
}

/// One λ ~ Beta(α,α) and one permutation per batch:
/// x̃ᵢ = λxᵢ + (1−λ)x_{π(i)}, and the same blend for labels.
pub fn mixup<F: Scalar>(batch: &Batch<F>, cfg: &MixupConfig, rng: &mut impl Rng) -> Result<Batch<F>> {
    if cfg.alpha <= 0.0 {
        return Err(Error::Invalid(format!("mixup alpha {} must be > 0", cfg.alpha)));
    }
    if batch.len() < 2 {
        return Err(AugmentError::BatchTooSmall(batch.len()).into());
    }
    let lambda = draw_lambda(cfg.alpha, rng);
    let mut perm: Vec<usize> = (0..batch.len()).collect();
    perm.shuffle(rng);
    mixup_with(batch, lambda, &perm)
}

/// Deterministic core of [`mixup`] with λ and π forced.
pub fn mixup_with<F: Scalar>(batch: &Batch<F>, lambda: f64, perm: &[usize]) -> Result<Batch<F>> {
    let n = batch.len();
    assert_eq!(perm.len(), n, "permutation must cover the batch");
    let l = F::of(lambda);
    let one_m = F::of(1.0 - lambda);
    let [c, h, w] = batch.image_shape();
    let stride = c * h * w;
    let k = batch.num_classes();
    let mut images = Tensor::zeros(batch.images().shape());
    let mut labels = Tensor::zeros(batch.labels().shape());
    let src_i = batch.images().data();
    let src_l = batch.labels().data();
    for i in 0..n {
        let j = perm[i];
        let dst = &mut images.data_mut()[i * stride..(i + 1) * stride];
        for (p, (a, b)) in dst
            .iter_mut()
            .zip(src_i[i * stride..].iter().zip(&src_i[j * stride..]))
        {
            *p = l * *a + one_m * *b;
        }
        let dst = &mut labels.data_mut()[i * k..(i + 1) * k];
        for (p, (a, b)) in dst
            .iter_mut()
            .zip(src_l[i * k..].iter().zip(&src_l[j * k..]))
        {
            *p = l * *a + one_m * *b;
        }
    }
    imgops::clamp01(&mut images);
    Batch::new(images, labels)
}

// ── AugMix ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmixPrimitive {
    TranslateX,
    TranslateY,
    Rotate,
    ShearX,
    ShearY,
    Contrast,
    Brightness,
    Posterize,
    EqualizeLite,
}

pub const ALL_PRIMITIVES: [AugmixPrimitive; 9] = [
    AugmixPrimitive::TranslateX,
    AugmixPrimitive::TranslateY,
    AugmixPrimitive::Rotate,
    AugmixPrimitive::ShearX,
    AugmixPrimitive::ShearY,
    AugmixPrimitive::Contrast,
    AugmixPrimitive::Brightness,
    AugmixPrimitive::Posterize,
    AugmixPrimitive::EqualizeLite,
];

/// Magnitudes are drawn uniformly from fixed per-primitive ranges:
/// translate ≤ 25% of the side, rotation ≤ 30°, shear ≤ 0.3,
/// contrast factor ∈ [0.5, 1.5], brightness delta ∈ [−0.3, 0.3],
/// posterize to 8–32 levels.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmixConfig {
    /// Number of parallel chains mixed by Dirichlet weights.
    pub width: usize,
    /// Inclusive depth range of each chain.
    pub depth: (usize, usize),
    pub primitives: Vec<AugmixPrimitive>,
    pub dirichlet_alpha: f64,
    pub beta_alpha: f64,
    /// Weight of the Jensen–Shannon consistency term in the training loss.
    pub jsd_weight: f64,
}

impl Default for AugmixConfig {
    fn default() -> Self {
        AugmixConfig {
            width: 3,
            depth: (1, 3),
            primitives: ALL_PRIMITIVES.to_vec(),
            dirichlet_alpha: 1.0,
            beta_alpha: 1.0,
            jsd_weight: 12.0,
        }
    }
}

fn apply_primitive<F: Scalar>(
    img: &Tensor<F>,
    prim: AugmixPrimitive,
    rng: &mut impl Rng,
) -> Tensor<F> {
    let (_, h, w) = imgops::chw(img);
    let warp = |img: &Tensor<F>, theta: f64, shx: f64, shy: f64, t: (f64, f64)| {
        let m = imgops::inverse_rigid_map((h, w), theta, 1.0, shx, shy, t);
        imgops::affine_warp(img, &m)
    };
    match prim {
        AugmixPrimitive::TranslateX => {
            let d = rng.gen_range(-0.25..0.25) * w as f64;
            warp(img, 0.0, 0.0, 0.0, (d, 0.0))
        }
        AugmixPrimitive::TranslateY => {
            let d = rng.gen_range(-0.25..0.25) * h as f64;
            warp(img, 0.0, 0.0, 0.0, (0.0, d))
        }
        AugmixPrimitive::Rotate => {
            let theta = rng.gen_range(-0.5236..0.5236); // ±30°
            warp(img, theta, 0.0, 0.0, (0.0, 0.0))
        }
        AugmixPrimitive::ShearX => {
            let s = rng.gen_range(-0.3..0.3);
            warp(img, 0.0, s, 0.0, (0.0, 0.0))
        }
        AugmixPrimitive::ShearY => {
            let s = rng.gen_range(-0.3..0.3);
            warp(img, 0.0, 0.0, s, (0.0, 0.0))
        }
        AugmixPrimitive::Contrast => {
            let f = F::of(rng.gen_range(0.5..1.5));
            let half = F::of(0.5);
            img.map(|x| half + (x - half) * f)
        }
        AugmixPrimitive::Brightness => {
            let d = F::of(rng.gen_range(-0.3..0.3));
            img.map(|x| x + d)
        }
        AugmixPrimitive::Posterize => {
            let levels = F::of(rng.gen_range(8..=32) as f64);
            img.map(|x| (x * levels).floor() / levels)
        }
        AugmixPrimitive::EqualizeLite => {
            // Contrast stretch to the image's own min/max range.
            let mut lo = F::one();
            let mut hi = F::zero();
            for &v in img.data() {
                if v < lo {
                    lo = v;
                }
                if v > hi {
                    hi = v;
                }
            }
            let span = hi - lo;
            if span.as_f64() < 1e-6 {
                img.clone()
            } else {
                img.map(|x| (x - lo) / span)
            }
        }
    }
}

/// x_aug = (1−m)·x + m·Σⱼ wⱼ·chainⱼ(x) with w ~ Dirichlet(α), m ~ Beta(α,α);
/// each chain applies `depth` primitives drawn from the configured set.
pub fn augmix<F: Scalar>(
    image: &Tensor<F>,
    cfg: &AugmixConfig,
    rng: &mut impl Rng,
) -> Result<Tensor<F>> {
    if cfg.primitives.is_empty() {
        return Err(AugmentError::EmptyPrimitives.into());
    }
    if cfg.width == 0 {
        return Err(Error::Invalid("augmix width must be >= 1".into()));
    }
    let m = draw_lambda(cfg.beta_alpha, rng);
    let weights = if cfg.width == 1 {
        vec![1.0]
    } else {
        rand_distr::Dirichlet::new(&vec![cfg.dirichlet_alpha; cfg.width])
            .expect("valid dirichlet")
            .sample(rng)
    };
    let mut chains = Vec::with_capacity(cfg.width);
    for _ in 0..cfg.width {
        let depth = rng.gen_range(cfg.depth.0..=cfg.depth.1.max(cfg.depth.0));
        let mut out = image.clone();
        for _ in 0..depth {
            let prim = cfg.primitives[rng.gen_range(0..cfg.primitives.len())];
            out = apply_primitive(&out, prim, rng);
        }
        chains.push(out);
    }
    Ok(augmix_blend(image, m, &weights, &chains))
}

/// Deterministic blending core: (1−m)·x + m·Σ wⱼ·chainⱼ, clamped to [0,1].
pub fn augmix_blend<F: Scalar>(
    image: &Tensor<F>,
    m: f64,
    weights: &[f64],
    chains: &[Tensor<F>],
) -> Tensor<F> {
    assert_eq!(weights.len(), chains.len());
    let mut out = Tensor::zeros(image.shape());
    let mf = F::of(m);
    let base = F::one() - mf;
    for (o, &x) in out.data_mut().iter_mut().zip(image.data()) {
        *o = base * x;
    }
    for (wj, chain) in weights.iter().zip(chains) {
        let wj = mf * F::of(*wj);
        for (o, &v) in out.data_mut().iter_mut().zip(chain.data()) {
            *o += wj * v;
        }
    }
    imgops::clamp01(&mut out);
    out
}

/// Apply augmix to every image of a batch (labels unchanged).
pub fn augmix_batch<F: Scalar>(
    batch: &Batch<F>,
    cfg: &AugmixConfig,
    rng: &mut impl Rng,
) -> Result<Batch<F>> {
    let [c, h, w] = batch.image_shape();
    let stride = c * h * w;
    let mut images = Tensor::zeros(batch.images().shape());
    for i in 0..batch.len() {
        let aug = augmix(&batch.image(i), cfg, rng)?;
        images.data_mut()[i * stride..(i + 1) * stride].copy_from_slice(aug.data());
    }
    batch.replace_images(images)
}

// ── Jensen–Shannon consistency ───────────────────────────────────────────

const JSD_CLAMP: f64 = 1e-12;

fn validate_rows<F: Scalar>(p: &Tensor<F>, arg: usize) -> Result<()> {
    let k = p.shape()[1];
    for row in 0..p.shape()[0] {
        let sum: f64 = p.data()[row * k..(row + 1) * k]
            .iter()
            .map(|v| v.as_f64())
            .sum();
        if (sum - 1.0).abs() > 1e-4 {
            return Err(AugmentError::NotADistribution { arg, row, sum }.into());
        }
    }
    Ok(())
}

/// Sum three floats in a value-canonical order so the result is exactly
/// invariant under argument permutation.
fn sym_sum3(a: f64, b: f64, c: f64) -> f64 {
    let mut v = [a, b, c];
    v.sort_by(|x, y| x.partial_cmp(y).unwrap());
    v[0] + v[1] + v[2]
}

/// Jensen–Shannon divergence among three prediction distributions:
/// mean over rows of (1/3)·Σᵢ KL(pᵢ ‖ M), M = (p1+p2+p3)/3, with
/// probabilities clamped to ≥ 1e-12 inside the logs. Exactly symmetric in
/// its arguments.
pub fn jsd_loss<F: Scalar>(p1: &Tensor<F>, p2: &Tensor<F>, p3: &Tensor<F>) -> Result<f64> {
    if p1.shape() != p2.shape() || p2.shape() != p3.shape() || p1.shape().len() != 2 {
        return Err(GraphError::ShapeMismatch {
            op: "jsd_loss",
            lhs: p1.shape().to_vec(),
            rhs: p2.shape().to_vec(),
        }
        .into());
    }
    for (i, p) in [p1, p2, p3].iter().enumerate() {
        validate_rows(p, i + 1)?;
    }
    let n = p1.shape()[0];
    let k = p1.shape()[1];
    let kl = |p: &Tensor<F>, row: usize, m_row: &[f64]| -> f64 {
        let mut acc = 0.0;
        for j in 0..k {
            let pv = p.data()[row * k + j].as_f64();
            if pv > 0.0 {
                let pc = pv.max(JSD_CLAMP);
                acc += pv * (pc.ln() - m_row[j].max(JSD_CLAMP).ln());
            }
        }
        acc
    };
    let mut total = 0.0;
    let mut m_row = vec![0.0f64; k];
    for row in 0..n {
        for (j, m) in m_row.iter_mut().enumerate() {
            *m = sym_sum3(
                p1.data()[row * k + j].as_f64(),
                p2.data()[row * k + j].as_f64(),
                p3.data()[row * k + j].as_f64(),
            ) / 3.0;
        }
        let d = sym_sum3(kl(p1, row, &m_row), kl(p2, row, &m_row), kl(p3, row, &m_row)) / 3.0;
        total += d;
    }
    Ok(total / n as f64)
}

/// Graph node computing the same JSD (differentiable; used by the trainer).
pub fn jsd_loss_node<F: Scalar>(
    g: &mut ExprGraph<F>,
    p1: NodeId,
    p2: NodeId,
    p3: NodeId,
) -> Result<NodeId, GraphError> {
    let n = g.shape(p1)?[0];
    let s12 = g.add(p1, p2)?;
    let s = g.add(s12, p3)?;
    let m = g.mul_scalar(s, F::of(1.0 / 3.0))?;
    let m = g.clamp_min(m, F::of(JSD_CLAMP))?;
    let ln_m = g.ln(m)?;
    let mut kls = Vec::with_capacity(3);
    for &p in &[p1, p2, p3] {
        let pc = g.clamp_min(p, F::of(JSD_CLAMP))?;
        let ln_p = g.ln(pc)?;
        let diff = g.sub(ln_p, ln_m)?;
        // Multiply by the clamped p as well: rows of a softmax are > 0, and
        // the clamp keeps 0·ln(0) out of corner-case inputs.
        let w = g.mul(pc, diff)?;
        kls.push(g.sum(w)?);
    }
    let k12 = g.add(kls[0], kls[1])?;
    let ksum = g.add(k12, kls[2])?;
    g.mul_scalar(ksum, F::of(1.0 / (3.0 * n as f64)))
}

// ── NoisyMix ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoisymixConfig {
    pub additive_noise_std: f64,
    pub multiplicative_noise_std: f64,
    pub mixup_alpha: f64,
    /// Weight of the clean-vs-noisy prediction consistency term assembled by
    /// the trainer.
    pub stability_weight: f64,
}

impl Default for NoisymixConfig {
    fn default() -> Self {
        NoisymixConfig {
            additive_noise_std: 0.1,
            multiplicative_noise_std: 0.1,
            mixup_alpha: 1.0,
            stability_weight: 1.0,
        }
    }
}

/// Input-level mixing plus noise: mixup, then per-pixel additive Gaussian
/// noise and multiplicative (1 + Gaussian) noise, clamped to [0,1]. Returns
/// (noisy batch, clean mixed batch) — the clean twin feeds the stability
/// term.
pub fn noisymix<F: Scalar>(
    batch: &Batch<F>,
    cfg: &NoisymixConfig,
    rng: &mut impl Rng,
) -> Result<(Batch<F>, Batch<F>)> {
    if cfg.additive_noise_std < 0.0 || cfg.multiplicative_noise_std < 0.0 {
        return Err(Error::Invalid("noise stds must be nonnegative".into()));
    }
    let clean = mixup(
        batch,
        &MixupConfig {
            alpha: cfg.mixup_alpha,
        },
        rng,
    )?;
    let mut images = clean.images().clone();
    let normal = rand_distr::StandardNormal;
    for v in images.data_mut() {
        let mut x = v.as_f64();
        if cfg.additive_noise_std > 0.0 {
            let n: f64 = normal.sample(rng);
            x += n * cfg.additive_noise_std;
        }
        if cfg.multiplicative_noise_std > 0.0 {
            let n: f64 = normal.sample(rng);
            x *= 1.0 + n * cfg.multiplicative_noise_std;
        }
        *v = F::of(x);
    }
    imgops::clamp01(&mut images);
    let noisy = clean.replace_images(images)?;
    Ok((noisy, clean))
}
