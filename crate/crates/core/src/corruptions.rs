//! Synthetic common corruptions with parameterized severities, plus the
//! severity-recalibration search that bisects each kind's scalar intensity
//! until a reference model hits a target accuracy.
//!
//! Each kind exposes one scalar intensity with 0 = identity so calibration
//! is a 1-D bisection with a uniform direction (shot noise is inverted:
//! intensity t maps to scale s = 1/t).

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{idx_image_bytes, write_idx_labels, Dataset};
use crate::error::{CorruptionError, DataError, Error, Result};
use crate::imgops;
use crate::models::Model;
use crate::rng::{self, tags};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    ShotNoise,
    ImpulseNoise,
    DefocusBlur,
    MotionBlur,
    ZoomBlur,
    Contrast,
    Brightness,
    Pixelate,
}

pub const ALL_KINDS: [CorruptionKind; 9] = [
    CorruptionKind::GaussianNoise,
    CorruptionKind::ShotNoise,
    CorruptionKind::ImpulseNoise,
    CorruptionKind::DefocusBlur,
    CorruptionKind::MotionBlur,
    CorruptionKind::ZoomBlur,
    CorruptionKind::Contrast,
    CorruptionKind::Brightness,
    CorruptionKind::Pixelate,
];

impl CorruptionKind {
    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ShotNoise => "shot_noise",
            CorruptionKind::ImpulseNoise => "impulse_noise",
            CorruptionKind::DefocusBlur => "defocus_blur",
            CorruptionKind::MotionBlur => "motion_blur",
            CorruptionKind::ZoomBlur => "zoom_blur",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::Brightness => "brightness",
            CorruptionKind::Pixelate => "pixelate",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CorruptionError> {
        ALL_KINDS
            .iter()
            .find(|k| k.name() == s)
            .copied()
            .ok_or_else(|| CorruptionError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub params: BTreeMap<String, f64>,
    pub severity_label: Option<u8>,
}

impl CorruptionSpec {
    pub fn new(kind: CorruptionKind, params: &[(&str, f64)]) -> Self {
        CorruptionSpec {
            kind,
            params: params
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            severity_label: None,
        }
    }

    pub fn with_severity(mut self, s: u8) -> Self {
        self.severity_label = Some(s);
        self
    }

    fn param(&self, name: &'static str) -> Result<f64, CorruptionError> {
        self.params
            .get(name)
            .copied()
            .ok_or(CorruptionError::MissingParam {
                kind: self.kind.name().into(),
                param: name,
            })
    }

    fn param_in(
        &self,
        name: &'static str,
        lo: f64,
        hi: f64,
    ) -> Result<f64, CorruptionError> {
        let v = self.param(name)?;
        if !(lo..=hi).contains(&v) || !v.is_finite() && v != f64::INFINITY {
            return Err(CorruptionError::ParamRange {
                kind: self.kind.name().into(),
                param: name,
                value: v,
                range: format!("[{lo}, {hi}]"),
            });
        }
        Ok(v)
    }

    /// The canonical single-intensity parameterization (0 = identity).
    pub fn from_intensity(kind: CorruptionKind, t: f64) -> Self {
        let params: &[(&str, f64)] = &match kind {
            CorruptionKind::GaussianNoise => [("sigma", t)],
            CorruptionKind::ShotNoise => {
                [("lambda_scale", if t <= 0.0 { f64::INFINITY } else { 1.0 / t })]
            }
            CorruptionKind::ImpulseNoise => [("flip_prob", t.min(1.0))],
            CorruptionKind::DefocusBlur => [("kernel_radius", t)],
            CorruptionKind::MotionBlur => [("length", t)],
            CorruptionKind::ZoomBlur => [("zoom_factor", 1.0 + t)],
            CorruptionKind::Contrast => [("contrast_factor", (1.0 - t).max(0.0))],
            CorruptionKind::Brightness => [("brightness_delta", t.min(1.0))],
            CorruptionKind::Pixelate => [("downscale_factor", 1.0 + t)],
        };
        let mut spec = CorruptionSpec::new(kind, params);
        if kind == CorruptionKind::MotionBlur {
            spec.params
                .insert("angle".into(), std::f64::consts::FRAC_PI_4);
        }
        spec
    }
}

/// Fixed severity-1..5 intensity ladders used before calibration.
pub fn default_intensity(kind: CorruptionKind, severity: u8) -> f64 {
    let i = (severity.clamp(1, 5) - 1) as usize;
    match kind {
        CorruptionKind::GaussianNoise => [0.08, 0.12, 0.18, 0.26, 0.38][i],
        CorruptionKind::ShotNoise => [1.0 / 60.0, 1.0 / 25.0, 1.0 / 12.0, 0.2, 1.0 / 3.0][i],
        CorruptionKind::ImpulseNoise => [0.03, 0.06, 0.09, 0.17, 0.27][i],
        CorruptionKind::DefocusBlur => [0.5, 1.0, 1.5, 2.5, 3.5][i],
        CorruptionKind::MotionBlur => [2.0, 4.0, 6.0, 8.0, 10.0][i],
        CorruptionKind::ZoomBlur => [0.1, 0.16, 0.22, 0.3, 0.4][i],
        CorruptionKind::Contrast => [0.25, 0.4, 0.55, 0.7, 0.85][i],
        CorruptionKind::Brightness => [0.1, 0.2, 0.3, 0.4, 0.5][i],
        CorruptionKind::Pixelate => [0.5, 1.0, 1.5, 2.5, 3.5][i],
    }
}

pub fn default_spec(kind: CorruptionKind, severity: u8) -> CorruptionSpec {
    CorruptionSpec::from_intensity(kind, default_intensity(kind, severity)).with_severity(severity)
}

// ── Kernels ──────────────────────────────────────────────────────────────

fn convolve_normalized<F: Scalar>(img: &Tensor<F>, kernel: &[f64], kh: usize, kw: usize) -> Tensor<F> {
    let total: f64 = kernel.iter().sum();
    let (c, h, w) = imgops::chw(img);
    let mut out = Tensor::zeros(img.shape());
    let src = img.data();
    let dst = out.data_mut();
    let (cy, cx) = (kh as isize / 2, kw as isize / 2);
    for ch in 0..c {
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = 0.0;
                for ky in 0..kh as isize {
                    for kx in 0..kw as isize {
                        let kv = kernel[(ky * kw as isize + kx) as usize];
                        if kv == 0.0 {
                            continue;
                        }
                        let sy = (y + ky - cy).clamp(0, h as isize - 1) as usize;
                        let sx = (x + kx - cx).clamp(0, w as isize - 1) as usize;
                        acc += kv * src[(ch * h + sy) * w + sx].as_f64();
                    }
                }
                dst[(ch * h + y as usize) * w + x as usize] = F::of(acc / total);
            }
        }
    }
    out
}

/// Anti-aliased disc kernel; radius 0 collapses to the identity.
fn disc_kernel(radius: f64) -> (Vec<f64>, usize) {
    let r = radius.max(0.0);
    let half = r.ceil() as isize;
    let side = (2 * half + 1) as usize;
    let mut k = vec![0.0; side * side];
    for dy in -half..=half {
        for dx in -half..=half {
            let d = ((dy * dy + dx * dx) as f64).sqrt();
            let wgt = (r + 0.5 - d).clamp(0.0, 1.0);
            k[((dy + half) as usize) * side + (dx + half) as usize] = wgt;
        }
    }
    (k, side)
}

/// Anti-aliased oriented line segment of the given length.
fn line_kernel(length: f64, angle: f64) -> (Vec<f64>, usize) {
    let l = length.max(0.0);
    let half = (l / 2.0).ceil() as isize;
    let side = (2 * half + 1) as usize;
    let (dx, dy) = (angle.cos(), angle.sin());
    let (hx, hy) = (dx * l / 2.0, dy * l / 2.0);
    let mut k = vec![0.0; side * side];
    for y in -half..=half {
        for x in -half..=half {
            // Distance from (x,y) to the segment (-hx,-hy)..(hx,hy).
            let t = if l > 0.0 {
                ((x as f64 * dx + y as f64 * dy) / (l / 2.0)).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            let (px, py) = (t * hx, t * hy);
            let d = ((x as f64 - px).powi(2) + (y as f64 - py).powi(2)).sqrt();
            let wgt = (1.0 - d).clamp(0.0, 1.0);
            k[((y + half) as usize) * side + (x + half) as usize] = wgt;
        }
    }
    (k, side)
}

// ── The corruption operator ──────────────────────────────────────────────

/// Apply a corruption to one [C,H,W] image. Deterministic given the RNG
/// stream; output clamped to [0,1]; shape preserved.
pub fn corrupt<F: Scalar>(
    image: &Tensor<F>,
    spec: &CorruptionSpec,
    rng: &mut impl Rng,
) -> Result<Tensor<F>> {
    let (_, h, w) = imgops::chw(image);
    let mut out = match spec.kind {
        CorruptionKind::GaussianNoise => {
            let sigma = spec.param_in("sigma", 0.0, 4.0)?;
            if sigma == 0.0 {
                image.clone()
            } else {
                let normal = rand_distr::Normal::new(0.0, sigma).expect("sigma > 0");
                image.map(|v| F::of(v.as_f64() + normal.sample(rng)))
            }
        }
        CorruptionKind::ShotNoise => {
            let s = spec.param(
                "lambda_scale",
            )?;
            if !(s > 0.0) {
                return Err(CorruptionError::ParamRange {
                    kind: spec.kind.name().into(),
                    param: "lambda_scale",
                    value: s,
                    range: "(0, inf]".into(),
                }
                .into());
            }
            if s.is_infinite() || s >= 1e12 {
                image.clone()
            } else {
                image.map(|v| {
                    let lambda = v.as_f64() * s;
                    if lambda <= 0.0 {
                        F::zero()
                    } else {
                        let p = rand_distr::Poisson::new(lambda).expect("lambda > 0");
                        F::of(p.sample(rng) / s)
                    }
                })
            }
        }
        CorruptionKind::ImpulseNoise => {
            let p = spec.param_in("flip_prob", 0.0, 1.0)?;
            let mut out = image.clone();
            for v in out.data_mut() {
                if rng.gen_range(0.0..1.0) < p {
                    *v = if rng.gen_bool(0.5) { F::one() } else { F::zero() };
                }
            }
            out
        }
        CorruptionKind::DefocusBlur => {
            let r = spec.param_in("kernel_radius", 0.0, 16.0)?;
            if r == 0.0 {
                image.clone()
            } else {
                let (k, side) = disc_kernel(r);
                convolve_normalized(image, &k, side, side)
            }
        }
        CorruptionKind::MotionBlur => {
            let l = spec.param_in("length", 0.0, 32.0)?;
            let angle = spec
                .params
                .get("angle")
                .copied()
                .unwrap_or(std::f64::consts::FRAC_PI_4);
            if l == 0.0 {
                image.clone()
            } else {
                let (k, side) = line_kernel(l, angle);
                convolve_normalized(image, &k, side, side)
            }
        }
        CorruptionKind::ZoomBlur => {
            let zf = spec.param_in("zoom_factor", 1.0, 4.0)?;
            if zf == 1.0 {
                image.clone()
            } else {
                let steps = 8usize;
                let mut acc = Tensor::zeros(image.shape());
                for s in 0..steps {
                    let f = 1.0 + (zf - 1.0) * s as f64 / (steps - 1) as f64;
                    let m = imgops::inverse_rigid_map((h, w), 0.0, f, 0.0, 0.0, (0.0, 0.0));
                    let z = imgops::affine_warp(image, &m);
                    for (a, &b) in acc.data_mut().iter_mut().zip(z.data()) {
                        *a += b;
                    }
                }
                let inv = F::of(1.0 / steps as f64);
                acc.map(|v| v * inv)
            }
        }
        CorruptionKind::Contrast => {
            let f = spec.param_in("contrast_factor", 0.0, 4.0)?;
            if f == 1.0 {
                image.clone()
            } else {
                let f = F::of(f);
                let half = F::of(0.5);
                image.map(|v| half + (v - half) * f)
            }
        }
        CorruptionKind::Brightness => {
            let d = spec.param_in("brightness_delta", -1.0, 1.0)?;
            if d == 0.0 {
                image.clone()
            } else {
                let d = F::of(d);
                image.map(|v| v + d)
            }
        }
        CorruptionKind::Pixelate => {
            let f = spec.param_in("downscale_factor", 1.0, 16.0)?;
            let (dh, dw) = (
                ((h as f64 / f).round() as usize).max(1),
                ((w as f64 / f).round() as usize).max(1),
            );
            if (dh, dw) == (h, w) {
                image.clone()
            } else {
                let small = imgops::resize_bilinear(image, dh, dw);
                imgops::resize_nearest(&small, h, w)
            }
        }
    };
    imgops::clamp01(&mut out);
    Ok(out)
}

/// Corrupt every image of a dataset with per-image RNG substreams derived
/// from (seed, image index); bit-reproducible from (seed, spec).
pub fn corrupt_dataset<F: Scalar>(
    dataset: &Dataset<F>,
    spec: &CorruptionSpec,
    seed: u64,
) -> Result<Dataset<F>> {
    let [c, h, w] = dataset.image_shape();
    let stride = c * h * w;
    let mut images = Tensor::zeros(dataset.images.shape());
    for i in 0..dataset.len() {
        let mut r = rng::substream(seed, &[tags::CORRUPT, i as u64]);
        let out = corrupt(&dataset.image(i), spec, &mut r)?;
        images.data_mut()[i * stride..(i + 1) * stride].copy_from_slice(out.data());
    }
    dataset.with_images(images)
}

// ── Corrupted-set container ──────────────────────────────────────────────

/// Sidecar manifest persisted next to each corrupted IDX file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorruptionManifest {
    pub kind: CorruptionKind,
    pub params: BTreeMap<String, f64>,
    pub severity: Option<u8>,
    pub seed: u64,
    /// CRC32 of the quantized source images + labels.
    pub source_digest: u32,
}

pub struct CorruptedSet<F: Scalar> {
    pub spec: CorruptionSpec,
    pub dataset: Dataset<F>,
}

/// One corrupted copy per spec, optionally persisted as
/// `{kind}-s{severity}-images.idx` + `.manifest.json` (plus a shared
/// `labels.idx`).
pub fn build_corrupted_set<F: Scalar>(
    dataset: &Dataset<F>,
    specs: &[CorruptionSpec],
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<Vec<CorruptedSet<F>>> {
    if dataset.is_empty() {
        return Err(DataError::Empty.into());
    }
    let digest = dataset.digest();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        write_idx_labels(dir.join("labels.idx"), &dataset.labels)?;
    }
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let corrupted = corrupt_dataset(dataset, spec, seed)?;
        if let Some(dir) = out_dir {
            let sev = spec.severity_label.unwrap_or(0);
            let base = format!("{}-s{}", spec.kind.name(), sev);
            std::fs::write(
                dir.join(format!("{base}-images.idx")),
                idx_image_bytes(&corrupted.images),
            )?;
            let manifest = CorruptionManifest {
                kind: spec.kind,
                params: spec.params.clone(),
                severity: spec.severity_label,
                seed,
                source_digest: digest,
            };
            std::fs::write(
                dir.join(format!("{base}.manifest.json")),
                serde_json::to_vec_pretty(&manifest)?,
            )?;
        }
        out.push(CorruptedSet {
            spec: spec.clone(),
            dataset: corrupted,
        });
    }
    Ok(out)
}

// ── Severity calibration ─────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationTarget {
    /// severity (1..5) → target accuracy, strictly decreasing.
    pub anchors: BTreeMap<u8, f64>,
    pub tolerance: f64,
}

impl CalibrationTarget {
    /// CIFAR-10-like anchors per the refined severity tables.
    pub fn c10_like() -> Self {
        CalibrationTarget {
            anchors: [(1, 0.85), (2, 0.79), (3, 0.70), (4, 0.62), (5, 0.51)]
                .into_iter()
                .collect(),
            tolerance: 0.02,
        }
    }

    /// CIFAR-100-like anchors (S1 60% … S5 20%).
    pub fn c100_like() -> Self {
        CalibrationTarget {
            anchors: [(1, 0.60), (2, 0.50), (3, 0.40), (4, 0.30), (5, 0.20)]
                .into_iter()
                .collect(),
            tolerance: 0.02,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals: Vec<f64> = self.anchors.values().copied().collect();
        if vals.is_empty() || vals.windows(2).any(|w| w[1] >= w[0]) {
            return Err(CorruptionError::BadAnchors.into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationResult {
    pub kind: CorruptionKind,
    pub intensity: f64,
    pub achieved_accuracy: f64,
    pub target_accuracy: f64,
    pub evaluations: usize,
}

/// Bisection on a monotonically non-increasing accuracy curve; the engine
/// behind [`calibrate_severity`]. `eval` maps intensity → accuracy.
pub fn bisect_intensity(
    mut eval: impl FnMut(f64) -> Result<f64>,
    target: f64,
    (lo, hi): (f64, f64),
    tolerance: f64,
    max_evals: usize,
) -> Result<(f64, f64, usize)> {
    let mut evals = 0usize;
    let mut feval = |t: f64, evals: &mut usize| -> Result<f64> {
        *evals += 1;
        eval(t)
    };
    let acc_lo = feval(lo, &mut evals)?;
    if (acc_lo - target).abs() <= tolerance {
        return Ok((lo, acc_lo, evals));
    }
    let acc_hi = feval(hi, &mut evals)?;
    if (acc_hi - target).abs() <= tolerance {
        return Ok((hi, acc_hi, evals));
    }
    if !(acc_lo >= target && target >= acc_hi) {
        return Err(CorruptionError::BracketViolation {
            target,
            acc_lo,
            acc_hi,
            lo,
            hi,
        }
        .into());
    }
    let (mut lo, mut hi) = (lo, hi);
    let mut best = (lo, acc_lo);
    while evals < max_evals {
        let mid = 0.5 * (lo + hi);
        let acc = feval(mid, &mut evals)?;
        if (acc - target).abs() < (best.1 - target).abs() {
            best = (mid, acc);
        }
        if (acc - target).abs() <= tolerance {
            return Ok((mid, acc, evals));
        }
        if acc > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((best.0, best.1, evals))
}

/// Bisect the kind's intensity until the reference model's accuracy on the
/// corrupted eval subset is within `tolerance` of `target_accuracy` (or the
/// evaluation budget runs out). Requires at least 1000 eval samples and a
/// monotone bracket.
pub fn calibrate_severity<F: Scalar>(
    kind: CorruptionKind,
    target_accuracy: f64,
    reference_model: &Model<F>,
    eval_subset: &Dataset<F>,
    search: (f64, f64),
    tolerance: f64,
    seed: u64,
) -> Result<CalibrationResult> {
    if eval_subset.len() < 1000 {
        return Err(Error::Invalid(format!(
            "calibration needs >= 1000 eval samples, got {}",
            eval_subset.len()
        )));
    }
    let (intensity, achieved, evaluations) = bisect_intensity(
        |t| {
            let spec = CorruptionSpec::from_intensity(kind, t);
            let corrupted = corrupt_dataset(eval_subset, &spec, seed)?;
            reference_model.accuracy(&corrupted)
        },
        target_accuracy,
        search,
        tolerance,
        20,
    )?;
    Ok(CalibrationResult {
        kind,
        intensity,
        achieved_accuracy: achieved,
        target_accuracy,
        evaluations,
    })
}

// ── Reporting ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct CorruptionAccuracyRow {
    pub kind: CorruptionKind,
    pub severity: Option<u8>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorruptionReport {
    pub rows: Vec<CorruptionAccuracyRow>,
    pub mean_accuracy: f64,
}

/// Per-(kind, severity) accuracy plus the grand mean over all sets.
pub fn mean_corruption_accuracy<F: Scalar>(
    model: &Model<F>,
    sets: &[CorruptedSet<F>],
) -> Result<CorruptionReport> {
    if sets.is_empty() {
        return Err(DataError::Empty.into());
    }
    let mut rows = Vec::with_capacity(sets.len());
    let mut total = 0.0;
    for set in sets {
        let accuracy = model.accuracy(&set.dataset)?;
        total += accuracy;
        rows.push(CorruptionAccuracyRow {
            kind: set.spec.kind,
            severity: set.spec.severity_label,
            accuracy,
        });
    }
    Ok(CorruptionReport {
        mean_accuracy: total / sets.len() as f64,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn test_image() -> Tensor<f64> {
        Tensor::from_fn(&[1, 12, 12], |i| ((i * 37) % 83) as f64 / 83.0 * 0.8 + 0.1)
    }

    fn seeded() -> impl Rng {
        substream(7, &[tags::CORRUPT, 99])
    }

    #[test]
    fn neutral_parameters_are_exact_identities() {
        let img = test_image();
        let neutral = [
            CorruptionSpec::from_intensity(CorruptionKind::GaussianNoise, 0.0),
            CorruptionSpec::from_intensity(CorruptionKind::ShotNoise, 0.0),
            CorruptionSpec::from_intensity(CorruptionKind::ImpulseNoise, 0.0),
            CorruptionSpec::from_intensity(CorruptionKind::DefocusBlur, 0.0),
            CorruptionSpec::from_intensity(CorruptionKind::MotionBlur, 0.0),
            CorruptionSpec::from_intensity(CorruptionKind::ZoomBlur, 0.0),
            CorruptionSpec::from_intensity(CorruptionKind::Contrast, 0.0),
            CorruptionSpec::from_intensity(CorruptionKind::Brightness, 0.0),
            CorruptionSpec::from_intensity(CorruptionKind::Pixelate, 0.0),
        ];
        for spec in &neutral {
            let out = corrupt(&img, spec, &mut seeded()).unwrap();
            assert_eq!(
                out.data(),
                img.data(),
                "{} with neutral params is not the identity",
                spec.kind.name()
            );
        }
    }

    #[test]
    fn unknown_kind_and_bad_params_are_rejected() {
        assert!(CorruptionKind::parse("glass_blur").is_err());
        let img = test_image();
        let spec = CorruptionSpec::new(CorruptionKind::GaussianNoise, &[("sigma", -0.1)]);
        assert!(corrupt(&img, &spec, &mut seeded()).is_err());
        let spec = CorruptionSpec::new(CorruptionKind::GaussianNoise, &[]);
        assert!(matches!(
            corrupt(&img, &spec, &mut seeded()),
            Err(Error::Corruption(CorruptionError::MissingParam { .. }))
        ));
    }

    #[test]
    fn blur_kernels_preserve_constant_images() {
        let img = Tensor::<f64>::full(&[1, 9, 9], 0.6);
        for spec in [
            CorruptionSpec::from_intensity(CorruptionKind::DefocusBlur, 2.3),
            CorruptionSpec::from_intensity(CorruptionKind::MotionBlur, 5.0),
            CorruptionSpec::from_intensity(CorruptionKind::ZoomBlur, 0.3),
        ] {
            let out = corrupt(&img, &spec, &mut seeded()).unwrap();
            for &v in out.data() {
                assert!((v - 0.6).abs() < 1e-6, "{}: {v}", spec.kind.name());
            }
        }
    }

    #[test]
    fn impulse_noise_flips_binomial_fraction() {
        // flip_prob 0.25 on a 28x28 mid-gray image over 100 trials: the
        // changed-pixel fraction stays within 3σ of 0.25.
        let img = Tensor::<f64>::full(&[1, 28, 28], 0.5);
        let spec = CorruptionSpec::new(CorruptionKind::ImpulseNoise, &[("flip_prob", 0.25)]);
        let mut changed = 0usize;
        let trials = 100;
        for t in 0..trials {
            let mut r = substream(3, &[tags::CORRUPT, t]);
            let out = corrupt(&img, &spec, &mut r).unwrap();
            changed += out.data().iter().filter(|&&v| v != 0.5).count();
        }
        let n = (trials as usize * 28 * 28) as f64;
        let frac = changed as f64 / n;
        let sigma = (0.25 * 0.75 / n).sqrt();
        assert!(
            (frac - 0.25).abs() < 3.0 * sigma,
            "fraction {frac}, tolerance {}",
            3.0 * sigma
        );
    }

    #[test]
    fn corruption_is_reproducible_from_seed_and_spec() {
        let ds = Dataset::new(
            Tensor::<f32>::from_fn(&[6, 1, 10, 10], |i| ((i * 11) % 23) as f32 / 23.0),
            vec![0, 1, 2, 0, 1, 2],
            3,
        )
        .unwrap();
        let spec = default_spec(CorruptionKind::GaussianNoise, 3);
        let a = corrupt_dataset(&ds, &spec, 42).unwrap();
        let b = corrupt_dataset(&ds, &spec, 42).unwrap();
        let c = corrupt_dataset(&ds, &spec, 43).unwrap();
        assert_eq!(a.images.data(), b.images.data());
        assert_ne!(a.images.data(), c.images.data());
    }

    #[test]
    fn nine_kinds_five_severities_gives_45_sets() {
        let ds = Dataset::new(
            Tensor::<f32>::from_fn(&[4, 1, 8, 8], |i| (i % 5) as f32 / 5.0),
            vec![0, 1, 0, 1],
            2,
        )
        .unwrap();
        let specs: Vec<CorruptionSpec> = ALL_KINDS
            .iter()
            .flat_map(|&k| (1..=5).map(move |s| default_spec(k, s)))
            .collect();
        let sets = build_corrupted_set(&ds, &specs, 1, None).unwrap();
        assert_eq!(sets.len(), 45);
        for s in &sets {
            assert_eq!(s.dataset.len(), 4);
        }
    }

    #[test]
    fn manifest_regenerates_bit_identical_sets() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(
            Tensor::<f32>::from_fn(&[5, 1, 9, 9], |i| ((i * 7) % 19) as f32 / 19.0),
            vec![0, 1, 2, 1, 0],
            3,
        )
        .unwrap();
        let specs = vec![default_spec(CorruptionKind::ImpulseNoise, 2)];
        build_corrupted_set(&ds, &specs, 77, Some(dir.path())).unwrap();

        let manifest: CorruptionManifest = serde_json::from_slice(
            &std::fs::read(dir.path().join("impulse_noise-s2.manifest.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(manifest.source_digest, ds.digest());
        let spec = CorruptionSpec {
            kind: manifest.kind,
            params: manifest.params.clone(),
            severity_label: manifest.severity,
        };
        let regen = corrupt_dataset(&ds, &spec, manifest.seed).unwrap();
        let regen_bytes = idx_image_bytes(&regen.images);
        let file_bytes = std::fs::read(dir.path().join("impulse_noise-s2-images.idx")).unwrap();
        assert_eq!(regen_bytes, file_bytes);
    }

    #[test]
    fn bisection_converges_on_synthetic_monotone_curve() {
        // acc(t) = 0.95·exp(-3t): smooth, decreasing.
        let (t, acc, evals) = bisect_intensity(
            |t| Ok(0.95 * (-3.0 * t).exp()),
            0.70,
            (0.0, 1.0),
            0.02,
            20,
        )
        .unwrap();
        assert!(evals <= 20);
        assert!((acc - 0.70).abs() <= 0.02, "acc {acc} at t={t}");
    }

    #[test]
    fn bisection_fixed_point_returns_neutral_intensity() {
        // Target equals the clean accuracy and the bracket starts neutral.
        let clean = 0.93;
        let (t, acc, _) = bisect_intensity(
            |t| Ok(clean * (-2.0 * t).exp()),
            clean,
            (0.0, 1.0),
            0.02,
            20,
        )
        .unwrap();
        assert_eq!(t, 0.0);
        assert_eq!(acc, clean);
    }

    #[test]
    fn bracket_violation_is_reported() {
        let err = bisect_intensity(|_| Ok(0.5), 0.9, (0.0, 1.0), 0.02, 20).unwrap_err();
        assert!(matches!(
            err,
            Error::Corruption(CorruptionError::BracketViolation { .. })
        ));
    }

    #[test]
    fn anchors_must_strictly_decrease() {
        assert!(CalibrationTarget::c10_like().validate().is_ok());
        assert!(CalibrationTarget::c100_like().validate().is_ok());
        let bad = CalibrationTarget {
            anchors: [(1, 0.5), (2, 0.5)].into_iter().collect(),
            tolerance: 0.02,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn identity_specs_keep_model_accuracy() {
        // mean_corruption_accuracy over all-neutral corruptions equals the
        // clean accuracy; a perfect single-set report equals that accuracy.
        let model: Model<f32> = crate::models::build_model("in=1x8x8;flatten;dense(64,3)", 1).unwrap();
        let ds = Dataset::new(
            Tensor::<f32>::from_fn(&[30, 1, 8, 8], |i| ((i * 13) % 31) as f32 / 31.0),
            (0..30).map(|i| i % 3).collect(),
            3,
        )
        .unwrap();
        let clean = model.accuracy(&ds).unwrap();
        let specs = vec![
            CorruptionSpec::from_intensity(CorruptionKind::GaussianNoise, 0.0).with_severity(1),
            CorruptionSpec::from_intensity(CorruptionKind::Contrast, 0.0).with_severity(1),
        ];
        let sets = build_corrupted_set(&ds, &specs, 5, None).unwrap();
        let report = mean_corruption_accuracy(&model, &sets).unwrap();
        assert_eq!(report.mean_accuracy, clean);
        for row in &report.rows {
            assert_eq!(row.accuracy, clean);
        }
    }
}
