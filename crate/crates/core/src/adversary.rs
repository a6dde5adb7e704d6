//! PGD attack generation and robust-accuracy evaluation.
//!
//! The attack iterates signed-gradient ascent steps on the cross-entropy of
//! the hard labels, projecting into the L∞ ε-ball around the clean input and
//! clamping to [0,1] after every step. With `random_start` disabled the
//! attack is bit-reproducible.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ExprGraph, Tensor};
use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::models::{cross_entropy_per_sample, Model};
use crate::rng::{self, tags};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// L∞ budget in pixel units (4/255 ≈ 0.01569).
    pub eps: f64,
    pub steps: usize,
    /// Defaults to eps/8 when absent.
    pub step_size: Option<f64>,
    /// Start from a uniform point in the ε-ball instead of the clean input.
    pub random_start: bool,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            eps: 8.0 / 255.0,
            steps: 20,
            step_size: None,
            random_start: false,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn step_size(&self) -> f64 {
        self.step_size.unwrap_or(self.eps / 8.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps < 0.0 {
            return Err(Error::Invalid(format!("eps {} must be >= 0", self.eps)));
        }
        if self.steps == 0 {
            return Err(Error::Invalid("steps must be >= 1".into()));
        }
        if self.eps > 0.0 && self.step_size() <= 0.0 {
            return Err(Error::Invalid("step_size must be > 0".into()));
        }
        Ok(())
    }
}

fn hard_label_tensor<F: Scalar>(batch: &Batch<F>) -> Tensor<F> {
    let k = batch.num_classes();
    let hard = batch.hard_labels();
    let mut labels = Tensor::zeros(&[batch.len(), k]);
    for (i, &l) in hard.iter().enumerate() {
        labels.data_mut()[i * k + l] = F::one();
    }
    labels
}

/// Like [`pgd_attack`], invoking `observer(iteration, current_images)` after
/// every projection so tests can assert the ball/clamp contract per step.
pub fn pgd_attack_observed<F: Scalar>(
    model: &Model<F>,
    batch: &Batch<F>,
    cfg: &AttackConfig,
    mut observer: impl FnMut(usize, &Tensor<F>),
) -> Result<Batch<F>> {
    cfg.validate()?;
    if cfg.eps == 0.0 {
        return Ok(batch.clone());
    }
    let eps = F::of(cfg.eps);
    let step = F::of(cfg.step_size());
    let x0 = batch.images().clone();
    let labels = hard_label_tensor(batch);
    let mut x = x0.clone();
    if cfg.random_start {
        // Per-sample substreams keep results independent of batch grouping.
        let [c, h, w] = batch.image_shape();
        let stride = c * h * w;
        for i in 0..batch.len() {
            let mut r = rng::substream(cfg.seed, &[tags::ATTACK, i as u64]);
            for v in x.data_mut()[i * stride..(i + 1) * stride].iter_mut() {
                let d = F::of(r.gen_range(-cfg.eps..=cfg.eps));
                *v = (*v + d).min(F::one()).max(F::zero());
            }
        }
    }
    for iter in 0..cfg.steps {
        let mut g = ExprGraph::new();
        let params = model.attach_frozen(&mut g);
        let input = g.input("x", x.clone(), true);
        let y = g.constant(labels.clone());
        let logits = model.forward_on(&mut g, &params, input)?;
        let per = cross_entropy_per_sample(&mut g, logits, y)?;
        let total = g.sum(per)?;
        let grad = g.grad(total, &[input], false)?[0];
        let grad = g.eval(grad)?;
        for ((xv, &x0v), &gv) in x
            .data_mut()
            .iter_mut()
            .zip(x0.data())
            .zip(grad.data())
        {
            let sign = if gv > F::zero() {
                F::one()
            } else if gv < F::zero() {
                -F::one()
            } else {
                F::zero()
            };
            let stepped = *xv + step * sign;
            // Project into the ε-ball, then clamp to pixel range.
            let lo = x0v - eps;
            let hi = x0v + eps;
            let projected = stepped.min(hi).max(lo);
            *xv = projected.min(F::one()).max(F::zero());
        }
        observer(iter, &x);
    }
    batch.replace_images(x)
}

/// PGD with an L∞ budget: x ← clamp₍₀,₁₎(Π_{‖·−x₀‖∞≤ε}(x + α·sign(∇ₓℓ))).
/// Labels pass through unchanged.
pub fn pgd_attack<F: Scalar>(model: &Model<F>, batch: &Batch<F>, cfg: &AttackConfig) -> Result<Batch<F>> {
    pgd_attack_observed(model, batch, cfg, |_, _| {})
}

/// Fraction of dataset samples whose argmax prediction under attack equals
/// the true class (ties broken by the lowest class index).
pub fn robust_accuracy<F: Scalar>(
    model: &Model<F>,
    dataset: &Dataset<F>,
    cfg: &AttackConfig,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(crate::error::DataError::Empty.into());
    }
    let chunk = 256usize;
    let mut correct = 0usize;
    let mut start = 0usize;
    while start < dataset.len() {
        let end = (start + chunk).min(dataset.len());
        let idx: Vec<usize> = (start..end).collect();
        let batch = dataset.batch(&idx);
        let adv = pgd_attack(model, &batch, cfg)?;
        let preds = model.predict(adv.images())?;
        correct += preds
            .iter()
            .zip(&dataset.labels[start..end])
            .filter(|(p, l)| p == l)
            .count();
        start = end;
    }
    Ok(correct as f64 / dataset.len() as f64)
}
