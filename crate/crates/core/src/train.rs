//! The training loop: per epoch, shuffle; per minibatch, augment, assemble
//! the total loss (classification + consistency terms + ρ·variation
//! penalty), and update parameters with Nesterov SGD under a per-step cosine
//! learning-rate schedule. Deterministic given (config, seed).

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmixConfig, MixupConfig, NoisymixConfig};
use crate::autodiff::{ExprGraph, Tensor};
use crate::data::{digits, load_cifar_binary, load_idx, Batch, Dataset};
use crate::error::{Error, GraphError, Result, TrainError};
use crate::models::{build_model, cross_entropy_node, cross_entropy_per_sample, Model};
use crate::rng::{self, tags};
use crate::robust::{penalty_node, RobustLossConfig};
use crate::scalar::Scalar;

// ── Configuration ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "snake_case")]
pub enum Augmentation {
    None,
    Mixup(MixupConfig),
    Augmix(AugmixConfig),
    Noisymix(NoisymixConfig),
}

impl Default for Augmentation {
    fn default() -> Self {
        Augmentation::None
    }
}

impl Augmentation {
    pub fn name(&self) -> &'static str {
        match self {
            Augmentation::None => "none",
            Augmentation::Mixup(_) => "mixup",
            Augmentation::Augmix(_) => "augmix",
            Augmentation::Noisymix(_) => "noisymix",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    /// Paired IDX files (MNIST layout), with optional held-out test pair.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
    },
    /// CIFAR binary records.
    CifarBinary {
        train: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
    },
    /// Deterministic expansion of the bundled digit corpus.
    SynthDigits {
        train_count: usize,
        test_count: usize,
        #[serde(default = "default_side")]
        side: usize,
        #[serde(default = "default_jitter")]
        jitter: f64,
        #[serde(default = "default_noise_std")]
        noise_std: f64,
    },
}

fn default_side() -> usize {
    28
}

fn default_jitter() -> f64 {
    1.0
}

fn default_noise_std() -> f64 {
    0.08
}

impl DataSource {
    pub fn load<F: Scalar>(&self, seed: u64) -> Result<(Dataset<F>, Option<Dataset<F>>)> {
        match self {
            DataSource::Idx {
                images,
                labels,
                test_images,
                test_labels,
            } => {
                let train = load_idx(images, labels)?;
                let test = match (test_images, test_labels) {
                    (Some(i), Some(l)) => Some(load_idx(i, l)?),
                    _ => None,
                };
                Ok((train, test))
            }
            DataSource::CifarBinary { train, test } => {
                let tr = load_cifar_binary(train)?;
                let te = test.as_ref().map(load_cifar_binary).transpose()?;
                Ok((tr, te))
            }
            DataSource::SynthDigits {
                train_count,
                test_count,
                side,
                jitter,
                noise_std,
            } => {
                let mk = |count: usize, tag: u64| {
                    digits::synth_digits(
                        &digits::DigitSynthConfig {
                            count,
                            side: *side,
                            jitter: *jitter,
                            noise_std: *noise_std,
                            ..Default::default()
                        },
                        rng::derive_seed(seed, &[tags::DATA, tag]),
                    )
                };
                Ok((mk(*train_count, 1)?, Some(mk(*test_count, 2)?)))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Architecture descriptor or preset (see [`build_model`]).
    pub model: String,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr_init")]
    pub lr_init: f64,
    #[serde(default = "default_lr_min")]
    pub lr_min: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub augmentation: Augmentation,
    #[serde(default)]
    pub robust: RobustLossConfig,
    #[serde(default)]
    pub seed: u64,
    pub data: DataSource,
    /// Optional cap on training samples (desk-scale subsets).
    #[serde(default)]
    pub train_limit: Option<usize>,
    /// Optional cap on held-out evaluation samples.
    #[serde(default)]
    pub eval_limit: Option<usize>,
}

fn default_batch_size() -> usize {
    128
}
fn default_lr_init() -> f64 {
    0.1
}
fn default_lr_min() -> f64 {
    1e-5
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    5e-4
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()).into());
        }
        if self.lr_min > self.lr_init {
            return Err(TrainError::InvalidConfig(format!(
                "lr_min {} exceeds lr_init {}",
                self.lr_min, self.lr_init
            ))
            .into());
        }
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be >= 1".into()).into());
        }
        self.robust.validate()
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(json)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

// ── Schedule and optimizer ───────────────────────────────────────────────

/// Cosine annealing: lr_min + ½(lr_init − lr_min)(1 + cos(π·step/total)).
/// The endpoints are pinned to lr_init and lr_min exactly.
pub fn cosine_lr(step: usize, total_steps: usize, lr_init: f64, lr_min: f64) -> f64 {
    assert!(step <= total_steps, "step {step} beyond total {total_steps}");
    if step == 0 || total_steps == 0 {
        return lr_init;
    }
    if step == total_steps {
        return lr_min;
    }
    let w = 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos());
    lr_min + (lr_init - lr_min) * w
}

/// One Nesterov update over a parameter set:
/// g ← grad + wd·p;  v ← μ·v + g;  p ← p − lr·(g + μ·v).
pub fn sgd_nesterov_step<F: Scalar>(
    params: &mut [(String, Tensor<F>)],
    grads: &[Tensor<F>],
    velocity: &mut [Tensor<F>],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Invalid(format!(
            "optimizer state mismatch: {} params, {} grads, {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    let lr = F::of(lr);
    let mu = F::of(momentum);
    let wd = F::of(weight_decay);
    for (((_, p), dp), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        if p.shape() != dp.shape() {
            return Err(GraphError::ShapeMismatch {
                op: "sgd_step",
                lhs: p.shape().to_vec(),
                rhs: dp.shape().to_vec(),
            }
            .into());
        }
        for ((pv, &gv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(dp.data())
            .zip(v.data_mut().iter_mut())
        {
            if !gv.is_finite() {
                return Err(GraphError::NonFinite {
                    op: "sgd_step",
                    node: 0,
                }
                .into());
            }
            let g = gv + wd * *pv;
            *vv = mu * *vv + g;
            *pv = *pv - lr * (g + mu * *vv);
        }
    }
    Ok(())
}

// ── Metrics ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub penalty: f64,
    pub clean_accuracy: Option<f64>,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackMetrics {
    pub eps: f64,
    pub steps: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionMetrics {
    pub kind: String,
    pub severity: u8,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsReport {
    pub epochs: Vec<EpochMetrics>,
    pub final_clean_accuracy: Option<f64>,
    pub attacks: Vec<AttackMetrics>,
    pub corruptions: Vec<CorruptionMetrics>,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        let ok = |a: f64| (0.0..=1.0).contains(&a);
        for e in &self.epochs {
            if let Some(a) = e.clean_accuracy {
                if !ok(a) {
                    return Err(Error::Invalid(format!("accuracy {a} outside [0,1]")));
                }
            }
        }
        if self
            .attacks
            .iter()
            .map(|a| a.accuracy)
            .chain(self.corruptions.iter().map(|c| c.accuracy))
            .chain(self.final_clean_accuracy)
            .any(|a| !ok(a))
        {
            return Err(Error::Invalid("accuracy outside [0,1]".into()));
        }
        Ok(())
    }
}

// ── Hooks ────────────────────────────────────────────────────────────────

/// Snapshot of one training step, delivered before the parameter update.
pub struct BatchEvent<'a, F: Scalar> {
    pub epoch: usize,
    pub batch_index: usize,
    /// Model with the parameters the loss was computed at.
    pub model: &'a Model<F>,
    /// The augmented batch that entered the classification loss and penalty.
    pub batch: &'a Batch<F>,
    /// True when augmentation ran before the loss for this batch.
    pub augmented_before_loss: bool,
    pub ce: f64,
    pub penalty: Option<f64>,
}

type BatchHook<'h, F> = Box<dyn FnMut(&BatchEvent<'_, F>) + 'h>;

#[derive(Default)]
pub struct TrainHooks<'h, F: Scalar> {
    pub on_batch: Option<BatchHook<'h, F>>,
}

// ── The loop ─────────────────────────────────────────────────────────────

/// Expand a bare preset name with the dataset's shape and class count.
pub fn resolve_model_spec(spec: &str, shape: [usize; 3], classes: usize) -> String {
    if spec.starts_with("in=") || spec.contains('(') {
        return spec.to_string();
    }
    format!(
        "{spec}({}x{}x{}->{classes})",
        shape[0], shape[1], shape[2]
    )
}

pub fn train<F: Scalar>(cfg: &TrainConfig) -> Result<(Model<F>, MetricsReport)> {
    train_with_hooks(cfg, &mut TrainHooks::default())
}

pub fn train_with_hooks<F: Scalar>(
    cfg: &TrainConfig,
    hooks: &mut TrainHooks<'_, F>,
) -> Result<(Model<F>, MetricsReport)> {
    cfg.validate()?;
    let (mut train_set, test_set): (Dataset<F>, Option<Dataset<F>>) = cfg.data.load(cfg.seed)?;
    if let Some(limit) = cfg.train_limit {
        train_set = train_set.take(limit);
    }
    let test_set = match (test_set, cfg.eval_limit) {
        (Some(t), Some(limit)) => Some(t.take(limit)),
        (t, _) => t,
    };
    if train_set.len() < cfg.batch_size.max(2) {
        return Err(TrainError::InvalidConfig(format!(
            "training set of {} is smaller than one batch",
            train_set.len()
        ))
        .into());
    }
    let spec = resolve_model_spec(&cfg.model, train_set.image_shape(), train_set.classes);
    let mut model: Model<F> = build_model(&spec, cfg.seed)?;
    train_on(cfg, &mut model, &train_set, test_set.as_ref(), hooks).map(|r| (model, r))
}

/// Run the loop against an already-built model and datasets.
pub fn train_on<F: Scalar>(
    cfg: &TrainConfig,
    model: &mut Model<F>,
    train_set: &Dataset<F>,
    test_set: Option<&Dataset<F>>,
    hooks: &mut TrainHooks<'_, F>,
) -> Result<MetricsReport> {
    use rand::seq::SliceRandom;
    cfg.validate()?;
    let batches_per_epoch = train_set.len() / cfg.batch_size;
    if batches_per_epoch == 0 {
        return Err(TrainError::InvalidConfig(
            "batch_size exceeds the training set".into(),
        )
        .into());
    }
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut velocity: Vec<Tensor<F>> = model
        .params()
        .iter()
        .map(|(_, t)| Tensor::zeros(t.shape()))
        .collect();
    let mut report = MetricsReport::default();
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng::substream(cfg.seed, &[tags::SHUFFLE, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut penalty_sum = 0.0;

        for b in 0..batches_per_epoch {
            let idx = &order[b * cfg.batch_size..(b + 1) * cfg.batch_size];
            let raw = train_set.batch(idx);
            let outcome = run_batch(cfg, model, &raw, epoch, b, hooks).map_err(|e| match e {
                Error::Graph(GraphError::NonFinite { .. }) => {
                    Error::Train(TrainError::NonFiniteLoss {
                        epoch,
                        batch: b,
                        penalty: penalty_sum / (b.max(1) as f64),
                    })
                }
                other => other,
            })?;
            loss_sum += outcome.total;
            penalty_sum += outcome.penalty.unwrap_or(0.0);

            let lr = cosine_lr(step, total_steps, cfg.lr_init, cfg.lr_min);
            sgd_nesterov_step(
                model.params_mut(),
                &outcome.grads,
                &mut velocity,
                lr,
                cfg.momentum,
                cfg.weight_decay,
            )?;
            step += 1;
        }

        let clean_accuracy = test_set.map(|t| model.accuracy(t)).transpose()?;
        report.epochs.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / batches_per_epoch as f64,
            penalty: penalty_sum / batches_per_epoch as f64,
            clean_accuracy,
            wall_secs: t0.elapsed().as_secs_f64(),
        });
    }
    report.final_clean_accuracy = report.epochs.last().and_then(|e| e.clean_accuracy);
    Ok(report)
}

struct BatchOutcome<F: Scalar> {
    total: f64,
    penalty: Option<f64>,
    grads: Vec<Tensor<F>>,
}

fn run_batch<F: Scalar>(
    cfg: &TrainConfig,
    model: &Model<F>,
    raw: &Batch<F>,
    epoch: usize,
    batch_index: usize,
    hooks: &mut TrainHooks<'_, F>,
) -> Result<BatchOutcome<F>> {
    let mut aug_rng = rng::substream(cfg.seed, &[tags::AUGMENT, epoch as u64, batch_index as u64]);

    // Algorithm order: augment first, then the total loss on the augmented
    // batch (the penalty sees the same batch the classification loss sees).
    enum Prepared<F: Scalar> {
        Plain(Batch<F>),
        WithViews {
            primary: Batch<F>,
            clean: Batch<F>,
            second: Batch<F>,
            jsd_weight: f64,
        },
        WithTwin {
            noisy: Batch<F>,
            clean: Batch<F>,
            stability_weight: f64,
        },
    }

    let prepared = match &cfg.augmentation {
        Augmentation::None => Prepared::Plain(raw.clone()),
        Augmentation::Mixup(mc) => Prepared::Plain(augment::mixup(raw, mc, &mut aug_rng)?),
        Augmentation::Augmix(ac) => {
            let primary = augment::augmix_batch(raw, ac, &mut aug_rng)?;
            if ac.jsd_weight > 0.0 {
                let second = augment::augmix_batch(raw, ac, &mut aug_rng)?;
                Prepared::WithViews {
                    primary,
                    clean: raw.clone(),
                    second,
                    jsd_weight: ac.jsd_weight,
                }
            } else {
                Prepared::Plain(primary)
            }
        }
        Augmentation::Noisymix(nc) => {
            let (noisy, clean) = augment::noisymix(raw, nc, &mut aug_rng)?;
            if nc.stability_weight > 0.0 {
                Prepared::WithTwin {
                    noisy,
                    clean,
                    stability_weight: nc.stability_weight,
                }
            } else {
                Prepared::Plain(noisy)
            }
        }
    };

    let mut g: ExprGraph<F> = ExprGraph::new();
    let param_ids = model.attach(&mut g);
    let needs_input_grad = cfg.robust.rho > 0.0;

    // Primary classification batch.
    let primary_batch = match &prepared {
        Prepared::Plain(b) => b,
        Prepared::WithViews { primary, .. } => primary,
        Prepared::WithTwin { noisy, .. } => noisy,
    };
    let input = g.input("batch_images", primary_batch.images().clone(), needs_input_grad);
    let labels = g.constant(primary_batch.labels().clone());
    let logits = model.forward_on(&mut g, &param_ids, input)?;
    let ce = cross_entropy_node(&mut g, logits, labels)?;

    let mut total = ce;
    match &prepared {
        Prepared::Plain(_) => {}
        Prepared::WithViews {
            clean,
            second,
            jsd_weight,
            ..
        } => {
            let x_clean = g.input("clean_images", clean.images().clone(), false);
            let z_clean = model.forward_on(&mut g, &param_ids, x_clean)?;
            let p_clean = g.softmax(z_clean, 1)?;
            let x2 = g.input("second_images", second.images().clone(), false);
            let z2 = model.forward_on(&mut g, &param_ids, x2)?;
            let p2 = g.softmax(z2, 1)?;
            let p1 = g.softmax(logits, 1)?;
            let jsd = augment::jsd_loss_node(&mut g, p_clean, p1, p2)?;
            let weighted = g.mul_scalar(jsd, F::of(*jsd_weight))?;
            total = g.add(total, weighted)?;
        }
        Prepared::WithTwin {
            clean,
            stability_weight,
            ..
        } => {
            // Stability term: KL(p_clean ‖ p_noisy), mean over the batch.
            let x_clean = g.input("clean_images", clean.images().clone(), false);
            let z_clean = model.forward_on(&mut g, &param_ids, x_clean)?;
            let lp_clean = g.log_softmax(z_clean, 1)?;
            let p_clean = g.exp(lp_clean)?;
            let lp_noisy = g.log_softmax(logits, 1)?;
            let diff = g.sub(lp_clean, lp_noisy)?;
            let w = g.mul(p_clean, diff)?;
            let s = g.sum(w)?;
            let n = primary_batch.len();
            let kl = g.mul_scalar(s, F::one() / F::of(n as f64))?;
            let weighted = g.mul_scalar(kl, F::of(*stability_weight))?;
            total = g.add(total, weighted)?;
        }
    }

    let penalty_id = if cfg.robust.rho > 0.0 {
        let labels2 = g.constant(primary_batch.labels().clone());
        let per = cross_entropy_per_sample(&mut g, logits, labels2)?;
        let pen = penalty_node(&mut g, per, input, &cfg.robust)?;
        let weighted = g.mul_scalar(pen, F::of(cfg.robust.rho))?;
        total = g.add(total, weighted)?;
        Some(pen)
    } else {
        None
    };

    let grad_ids = g.grad(total, &param_ids, false)?;
    let total_value = g.eval(total)?.item().as_f64();
    let ce_value = g.eval(ce)?.item().as_f64();
    let penalty_value = match penalty_id {
        Some(id) => Some(g.eval(id)?.item().as_f64()),
        None => None,
    };
    let grads: Vec<Tensor<F>> = grad_ids
        .iter()
        .map(|&id| g.value(id).expect("gradient evaluated").clone())
        .collect();

    if let Some(hook) = hooks.on_batch.as_mut() {
        hook(&BatchEvent {
            epoch,
            batch_index,
            model,
            batch: primary_batch,
            augmented_before_loss: !matches!(cfg.augmentation, Augmentation::None),
            ce: ce_value,
            penalty: penalty_value,
        });
    }

    Ok(BatchOutcome {
        total: total_value,
        penalty: penalty_value,
        grads,
    })
}
