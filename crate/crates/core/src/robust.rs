//! The variation-regularized robust objective and its verification oracle.
//!
//! The surrogate risk is mean loss + ρ·((1/n)Σᵢ ‖∇ₓℓᵢ‖ᵈ^q)^{1/q}, where the
//! per-sample input gradients come out of a backward pass that stays
//! differentiable, so the parameter gradient of the penalty is computed by
//! differentiating through that backward pass (double backpropagation).
//!
//! `brute_force_wdro` evaluates the distributionally robust risk directly —
//! the per-sample supremum of the loss over a norm ball — by grid search in
//! low dimension or projected gradient ascent with restarts otherwise.
//! `approximation_gap_study` measures |oracle − surrogate| across ball radii
//! and fits the log-log slope of the gap.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ExprGraph, NodeId, Tensor};
use crate::data::Batch;
use crate::error::{Error, GraphError, Result, RobustError};
use crate::models::{cross_entropy_node, cross_entropy_per_sample, Model};
use crate::rng::{self, tags};
use crate::scalar::Scalar;

// ── Configuration ────────────────────────────────────────────────────────

/// Dual norm applied to per-sample input gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradNorm {
    L2,
    L1,
    Linf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustLossConfig {
    /// Penalty weight / ball radius ρ.
    pub rho: f64,
    /// Penalty exponent q ≥ 1 (dual to the transport cost exponent).
    pub q: f64,
    pub grad_norm: GradNorm,
    /// Norm smoothing: the l2 norm is not differentiable at 0 and saturated
    /// softmax rows do produce zero gradients, so norms are computed as
    /// √(‖g‖² + ε²) (soft-abs / soft-max analogues for l1/l∞).
    pub smooth_eps: f64,
}

impl Default for RobustLossConfig {
    fn default() -> Self {
        RobustLossConfig {
            rho: 0.05,
            q: 1.0,
            grad_norm: GradNorm::L2,
            smooth_eps: 1e-12,
        }
    }
}

impl RobustLossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rho < 0.0 {
            return Err(Error::Invalid(format!("rho {} must be >= 0", self.rho)));
        }
        if self.q < 1.0 {
            return Err(Error::Invalid(format!("q {} must be >= 1", self.q)));
        }
        if self.smooth_eps <= 0.0 {
            return Err(Error::Invalid("smooth_eps must be > 0".into()));
        }
        Ok(())
    }
}

// ── Graph-level builders ─────────────────────────────────────────────────

/// ∇ₓ of the summed per-sample losses, attached to the graph so it can be
/// differentiated again. Because every layer acts per sample, row i of the
/// result is exactly ∇_{xᵢ} ℓ(f(xᵢ), yᵢ).
pub fn input_gradient_node<F: Scalar>(
    g: &mut ExprGraph<F>,
    per_sample_loss: NodeId,
    input: NodeId,
) -> Result<NodeId, GraphError> {
    let total = g.sum(per_sample_loss)?;
    Ok(g.grad(total, &[input], true)?[0])
}

/// Smoothed per-sample dual norms of a gradient tensor, as a [N,1] node.
fn norm_rows<F: Scalar>(
    g: &mut ExprGraph<F>,
    grads: NodeId,
    cfg: &RobustLossConfig,
) -> Result<NodeId, GraphError> {
    let shape = g.shape(grads)?.to_vec();
    let n = shape[0];
    let d: usize = shape[1..].iter().product();
    let flat = g.reshape(grads, &[n, d])?;
    let eps = F::of(cfg.smooth_eps);
    let eps2 = eps * eps;
    match cfg.grad_norm {
        GradNorm::L2 => {
            let sq = g.mul(flat, flat)?;
            let ss = g.sum_axis(sq, 1)?;
            let shifted = g.add_scalar(ss, eps2)?;
            g.sqrt(shifted)
        }
        GradNorm::L1 => {
            let sq = g.mul(flat, flat)?;
            let shifted = g.add_scalar(sq, eps2)?;
            let soft_abs = g.sqrt(shifted)?;
            g.sum_axis(soft_abs, 1)
        }
        GradNorm::Linf => {
            // Smooth max via temperature-ε log-sum-exp of soft absolute
            // values; the LSE primitive is max-shifted internally.
            let sq = g.mul(flat, flat)?;
            let shifted = g.add_scalar(sq, eps2)?;
            let soft_abs = g.sqrt(shifted)?;
            let scaled = g.mul_scalar(soft_abs, F::one() / eps)?;
            let lse = g.logsumexp_axis(scaled, 1)?;
            g.mul_scalar(lse, eps)
        }
    }
}

/// ((1/n) Σᵢ ‖gᵢ‖ᵈ^q)^{1/q} as a scalar node.
pub fn penalty_from_gradient_node<F: Scalar>(
    g: &mut ExprGraph<F>,
    grads: NodeId,
    cfg: &RobustLossConfig,
) -> Result<NodeId, GraphError> {
    let n = g.shape(grads)?[0];
    let norms = norm_rows(g, grads, cfg)?;
    let inv_n = F::one() / F::of(n as f64);
    if (cfg.q - 1.0).abs() < 1e-12 {
        let s = g.sum(norms)?;
        return g.mul_scalar(s, inv_n);
    }
    let q = F::of(cfg.q);
    let powed = g.pow_scalar(norms, q)?;
    let s = g.sum(powed)?;
    let mean = g.mul_scalar(s, inv_n)?;
    g.pow_scalar(mean, F::one() / q)
}

/// Penalty node for an arbitrary per-sample loss: differentiable input
/// gradients followed by [`penalty_from_gradient_node`].
pub fn penalty_node<F: Scalar>(
    g: &mut ExprGraph<F>,
    per_sample_loss: NodeId,
    input: NodeId,
    cfg: &RobustLossConfig,
) -> Result<NodeId, GraphError> {
    let grads = input_gradient_node(g, per_sample_loss, input)?;
    penalty_from_gradient_node(g, grads, cfg)
}

/// The assembled robust objective on one batch.
pub struct RobustObjective {
    pub input: NodeId,
    pub logits: NodeId,
    pub ce: NodeId,
    /// None when ρ = 0: the total is then exactly the ERM node.
    pub penalty: Option<NodeId>,
    pub total: NodeId,
    pub param_ids: Vec<NodeId>,
}

/// Build mean cross-entropy + ρ·penalty for `batch`. With `trainable` the
/// parameters are differentiable leaves (the training path); otherwise they
/// are constants.
pub fn build_robust_objective<F: Scalar>(
    g: &mut ExprGraph<F>,
    model: &Model<F>,
    batch: &Batch<F>,
    cfg: &RobustLossConfig,
    trainable: bool,
) -> Result<RobustObjective> {
    cfg.validate()?;
    let param_ids = if trainable {
        model.attach(g)
    } else {
        model.attach_frozen(g)
    };
    let needs_input_grad = cfg.rho > 0.0;
    let input = g.input("batch_images", batch.images().clone(), needs_input_grad);
    let labels = g.constant(batch.labels().clone());
    let logits = model.forward_on(g, &param_ids, input)?;
    let ce = cross_entropy_node(g, logits, labels)?;
    if cfg.rho == 0.0 {
        return Ok(RobustObjective {
            input,
            logits,
            ce,
            penalty: None,
            total: ce,
            param_ids,
        });
    }
    let per = cross_entropy_per_sample(g, logits, labels)?;
    let penalty = penalty_node(g, per, input, cfg)?;
    let weighted = g.mul_scalar(penalty, F::of(cfg.rho))?;
    let total = g.add(ce, weighted)?;
    Ok(RobustObjective {
        input,
        logits,
        ce,
        penalty: Some(penalty),
        total,
        param_ids,
    })
}

// ── Tensor-level operations ──────────────────────────────────────────────

/// Per-sample input gradients ∇_{xᵢ} ℓ(f(xᵢ), yᵢ) as a [N,C,H,W] tensor.
pub fn per_sample_input_gradients<F: Scalar>(
    model: &Model<F>,
    batch: &Batch<F>,
) -> Result<Tensor<F>> {
    let mut g = ExprGraph::new();
    let param_ids = model.attach_frozen(&mut g);
    let input = g.input("batch_images", batch.images().clone(), true);
    let labels = g.constant(batch.labels().clone());
    let logits = model.forward_on(&mut g, &param_ids, input)?;
    let per = cross_entropy_per_sample(&mut g, logits, labels)?;
    let grads = input_gradient_node(&mut g, per, input)?;
    Ok(g.eval(grads)?.clone())
}

/// Value of the variation penalty ((1/n)Σ‖∇ₓℓᵢ‖ᵈ^q)^{1/q}.
pub fn variation_penalty<F: Scalar>(
    model: &Model<F>,
    batch: &Batch<F>,
    cfg: &RobustLossConfig,
) -> Result<F> {
    cfg.validate()?;
    let mut g = ExprGraph::new();
    let param_ids = model.attach_frozen(&mut g);
    let input = g.input("batch_images", batch.images().clone(), true);
    let labels = g.constant(batch.labels().clone());
    let logits = model.forward_on(&mut g, &param_ids, input)?;
    let per = cross_entropy_per_sample(&mut g, logits, labels)?;
    let pen = penalty_node(&mut g, per, input, cfg)?;
    Ok(g.eval(pen)?.item())
}

/// Value of mean cross-entropy + ρ·variation penalty.
pub fn robust_loss<F: Scalar>(model: &Model<F>, batch: &Batch<F>, cfg: &RobustLossConfig) -> Result<F> {
    let mut g = ExprGraph::new();
    let obj = build_robust_objective(&mut g, model, batch, cfg, false)?;
    Ok(g.eval(obj.total)?.item())
}

// ── Brute-force W-DRO oracle ─────────────────────────────────────────────

/// Ground-metric ball of the transport cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BallNorm {
    L2,
    Linf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    /// Exhaustive lattice over the ball; input dimension ≤ 3 only. For l2
    /// balls, lattice points outside the sphere are radially projected onto
    /// it, so the boundary is densely covered.
    Grid { points_per_dim: usize },
    /// Projected gradient ascent; reports the best value found (a lower
    /// bound on the true supremum).
    Ascent {
        steps: usize,
        step_size: f64,
        restarts: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WdroOracleConfig {
    pub rho: f64,
    pub ball_norm: BallNorm,
    pub method: OracleMethod,
    pub seed: u64,
}

impl WdroOracleConfig {
    /// Ascent defaults: step ρ/10, 100 steps, 20 restarts.
    pub fn ascent(rho: f64) -> Self {
        WdroOracleConfig {
            rho,
            ball_norm: BallNorm::L2,
            method: OracleMethod::Ascent {
                steps: 100,
                step_size: rho / 10.0,
                restarts: 20,
            },
            seed: 0,
        }
    }

    pub fn grid(rho: f64, points_per_dim: usize) -> Self {
        WdroOracleConfig {
            rho,
            ball_norm: BallNorm::Linf,
            method: OracleMethod::Grid { points_per_dim },
            seed: 0,
        }
    }
}

/// A per-sample loss landscape over input space. The oracle and the gap
/// study run against this interface so that closed-form test surfaces and
/// real models share one code path.
pub trait LossSurface<F: Scalar> {
    fn num_samples(&self) -> usize;
    /// The nominal input point xᵢ.
    fn point(&self, i: usize) -> Tensor<F>;
    fn loss(&self, i: usize, x: &Tensor<F>) -> Result<F>;
    /// (loss, input gradient) at x.
    fn loss_grad(&self, i: usize, x: &Tensor<F>) -> Result<(F, Tensor<F>)>;
}

/// Model + cross-entropy bound to a batch.
pub struct ModelSurface<'a, F: Scalar> {
    model: &'a Model<F>,
    batch: &'a Batch<F>,
}

impl<'a, F: Scalar> ModelSurface<'a, F> {
    pub fn new(model: &'a Model<F>, batch: &'a Batch<F>) -> Self {
        ModelSurface { model, batch }
    }

    fn build(&self, i: usize, x: &Tensor<F>, need_grad: bool) -> Result<(ExprGraph<F>, NodeId, NodeId)> {
        let [c, h, w] = self.batch.image_shape();
        let mut g = ExprGraph::new();
        let param_ids = self.model.attach_frozen(&mut g);
        let image = x.reshaped(&[1, c, h, w])?;
        let input = g.input("x", image, need_grad);
        let k = self.batch.num_classes();
        let label =
            Tensor::new(vec![1, k], self.batch.labels().data()[i * k..(i + 1) * k].to_vec())?;
        let labels = g.constant(label);
        let logits = self.model.forward_on(&mut g, &param_ids, input)?;
        let per = cross_entropy_per_sample(&mut g, logits, labels)?;
        let loss = g.sum(per)?;
        Ok((g, loss, input))
    }
}

impl<F: Scalar> LossSurface<F> for ModelSurface<'_, F> {
    fn num_samples(&self) -> usize {
        self.batch.len()
    }

    fn point(&self, i: usize) -> Tensor<F> {
        self.batch.image(i)
    }

    fn loss(&self, i: usize, x: &Tensor<F>) -> Result<F> {
        let (mut g, loss, _) = self.build(i, x, false)?;
        Ok(g.eval(loss)?.item())
    }

    fn loss_grad(&self, i: usize, x: &Tensor<F>) -> Result<(F, Tensor<F>)> {
        let (mut g, loss, input) = self.build(i, x, true)?;
        let grads = g.grad(loss, &[input], false)?;
        let value = g.eval(loss)?.item();
        let grad = g.eval(grads[0])?.reshaped(x.shape())?;
        Ok((value, grad))
    }
}

fn ball_norm_of<F: Scalar>(delta: &Tensor<F>, norm: BallNorm) -> f64 {
    match norm {
        BallNorm::L2 => delta.norm_l2().as_f64(),
        BallNorm::Linf => delta.norm_linf().as_f64(),
    }
}

fn project_ball<F: Scalar>(delta: &mut Tensor<F>, rho: f64, norm: BallNorm) {
    match norm {
        BallNorm::Linf => {
            let r = F::of(rho);
            for v in delta.data_mut() {
                if *v > r {
                    *v = r;
                } else if *v < -r {
                    *v = -r;
                }
            }
        }
        BallNorm::L2 => {
            let n = delta.norm_l2().as_f64();
            if n > rho {
                let s = F::of(rho / n);
                for v in delta.data_mut() {
                    *v *= s;
                }
            }
        }
    }
}

fn grid_sup<F: Scalar>(
    surface: &dyn LossSurface<F>,
    i: usize,
    cfg: &WdroOracleConfig,
    points: usize,
) -> Result<f64> {
    let x0 = surface.point(i);
    let dim = x0.numel();
    if dim > 3 {
        return Err(RobustError::GridDimension(dim).into());
    }
    let m = (points.max(3) - 1) / 2;
    let mut best = surface.loss(i, &x0)?.as_f64();
    let mut counters = vec![0usize; dim];
    let total = (2 * m + 1).pow(dim as u32);
    let mut delta = Tensor::zeros(x0.shape());
    for _ in 0..total {
        for (d, &ct) in counters.iter().enumerate() {
            // Exact endpoints: ρ·(k−m)/m hits ±ρ and 0 without drift.
            let t = (ct as f64 - m as f64) / m as f64;
            delta.data_mut()[d] = F::of(cfg.rho * t);
        }
        let mut inside = ball_norm_of(&delta, cfg.ball_norm) <= cfg.rho * (1.0 + 1e-12);
        if !inside && cfg.ball_norm == BallNorm::L2 {
            // Radial projection onto the sphere covers the l2 boundary.
            project_ball(&mut delta, cfg.rho, BallNorm::L2);
            inside = true;
        }
        if inside {
            let x = x0.zip_map(&delta, |a, b| a + b)?;
            let v = surface.loss(i, &x)?.as_f64();
            if v > best {
                best = v;
            }
        }
        for c in counters.iter_mut() {
            *c += 1;
            if *c <= 2 * m {
                break;
            }
            *c = 0;
        }
    }
    Ok(best)
}

fn ascent_sup<F: Scalar>(
    surface: &dyn LossSurface<F>,
    i: usize,
    cfg: &WdroOracleConfig,
    steps: usize,
    step_size: f64,
    restarts: usize,
) -> Result<f64> {
    use rand::Rng;
    let x0 = surface.point(i);
    let mut best = surface.loss(i, &x0)?.as_f64();
    for restart in 0..restarts.max(1) {
        let mut delta = Tensor::zeros(x0.shape());
        if restart > 0 {
            let mut r = rng::substream(cfg.seed, &[tags::ORACLE, i as u64, restart as u64]);
            for v in delta.data_mut() {
                *v = F::of(r.gen_range(-cfg.rho..=cfg.rho));
            }
            project_ball(&mut delta, cfg.rho, cfg.ball_norm);
        }
        for _ in 0..steps {
            let x = x0.zip_map(&delta, |a, b| a + b)?;
            let (value, grad) = surface.loss_grad(i, &x)?;
            if value.as_f64() > best {
                best = value.as_f64();
            }
            match cfg.ball_norm {
                BallNorm::Linf => {
                    let s = F::of(step_size);
                    for (d, &gv) in delta.data_mut().iter_mut().zip(grad.data()) {
                        let sign = if gv > F::zero() {
                            F::one()
                        } else if gv < F::zero() {
                            -F::one()
                        } else {
                            F::zero()
                        };
                        *d += s * sign;
                    }
                }
                BallNorm::L2 => {
                    let n = grad.norm_l2().as_f64();
                    if n == 0.0 {
                        break;
                    }
                    let s = F::of(step_size / n);
                    for (d, &gv) in delta.data_mut().iter_mut().zip(grad.data()) {
                        *d += s * gv;
                    }
                }
            }
            project_ball(&mut delta, cfg.rho, cfg.ball_norm);
        }
        let x = x0.zip_map(&delta, |a, b| a + b)?;
        let v = surface.loss(i, &x)?.as_f64();
        if v > best {
            best = v;
        }
    }
    Ok(best)
}

/// Mean over samples of the (approximate) supremum of the loss over the
/// ball ‖x − xᵢ‖ ≤ ρ. Grid results are exhaustive on the lattice; ascent
/// results are certified lower bounds on the true supremum.
pub fn wdro_oracle<F: Scalar>(surface: &dyn LossSurface<F>, cfg: &WdroOracleConfig) -> Result<f64> {
    if cfg.rho < 0.0 {
        return Err(Error::Invalid("oracle rho must be >= 0".into()));
    }
    let n = surface.num_samples();
    if n == 0 {
        return Err(crate::error::DataError::Empty.into());
    }
    let mut total = 0.0;
    for i in 0..n {
        let sup = match cfg.method {
            OracleMethod::Grid { points_per_dim } => grid_sup(surface, i, cfg, points_per_dim)?,
            OracleMethod::Ascent {
                steps,
                step_size,
                restarts,
            } => ascent_sup(surface, i, cfg, steps, step_size, restarts)?,
        };
        total += sup;
    }
    Ok(total / n as f64)
}

/// The spec'd model-level oracle: mean over the batch of the per-sample
/// worst-case cross-entropy.
pub fn brute_force_wdro<F: Scalar>(
    model: &Model<F>,
    batch: &Batch<F>,
    cfg: &WdroOracleConfig,
) -> Result<f64> {
    let surface = ModelSurface::new(model, batch);
    wdro_oracle(&surface, cfg)
}

// ── Approximation gap study ──────────────────────────────────────────────

/// Surrogate risk on a surface: mean loss + ρ·((1/n)Σ‖∇ℓᵢ‖^q)^{1/q} with the
/// same smoothed norms as the graph path.
pub fn surrogate_risk<F: Scalar>(
    surface: &dyn LossSurface<F>,
    rho: f64,
    cfg: &RobustLossConfig,
) -> Result<f64> {
    let n = surface.num_samples();
    let mut mean_loss = 0.0;
    let mut mean_norm_q = 0.0;
    let eps2 = cfg.smooth_eps * cfg.smooth_eps;
    for i in 0..n {
        let x0 = surface.point(i);
        let (loss, grad) = surface.loss_grad(i, &x0)?;
        mean_loss += loss.as_f64();
        let norm = match cfg.grad_norm {
            GradNorm::L2 => {
                let ss: f64 = grad.data().iter().map(|v| v.as_f64().powi(2)).sum();
                (ss + eps2).sqrt()
            }
            GradNorm::L1 => grad
                .data()
                .iter()
                .map(|v| (v.as_f64().powi(2) + eps2).sqrt())
                .sum(),
            GradNorm::Linf => {
                // Same temperature-ε smooth max as the graph path.
                let vals: Vec<f64> = grad
                    .data()
                    .iter()
                    .map(|v| (v.as_f64().powi(2) + eps2).sqrt())
                    .collect();
                let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = vals
                    .iter()
                    .map(|v| ((v - m) / cfg.smooth_eps).exp())
                    .sum();
                m + cfg.smooth_eps * s.ln()
            }
        };
        mean_norm_q += norm.powf(cfg.q);
    }
    mean_loss /= n as f64;
    mean_norm_q /= n as f64;
    Ok(mean_loss + rho * mean_norm_q.powf(1.0 / cfg.q))
}

#[derive(Debug, Clone, Serialize)]
pub struct GapRow {
    pub rho: f64,
    pub r_n: f64,
    pub d_oracle: f64,
    pub gap: f64,
    /// OLS slope of ln(gap) vs ln(rho) over the rows so far (NaN until two
    /// nonzero gaps are available).
    pub slope_running: f64,
}

fn ols_slope(points: &[(f64, f64)]) -> f64 {
    if points.len() < 2 {
        return f64::NAN;
    }
    let n = points.len() as f64;
    let mx: f64 = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my: f64 = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in points {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    if den == 0.0 {
        f64::NAN
    } else {
        num / den
    }
}

/// For each ρ: surrogate risk R_n, oracle value D, and gap = |D − R_n|,
/// plus the running log-log slope of the gap (≈2 on smooth landscapes).
pub fn gap_study_on<F: Scalar>(
    surface: &dyn LossSurface<F>,
    rhos: &[f64],
    robust_cfg: &RobustLossConfig,
    oracle_template: &WdroOracleConfig,
) -> Result<Vec<GapRow>> {
    if rhos.is_empty() || rhos.windows(2).any(|w| w[1] <= w[0]) || rhos[0] <= 0.0 {
        return Err(RobustError::BadRhos.into());
    }
    let mut rows = Vec::with_capacity(rhos.len());
    let mut log_points = Vec::new();
    for &rho in rhos {
        let mut ocfg = oracle_template.clone();
        ocfg.rho = rho;
        if let OracleMethod::Ascent {
            ref mut step_size, ..
        } = ocfg.method
        {
            *step_size = rho / 10.0;
        }
        let r_n = surrogate_risk(surface, rho, robust_cfg)?;
        let d_oracle = wdro_oracle(surface, &ocfg)?;
        let gap = (d_oracle - r_n).abs();
        if gap > 0.0 {
            log_points.push((rho.ln(), gap.ln()));
        }
        rows.push(GapRow {
            rho,
            r_n,
            d_oracle,
            gap,
            slope_running: ols_slope(&log_points),
        });
    }
    Ok(rows)
}

/// Model-level gap study over a batch.
pub fn approximation_gap_study<F: Scalar>(
    model: &Model<F>,
    batch: &Batch<F>,
    rhos: &[f64],
    robust_cfg: &RobustLossConfig,
    oracle_template: &WdroOracleConfig,
) -> Result<Vec<GapRow>> {
    let surface = ModelSurface::new(model, batch);
    gap_study_on(&surface, rhos, robust_cfg, oracle_template)
}

/// CSV emission: columns rho,Rn,Doracle,gap,slope_running.
pub fn gap_rows_to_csv(rows: &[GapRow]) -> String {
    let mut out = String::from("rho,Rn,Doracle,gap,slope_running\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.rho, r.r_n, r.d_oracle, r.gap, r.slope_running
        ));
    }
    out
}
