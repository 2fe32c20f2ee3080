//! Contrastive objectives on unit vectors.
//!
//! * [`asm_loss`]: supervised contrastive loss with a positive pair and a
//!   duplication factor `λ` on the positive term.
//! * [`rsm_loss`]: the label-free relative form, where the positive logit is
//!   replaced by its maximum `1/τ`; no positive vector is consumed.
//! * [`joint_loss`]: batch-mean relative loss for both graphs, negatives drawn
//!   from each anchor's own graph (or from the other graph, for the ablation).
//!
//! All losses use log-sum-exp with the largest logit subtracted.

use rayon::prelude::*;

use crate::encoder::{accumulate_grad_encode, EncoderGrads, EncoderParams, GraphView};
use crate::error::{Error, Result};
use crate::kg::EntityId;
use crate::linalg::{axpy, dot, norm, Matrix};
use crate::queue::NegativeQueue;

pub const DEFAULT_TAU: f64 = 0.08;
pub const INPUT_NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub tau: f64,
    pub lambda: u32,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            lambda: 1,
        }
    }
}

impl LossConfig {
    pub fn new(tau: f64, lambda: u32) -> Result<Self> {
        let cfg = Self { tau, lambda };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau must be positive, got {}", self.tau)));
        }
        if self.lambda < 1 {
            return Err(Error::InvalidConfig("lambda must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_unit(v: &[f64]) -> Result<()> {
    let n = norm(v);
    if (n - 1.0).abs() > INPUT_NORM_TOLERANCE || !n.is_finite() {
        return Err(Error::NormViolation {
            norm: n,
            tolerance: INPUT_NORM_TOLERANCE,
        });
    }
    Ok(())
}

fn check_inputs(anchor: &[f64], negs: &[&[f64]]) -> Result<()> {
    if negs.is_empty() {
        return Err(Error::EmptyNegatives);
    }
    check_unit(anchor)?;
    for n in negs {
        if n.len() != anchor.len() {
            return Err(Error::DimensionMismatch {
                expected: anchor.len(),
                found: n.len(),
            });
        }
        check_unit(n)?;
    }
    Ok(())
}

/// `-log( e^{s/τ} / (λ e^{s/τ} + Σ e^{fxᵀn_i/τ}) )` with `s = fxᵀfy`.
pub fn asm_loss(fx: &[f64], fy: &[f64], negs: &[&[f64]], cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    check_inputs(fx, negs)?;
    check_unit(fy)?;
    let pos = dot(fx, fy) / cfg.tau;
    let (lse, _) = partition(pos + f64::from(cfg.lambda).ln(), fx, negs, cfg.tau, false);
    Ok(lse - pos)
}

/// `-1/τ + log( λ e^{1/τ} + Σ e^{fxᵀn_i/τ} )`.
pub fn rsm_loss(fx: &[f64], negs: &[&[f64]], cfg: &LossConfig) -> Result<f64> {
    rsm_loss_and_grad(fx, negs, cfg).map(|(l, _)| l)
}

/// Relative loss and its gradient with respect to `fx`, treating the
/// negatives as constants.
pub fn rsm_loss_and_grad(fx: &[f64], negs: &[&[f64]], cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    check_inputs(fx, negs)?;
    let top = 1.0 / cfg.tau;
    let (lse, grad) = partition(top + f64::from(cfg.lambda).ln(), fx, negs, cfg.tau, true);
    Ok((lse - top, grad))
}

/// Log-partition over one fixed logit plus the negative logits, and
/// optionally `∂/∂fx = Σ p_i n_i / τ`.
fn partition(fixed: f64, fx: &[f64], negs: &[&[f64]], tau: f64, want_grad: bool) -> (f64, Vec<f64>) {
    let logits: Vec<f64> = negs.iter().map(|n| dot(fx, n) / tau).collect();
    let max = logits.iter().copied().fold(fixed, f64::max);
    let total = (fixed - max).exp() + logits.iter().map(|l| (l - max).exp()).sum::<f64>();
    let lse = max + total.ln();
    let mut grad = Vec::new();
    if want_grad {
        grad = vec![0.0; fx.len()];
        for (l, n) in logits.iter().zip(negs) {
            axpy((l - lse).exp() / tau, n, &mut grad);
        }
    }
    (lse, grad)
}

/// Where each anchor's negatives come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NegativeSampling {
    /// From the anchor's own graph, excluding the anchor.
    #[default]
    SelfGraph,
    /// From the other graph, with no exclusion (ablation).
    CrossGraph,
}

/// One graph's side of a training step.
#[derive(Debug, Clone, Copy)]
pub struct SideBatch<'a> {
    pub ids: &'a [EntityId],
    /// Anchors, encoded by the online encoder.
    pub online: &'a Matrix,
    /// The same entities encoded by the target encoder; these serve as the
    /// current-batch negatives.
    pub target: &'a Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointLoss {
    pub value: f64,
    /// `∂L/∂(online row i)` for the x-side anchors.
    pub grad_x: Matrix,
    pub grad_y: Matrix,
}

pub fn joint_loss(
    x: &SideBatch<'_>,
    y: &SideBatch<'_>,
    queue_x: &NegativeQueue,
    queue_y: &NegativeQueue,
    cfg: &LossConfig,
    sampling: NegativeSampling,
) -> Result<f64> {
    joint_loss_with_grad(x, y, queue_x, queue_y, cfg, sampling).map(|j| j.value)
}

pub fn joint_loss_with_grad(
    x: &SideBatch<'_>,
    y: &SideBatch<'_>,
    queue_x: &NegativeQueue,
    queue_y: &NegativeQueue,
    cfg: &LossConfig,
    sampling: NegativeSampling,
) -> Result<JointLoss> {
    queue_x.ensure_warm()?;
    queue_y.ensure_warm()?;
    let (lx, grad_x) = side_loss(x, y, queue_x, queue_y, cfg, sampling)?;
    let (ly, grad_y) = side_loss(y, x, queue_y, queue_x, cfg, sampling)?;
    Ok(JointLoss {
        value: lx + ly,
        grad_x,
        grad_y,
    })
}

fn side_loss(
    own: &SideBatch<'_>,
    other: &SideBatch<'_>,
    own_queue: &NegativeQueue,
    other_queue: &NegativeQueue,
    cfg: &LossConfig,
    sampling: NegativeSampling,
) -> Result<(f64, Matrix)> {
    let b = own.ids.len();
    if own.online.rows() != b || own.target.rows() != b || b == 0 {
        return Err(Error::ShapeMismatch {
            expected: format!("{b} anchors with online and target rows"),
            found: format!("{} online, {} target", own.online.rows(), own.target.rows()),
        });
    }
    let cross = match sampling {
        NegativeSampling::SelfGraph => None,
        NegativeSampling::CrossGraph => Some(other_queue.all_negatives(other.target)?),
    };
    let per_anchor: Vec<(f64, Vec<f64>)> = (0..b)
        .into_par_iter()
        .map(|i| {
            let own_negs;
            let negs = match &cross {
                Some(n) => n,
                None => {
                    own_negs = own_queue.negatives_for(own.ids, own.target, i)?;
                    &own_negs
                }
            };
            rsm_loss_and_grad(own.online.row(i), negs, cfg)
        })
        .collect::<Result<_>>()?;
    let scale = 1.0 / b as f64;
    let mut grad = Matrix::zeros(b, own.online.cols());
    let mut total = 0.0;
    for (i, (l, g)) in per_anchor.iter().enumerate() {
        total += l;
        axpy(scale, g, grad.row_mut(i));
    }
    Ok((total * scale, grad))
}

const GRAD_CHUNK: usize = 8;

/// Joint loss and its gradient with respect to the online encoder.
///
/// `x.online` and `y.online` must be the online encodings of `x.ids` and
/// `y.ids` under `params`. Queue contents and target encodings are treated as
/// constants. Per-anchor terms are reduced in a fixed order.
#[allow(clippy::too_many_arguments)]
pub fn grad_joint_loss(
    params: &EncoderParams,
    view_x: &GraphView<'_>,
    view_y: &GraphView<'_>,
    x: &SideBatch<'_>,
    y: &SideBatch<'_>,
    queue_x: &NegativeQueue,
    queue_y: &NegativeQueue,
    cfg: &LossConfig,
    sampling: NegativeSampling,
) -> Result<(f64, EncoderGrads)> {
    let joint = joint_loss_with_grad(x, y, queue_x, queue_y, cfg, sampling)?;
    let mut work: Vec<(&GraphView<'_>, EntityId, &[f64])> = Vec::with_capacity(x.ids.len() + y.ids.len());
    for (i, &e) in x.ids.iter().enumerate() {
        work.push((view_x, e, joint.grad_x.row(i)));
    }
    for (i, &e) in y.ids.iter().enumerate() {
        work.push((view_y, e, joint.grad_y.row(i)));
    }
    let dim = params.dim();
    let partials: Vec<EncoderGrads> = work
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = EncoderGrads::zeros(dim);
            for (view, e, up) in chunk {
                accumulate_grad_encode(params, view, *e, up, &mut g)?;
            }
            Ok(g)
        })
        .collect::<Result<_>>()?;
    let mut grads = EncoderGrads::zeros(dim);
    for p in &partials {
        grads.add_assign(p);
    }
    Ok((joint.value, grads))
}
