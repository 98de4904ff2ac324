//! Dual-positive contrastive loss, event-oriented MLM loss, prototype
//! clustering loss, and their weighted sum.

mod sinkhorn;

pub use sinkhorn::{sinkhorn_assign, sinkhorn_trace, SinkhornTrace};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::{Bound, Encoder, EncoderOutput, Mode};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};
use crate::trainer::TrainingBatch;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cl: f64,
    pub mlm: f64,
    pub cp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cl: 1.0,
            mlm: 1.0,
            cp: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub temperature: f64,
    pub prototype_count: usize,
    pub sinkhorn_iters: usize,
    pub sinkhorn_epsilon: f64,
    pub loss_weights: LossWeights,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            temperature: 0.3,
            prototype_count: 8,
            sinkhorn_iters: 3,
            sinkhorn_epsilon: 0.05,
            loss_weights: LossWeights::default(),
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.temperature)));
        }
        // K = 1 is accepted as the degenerate single-cluster case (zero loss).
        if self.prototype_count < 1 || self.sinkhorn_iters < 1 || !(self.sinkhorn_epsilon > 0.0) {
            return Err(Error::Config(
                "prototype_count >= 1, sinkhorn_iters >= 1 and sinkhorn_epsilon > 0 required".into(),
            ));
        }
        let w = self.loss_weights;
        if [w.cl, w.mlm, w.cp].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Learned cluster centers, kept at unit norm between optimizer steps.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeBank {
    pub prototypes: Tensor,
}

impl PrototypeBank {
    pub fn new(count: usize, dim: usize, seed: u64) -> Self {
        let mut rng: ChaCha8Rng = rand::SeedableRng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("valid std");
        let data = (0..count * dim).map(|_| normal.sample(&mut rng)).collect();
        let mut bank = Self {
            prototypes: Tensor::new(vec![count, dim], data).expect("positive shape"),
        };
        bank.renormalize();
        bank
    }

    pub fn renormalize(&mut self) {
        for r in 0..self.prototypes.rows() {
            let row = self.prototypes.row_mut(r);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
    }

    pub fn count(&self) -> usize {
        self.prototypes.rows()
    }
}

fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Numeric(format!("cannot normalize vector with norm {n}")));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// `exp(cos(a, b) / τ)`.
pub fn sim_g(a: &[f64], b: &[f64], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::Input(format!("tau must be > 0, got {tau}")));
    }
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("sim_g: {} vs {}", a.len(), b.len())));
    }
    let (a, b) = (unit(a)?, unit(b)?);
    let cos: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    Ok((cos / tau).exp())
}

/// Dual-positive InfoNCE over in-batch negatives, on L2-normalized inputs.
pub fn contrastive_loss(g: &mut Graph, anchors: Var, pos1: Var, pos2: Var, tau: f64) -> Result<Var> {
    if g.value(anchors).rows() == 0 {
        return Err(Error::Input("contrastive_loss needs B >= 1".into()));
    }
    let a = g.l2_normalize_rows(anchors)?;
    let p1 = g.l2_normalize_rows(pos1)?;
    let p2 = g.l2_normalize_rows(pos2)?;
    g.dual_info_nce(a, p1, p2, tau)
}

/// Value-only [`contrastive_loss`] on `[B×d]` tensors.
pub fn contrastive_loss_value(anchors: &Tensor, pos1: &Tensor, pos2: &Tensor, tau: f64) -> Result<f64> {
    let mut g = Graph::new();
    let (a, p1, p2) = (
        g.constant(anchors.clone()),
        g.constant(pos1.clone()),
        g.constant(pos2.clone()),
    );
    let l = contrastive_loss(&mut g, a, p1, p2, tau)?;
    Ok(g.value(l).item())
}

/// Cross-entropy of the MLM head at `(row, position, target)` triples,
/// averaged per masked token.
pub fn event_mlm_loss(
    g: &mut Graph,
    encoder: &Encoder,
    bound: &Bound<'_>,
    out: &EncoderOutput,
    targets: &[(usize, usize, usize)],
) -> Result<Var> {
    if targets.is_empty() {
        return Err(Error::Input("event_mlm_loss needs at least one masked token".into()));
    }
    let positions: Vec<(usize, usize)> = targets.iter().map(|&(b, t, _)| (b, t)).collect();
    let ids: Vec<usize> = targets.iter().map(|&(_, _, id)| id).collect();
    let logits = encoder.mlm_logits(g, bound, out, &positions)?;
    g.cross_entropy(logits, &ids)
}

/// Sinkhorn targets for both views, treated as constants by the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeTargets {
    pub first: Tensor,
    pub second: Tensor,
}

/// Computes the balanced assignments of both views against the current prototypes.
pub fn prototype_targets(
    pos1: &Tensor,
    pos2: &Tensor,
    prototypes: &Tensor,
    epsilon: f64,
    iters: usize,
) -> Result<PrototypeTargets> {
    let mut g = Graph::new();
    let c = g.constant(prototypes.clone());
    let mut assign = |p: &Tensor| -> Result<Tensor> {
        let v = g.constant(p.clone());
        let z = g.l2_normalize_rows(v)?;
        let s = g.matmul_nt(z, c)?;
        Ok(sinkhorn_assign(g.value(s), epsilon, iters))
    };
    Ok(PrototypeTargets {
        first: assign(pos1)?,
        second: assign(pos2)?,
    })
}

/// Swapped prediction: each view's softmax over prototype scores is trained
/// toward the other view's Sinkhorn assignment.
///
/// When `targets` is `None` they are computed from the current values.
#[allow(clippy::too_many_arguments)]
pub fn prototype_loss(
    g: &mut Graph,
    pos1: Var,
    pos2: Var,
    prototypes: Var,
    tau: f64,
    epsilon: f64,
    iters: usize,
    targets: Option<&PrototypeTargets>,
) -> Result<Var> {
    let b = g.value(pos1).rows();
    let k = g.value(prototypes).rows();
    if k == 1 {
        // a single cluster gives q = p = 1 for every row
        let zero = g.constant(Tensor::scalar(0.0));
        return Ok(zero);
    }
    if b < 2 {
        return Err(Error::Input(format!("prototype_loss needs B >= 2, got {b}")));
    }
    if !(tau > 0.0) {
        return Err(Error::Input(format!("tau must be > 0, got {tau}")));
    }
    let computed;
    let targets = match targets {
        Some(t) => t,
        None => {
            computed = prototype_targets(
                g.value(pos1),
                g.value(pos2),
                g.value(prototypes),
                epsilon,
                iters,
            )?;
            &computed
        }
    };
    let z1 = g.l2_normalize_rows(pos1)?;
    let z2 = g.l2_normalize_rows(pos2)?;
    let s1 = g.matmul_nt(z1, prototypes)?;
    let s2 = g.matmul_nt(z2, prototypes)?;
    let l1 = g.scale(s1, 1.0 / tau);
    let l2 = g.scale(s2, 1.0 / tau);
    let ce_a = g.soft_cross_entropy(l2, &targets.first)?;
    let ce_b = g.soft_cross_entropy(l1, &targets.second)?;
    g.weighted_sum(&[(ce_a, 0.5), (ce_b, 0.5)])
}

/// Per-term values of the overall objective (unweighted), for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cl: f64,
    pub mlm: f64,
    pub cp: f64,
}

/// Graph handles produced by [`overall_loss`].
pub struct OverallLoss {
    pub total: Var,
    pub breakdown: LossBreakdown,
    pub encoder_output: EncoderOutput,
    pub prototype_targets: Option<PrototypeTargets>,
}

/// `w_cl·L_CL + w_mlm·L_EventMLM + w_cp·L_CP` for one training batch.
///
/// Terms with zero weight are not built, so their parameters receive no
/// gradient. `frozen_targets` overrides the Sinkhorn targets (used when
/// probing the loss surface with the targets held fixed).
#[allow(clippy::too_many_arguments)]
pub fn overall_loss<R: Rng + ?Sized>(
    g: &mut Graph,
    encoder: &Encoder,
    bound: &Bound<'_>,
    prototypes: Var,
    batch: &TrainingBatch,
    cfg: &ObjectiveConfig,
    rng: &mut R,
    frozen_targets: Option<&PrototypeTargets>,
) -> Result<OverallLoss> {
    let out = encoder.forward(g, bound, &batch.sequences, Mode::Train, rng)?;
    let anchors = g.select_rows(out.pooled, &batch.anchor_rows())?;
    let pos1 = g.select_rows(out.pooled, &batch.positive_rows(0))?;
    let pos2 = g.select_rows(out.pooled, &batch.positive_rows(1))?;
    let w = cfg.loss_weights;
    let mut terms = Vec::new();
    let mut breakdown = LossBreakdown::default();
    let mut targets_used = None;

    if w.cl > 0.0 {
        let l = contrastive_loss(g, anchors, pos1, pos2, cfg.temperature)?;
        breakdown.cl = g.value(l).item();
        terms.push((l, w.cl));
    }
    if w.mlm > 0.0 {
        let l = event_mlm_loss(g, encoder, bound, &out, &batch.mlm_positions())?;
        breakdown.mlm = g.value(l).item();
        terms.push((l, w.mlm));
    }
    if w.cp > 0.0 {
        let targets = match frozen_targets {
            Some(t) => t.clone(),
            None => prototype_targets(
                g.value(pos1),
                g.value(pos2),
                g.value(prototypes),
                cfg.sinkhorn_epsilon,
                cfg.sinkhorn_iters,
            )?,
        };
        let l = prototype_loss(
            g,
            pos1,
            pos2,
            prototypes,
            cfg.temperature,
            cfg.sinkhorn_epsilon,
            cfg.sinkhorn_iters,
            Some(&targets),
        )?;
        breakdown.cp = g.value(l).item();
        terms.push((l, w.cp));
        targets_used = Some(targets);
    }
    if terms.is_empty() {
        return Err(Error::Config("all loss weights are zero".into()));
    }
    let total = g.weighted_sum(&terms)?;
    breakdown.total = g.value(total).item();
    Ok(OverallLoss {
        total,
        breakdown,
        encoder_output: out,
        prototype_targets: targets_used,
    })
}
