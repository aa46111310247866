//! Pretraining objectives recorded on a [`Tape`].
//!
//! Contrastive batches hold `2N` projections where rows `2k` and `2k + 1` are
//! the two views of source `k`, so the positive partner of row `i` is `i ^ 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_TEMPERATURE: f64 = 0.07;
pub const COSINE_EPS: f64 = 1e-12;
const UNIT_NORM_TOL: f64 = 1e-8;
// exp of anything this negative is exactly zero, so masked entries drop out of
// the softmax denominator while staying finite under multiplication by zero.
const MASK: f64 = -1e300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    L1,
    Supcon,
    Simclr,
    Simsiam,
}

/// Mean cross-entropy of `B × K` logits against integer labels.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let s = tape.shape(logits).to_vec();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::shape("cross_entropy", &s, &[labels.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= s[1]) {
        return Err(Error::Contract(format!("cross_entropy: label {bad} outside [0, {})", s[1])));
    }
    let logp = tape.log_softmax(logits, 1)?;
    let picked = tape.pick(logp, labels)?;
    let mean = tape.mean_all(picked)?;
    Ok(tape.neg(mean))
}

/// Mean absolute error between equally shaped predictions and targets.
pub fn l1_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let diff = tape.sub(pred, target)?;
    let abs = tape.abs(diff);
    tape.mean_all(abs)
}

#[derive(Clone, Debug)]
pub struct ContrastiveBatch {
    /// `2N × d` unit-norm rows, views of one source adjacent.
    pub z: Var,
    /// One label per source (length `N`); both views inherit it.
    pub labels: Option<Vec<usize>>,
    pub temperature: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct ContrastiveLoss {
    /// Average over anchors that have at least one positive.
    pub mean: Var,
    /// Per-anchor terms, length `2N`; zero for anchors without positives.
    pub per_anchor: Var,
    pub anchors: usize,
}

impl ContrastiveBatch {
    fn validate(&self, tape: &Tape, op: &'static str) -> Result<usize> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Contract(format!("{op}: temperature must be positive, got {}", self.temperature)));
        }
        let z = tape.value(self.z);
        let s = z.shape();
        if s.len() != 2 || s[0] < 2 || !s[0].is_multiple_of(2) {
            return Err(Error::shape(op, s, &[2]));
        }
        for r in 0..s[0] {
            let n = crate::tensor::norm(z.row(r));
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Contract(format!("{op}: row {r} has norm {n}, expected 1")));
            }
        }
        let n = s[0] / 2;
        if let Some(l) = &self.labels {
            if l.len() != n {
                return Err(Error::shape(op, &[l.len()], &[n]));
            }
        }
        Ok(n)
    }
}

/// Shared core: `loss_i = −Σ_j w_ij log softmax_{a≠i}(z_i·z_a/τ)_j`.
fn weighted_contrastive(tape: &mut Tape, batch: &ContrastiveBatch, weights: Vec<f64>, anchors: usize) -> Result<ContrastiveLoss> {
    let rows = tape.shape(batch.z)[0];
    let zt = tape.transpose(batch.z)?;
    let sim = tape.matmul(batch.z, zt)?;
    let sim = tape.scale(sim, 1.0 / batch.temperature);
    let mut mask = vec![0.0; rows * rows];
    for i in 0..rows {
        mask[i * rows + i] = MASK;
    }
    let mask = tape.constant(Tensor::matrix(rows, rows, mask)?);
    let masked = tape.add(sim, mask)?;
    let logp = tape.log_softmax(masked, 1)?;
    let w = tape.constant(Tensor::matrix(rows, rows, weights)?);
    let weighted = tape.mul(logp, w)?;
    let summed = tape.sum(weighted, 1)?;
    let per_anchor = tape.neg(summed);
    let total = tape.sum_all(per_anchor)?;
    let mean = tape.scale(total, 1.0 / anchors as f64);
    Ok(ContrastiveLoss {
        mean,
        per_anchor,
        anchors,
    })
}

/// NT-Xent: each anchor's positive is the other view of its source.
pub fn simclr_loss(tape: &mut Tape, batch: &ContrastiveBatch) -> Result<ContrastiveLoss> {
    let n = batch.validate(tape, "simclr_loss")?;
    let rows = 2 * n;
    let mut w = vec![0.0; rows * rows];
    for i in 0..rows {
        w[i * rows + (i ^ 1)] = 1.0;
    }
    weighted_contrastive(tape, batch, w, rows)
}

/// Supervised contrastive loss with the log outside the positive average.
pub fn supcon_loss(tape: &mut Tape, batch: &ContrastiveBatch) -> Result<ContrastiveLoss> {
    let n = batch.validate(tape, "supcon_loss")?;
    let labels = batch
        .labels
        .as_ref()
        .ok_or_else(|| Error::Contract("supcon_loss requires labels".into()))?;
    let rows = 2 * n;
    let label = |i: usize| labels[i / 2];
    let mut w = vec![0.0; rows * rows];
    let mut anchors = 0;
    for i in 0..rows {
        let positives: Vec<usize> = (0..rows).filter(|&p| p != i && label(p) == label(i)).collect();
        if positives.is_empty() {
            continue;
        }
        anchors += 1;
        let share = 1.0 / positives.len() as f64;
        for p in positives {
            w[i * rows + p] = share;
        }
    }
    if anchors == 0 {
        return Err(Error::Contract("supcon_loss: degenerate batch, no anchor has a positive".into()));
    }
    weighted_contrastive(tape, batch, w, anchors)
}

/// Symmetrized negative cosine with stop-gradient on the targets `z1`, `z2`.
pub fn simsiam_loss(tape: &mut Tape, p1: Var, z1: Var, p2: Var, z2: Var) -> Result<Var> {
    let z1 = tape.detach(z1);
    let z2 = tape.detach(z2);
    let c1 = tape.cosine_similarity(p1, z2, COSINE_EPS)?;
    let c2 = tape.cosine_similarity(p2, z1, COSINE_EPS)?;
    let m1 = tape.mean_all(c1)?;
    let m2 = tape.mean_all(c2)?;
    let s = tape.add(m1, m2)?;
    Ok(tape.scale(s, -0.5))
}
