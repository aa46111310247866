use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{eval_frozen, AggregatorConfig, EncoderConfig};
use crate::pipeline::embed_fine;
use crate::tensor::{Params, Tensor};

pub const SURROGATE_LABEL: &str = "lower-bound surrogate";

/// Outcome of one `(s, x, y)` pair under two encoders.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzRecord {
    pub coarse_pred_a: usize,
    pub coarse_pred_b: usize,
    pub fine_loss_a: f64,
    pub fine_loss_b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    /// Absent when the two set heads never disagree.
    pub estimate: Option<f64>,
    pub samples: usize,
    pub disagreements: usize,
    /// Agreeing pairs whose fine losses still differ by more than the tolerance.
    pub violations: usize,
    pub label: String,
}

/// Largest fine-loss gap over pairs where the coarse predictions differ.
pub fn relative_lipschitz_from_records(records: &[LipschitzRecord], tol: f64) -> LipschitzEstimate {
    let mut estimate: Option<f64> = None;
    let mut disagreements = 0;
    let mut violations = 0;
    for r in records {
        let gap = (r.fine_loss_a - r.fine_loss_b).abs();
        if r.coarse_pred_a != r.coarse_pred_b {
            disagreements += 1;
            estimate = Some(estimate.map_or(gap, |e| e.max(gap)));
        } else if gap > tol {
            violations += 1;
        }
    }
    LipschitzEstimate {
        estimate,
        samples: records.len(),
        disagreements,
        violations,
        label: SURROGATE_LABEL.to_string(),
    }
}

/// An encoder with a trained set head on top.
#[derive(Clone, Copy, Debug)]
pub struct SetModel<'a> {
    pub encoder: &'a EncoderConfig,
    pub aggregator: &'a AggregatorConfig,
    /// Encoder and aggregator parameters together.
    pub params: &'a Params,
}

impl SetModel<'_> {
    /// Argmax of the set head; single-output (regression) heads are rounded.
    pub fn coarse_predict<R: AsRef<[f64]>>(&self, set: &[R]) -> Result<usize> {
        if set.is_empty() {
            return Err(Error::Contract("coarse_predict on an empty set".into()));
        }
        let x = Tensor::from_rows(set)?;
        let out = eval_frozen(self.params, |tape, bound| {
            let xv = tape.constant(x);
            let h = self.encoder.forward(tape, bound, xv)?;
            Ok(self.aggregator.forward(tape, bound, h)?.output)
        })?;
        let v = out.data();
        if v.len() == 1 {
            return Ok(v[0].round().max(0.0) as usize);
        }
        let mut best = 0;
        for (i, &s) in v.iter().enumerate() {
            if s > v[best] {
                best = i;
            }
        }
        Ok(best)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzPair {
    pub set: Vec<Vec<f64>>,
    pub x: Vec<f64>,
    pub y: usize,
}

/// Compares `f ∘ ê` against `f ∘ e′` on `x`, restricted to pairs whose set
/// heads disagree on `s`. `fine_loss` scores an l2-normalized embedding
/// against its label and must be the same `f` for both encoders.
pub fn estimate_relative_lipschitz<F>(
    a: &SetModel,
    b: &SetModel,
    fine_loss: F,
    sample: &[LipschitzPair],
    tol: f64,
) -> Result<LipschitzEstimate>
where
    F: Fn(&[f64], usize) -> Result<f64>,
{
    let records = sample
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if !p.set.iter().any(|m| m == &p.x) {
                return Err(Error::Contract(format!("pair {i}: x is not a member of its set")));
            }
            let za = embed_fine(a.encoder, a.params, std::slice::from_ref(&p.x))?;
            let zb = embed_fine(b.encoder, b.params, std::slice::from_ref(&p.x))?;
            Ok(LipschitzRecord {
                coarse_pred_a: a.coarse_predict(&p.set)?,
                coarse_pred_b: b.coarse_predict(&p.set)?,
                fine_loss_a: fine_loss(za.data(), p.y)?,
                fine_loss_b: fine_loss(zb.data(), p.y)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(relative_lipschitz_from_records(&records, tol))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_built_single_disagreement() {
        let recs = [
            LipschitzRecord {
                coarse_pred_a: 1,
                coarse_pred_b: 0,
                fine_loss_a: 0.2,
                fine_loss_b: 0.9,
            },
            LipschitzRecord {
                coarse_pred_a: 2,
                coarse_pred_b: 2,
                fine_loss_a: 0.4,
                fine_loss_b: 0.4,
            },
        ];
        let e = relative_lipschitz_from_records(&recs, 1e-12);
        assert!((e.estimate.unwrap() - 0.7).abs() < 1e-15);
        assert_eq!((e.disagreements, e.violations, e.samples), (1, 0, 2));
        assert_eq!(e.label, SURROGATE_LABEL);
    }

    #[test]
    fn no_disagreement_is_absent() {
        let recs = [LipschitzRecord {
            coarse_pred_a: 0,
            coarse_pred_b: 0,
            fine_loss_a: 0.1,
            fine_loss_b: 0.5,
        }];
        let e = relative_lipschitz_from_records(&recs, 1e-9);
        assert_eq!(e.estimate, None);
        assert_eq!(e.violations, 1);
    }
}
