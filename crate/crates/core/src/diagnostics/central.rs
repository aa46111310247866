use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentralConditionEstimate {
    pub eta: f64,
    /// Largest per-candidate value.
    pub epsilon: f64,
    /// `(1/η) log mean exp(η (ℓ_f* − ℓ_f))` for each candidate, in input order.
    pub per_candidate: Vec<f64>,
}

/// Smallest `ε` for which the empirical `η`-central condition holds against
/// every candidate.
pub fn estimate_central_condition(
    losses_fstar: &[f64],
    candidates: &[Vec<f64>],
    eta: f64,
) -> Result<CentralConditionEstimate> {
    if candidates.is_empty() {
        return Err(Error::Contract("estimate_central_condition: no candidates".into()));
    }
    if losses_fstar.is_empty() {
        return Err(Error::Contract("estimate_central_condition: no examples".into()));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Contract(format!("estimate_central_condition: eta must be positive, got {eta}")));
    }
    let n = losses_fstar.len();
    let per_candidate = candidates
        .iter()
        .map(|c| {
            if c.len() != n {
                return Err(Error::shape("estimate_central_condition", &[n], &[c.len()]));
            }
            let v: Vec<f64> = losses_fstar.iter().zip(c).map(|(s, f)| eta * (s - f)).collect();
            let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            Ok((lse - (n as f64).ln()) / eta)
        })
        .collect::<Result<Vec<f64>>>()?;
    let epsilon = per_candidate.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(CentralConditionEstimate {
        eta,
        epsilon,
        per_candidate,
    })
}
