//! Central finite-difference oracle for tape gradients.

use super::params::{Bound, Params};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Outcome of comparing autodiff gradients with central differences.
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub failures: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Checks every coordinate of every parameter in `params`.
///
/// An entry passes when `|a − n| ≤ abs_floor` or `|a − n| / max(|a|, |n|) ≤ rel_tol`.
pub fn check_params<F>(
    params: &Params,
    h: f64,
    rel_tol: f64,
    abs_floor: f64,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = build(&mut tape, &bound)?;
    tape.backward(loss)?;
    let analytic = bound.grads(&tape);
    for (name, g) in &analytic {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient for `{name}`")));
        }
    }

    let eval = |p: &Params| -> Result<f64> {
        let mut t = Tape::new();
        let b = p.bind_frozen(&mut t);
        let l = build(&mut t, &b)?;
        t.value(l).item()
    };

    let mut report = GradCheckReport::default();
    let mut probe = params.clone();
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let n = params.get(&name)?.len();
        for i in 0..n {
            let orig = params.get(&name)?.data()[i];
            probe.get_mut(&name).expect("cloned").data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe.get_mut(&name).expect("cloned").data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe.get_mut(&name).expect("cloned").data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * h);
            let a = analytic[&name][i];
            let abs = (a - numeric).abs();
            let rel = if abs == 0.0 { 0.0 } else { abs / a.abs().max(numeric.abs()) };
            report.checked += 1;
            if abs > report.max_abs_err {
                report.max_abs_err = abs;
            }
            if abs > abs_floor {
                report.max_rel_err = report.max_rel_err.max(rel);
                if rel > rel_tol {
                    report.failures += 1;
                    report.worst = Some((name.clone(), i, a, numeric));
                }
            }
        }
    }
    Ok(report)
}
