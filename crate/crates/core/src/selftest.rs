//! Fast property checks runnable from the installed binary.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::diagnostics::{estimate_central_condition, fit_risk_curve, relative_lipschitz_from_records, LipschitzRecord, RiskPoint};
use crate::error::Result;
use crate::eval::{BaseDictionary, LaConfig, NearestCentroid, RidgeClassifier};
use crate::losses::{self, ContrastiveBatch};
use crate::models::{eval_frozen, AggregatorConfig, AggregatorKind, EncoderConfig};
use crate::tensor::gradcheck::check_params;
use crate::tensor::Tensor;

pub struct CheckOutcome {
    pub name: &'static str,
    pub result: std::result::Result<(), String>,
}

type Check = fn() -> std::result::Result<(), String>;

const CHECKS: &[(&str, Check)] = &[
    ("encoder_and_aggregator_gradients", gradients),
    ("aggregator_permutation_invariance", permutation_invariance),
    ("supcon_identical_positive_closed_form", supcon_closed_form),
    ("ridge_normal_equations", ridge_residual),
    ("nearest_centroid_fixture", nearest_centroid),
    ("la_sample_covariance", la_covariance),
    ("risk_fit_planted_power_law", risk_fit),
    ("central_condition_identity_and_shift", central_condition),
    ("lipschitz_hand_example", lipschitz),
    ("config_flat_roundtrip", config_roundtrip),
];

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lift<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

const KINDS: [AggregatorKind; 5] = [
    AggregatorKind::DeepsetMean,
    AggregatorKind::DeepsetSum,
    AggregatorKind::DeepsetMax,
    AggregatorKind::AttnMil,
    AggregatorKind::SetTransformer,
];

fn gradients() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let enc = EncoderConfig {
        input_dim: 3,
        hidden_dims: vec![4],
        embed_dim: 4,
    };
    for kind in KINDS {
        let agg = AggregatorConfig::new(kind, 4, 4, 2);
        let mut params = enc.init(&mut rng);
        params.extend(lift(agg.init(&mut rng))?);
        let x = Tensor::from_rows(&random_rows(&mut rng, 5, 3)).map_err(|e| e.to_string())?;
        let report = lift(check_params(&params, 1e-6, 1e-4, 1e-8, |tape, bound| {
            let xv = tape.constant(x.clone());
            let h = enc.forward(tape, bound, xv)?;
            let out = agg.forward(tape, bound, h)?.output;
            losses::cross_entropy(tape, out, &[1])
        }))?;
        ensure(report.passed(), || format!("{kind:?}: {:?}", report.worst))?;
    }
    Ok(())
}

fn permutation_invariance() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for kind in KINDS {
        let agg = AggregatorConfig::new(kind, 3, 8, 2);
        let params = lift(agg.init(&mut rng))?;
        let mut rows = random_rows(&mut rng, 7, 3);
        let run = |rows: &[Vec<f64>]| -> Result<Tensor> {
            let x = Tensor::from_rows(rows)?;
            eval_frozen(&params, |tape, bound| {
                let xv = tape.constant(x);
                Ok(agg.forward(tape, bound, xv)?.output)
            })
        };
        let base = lift(run(&rows))?;
        for _ in 0..10 {
            rows.shuffle(&mut rng);
            let d = base.max_abs_diff(&lift(run(&rows))?);
            ensure(d <= 1e-8, || format!("{kind:?}: diff {d}"))?;
        }
    }
    Ok(())
}

fn supcon_closed_form() -> std::result::Result<(), String> {
    let n = 3;
    let rows = vec![vec![1.0, 0.0]; 2 * n];
    let mut tape = crate::tensor::Tape::new();
    let z = tape.constant(lift(Tensor::from_rows(&rows))?);
    let batch = ContrastiveBatch {
        z,
        labels: Some(vec![0; n]),
        temperature: 0.5,
    };
    let l = lift(losses::supcon_loss(&mut tape, &batch))?;
    let v = lift(tape.value(l.mean).item())?;
    let want = ((2 * n - 1) as f64).ln();
    ensure((v - want).abs() < 1e-10, || format!("{v} vs {want}"))
}

fn ridge_residual() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = lift(Tensor::from_rows(&random_rows(&mut rng, 12, 4)))?;
    let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
    let alpha = 0.7;
    let rc = lift(RidgeClassifier::fit(&x, &labels, 3, alpha))?;
    let a = RidgeClassifier::design(&x);
    let t = RidgeClassifier::targets(&labels, 3);
    let r: DMatrix<f64> = RidgeClassifier::gram(&a, alpha) * &rc.weights - a.transpose() * t;
    ensure(r.amax() < 1e-8, || format!("residual {}", r.amax()))
}

fn nearest_centroid() -> std::result::Result<(), String> {
    let x = lift(Tensor::from_rows(&[vec![0.0, 0.0], vec![0.0, 2.0], vec![4.0, 0.0], vec![4.0, 2.0]]))?;
    let nc = lift(NearestCentroid::fit(&x, &[0, 0, 1, 1], 2))?;
    let q = lift(Tensor::from_rows(&[vec![1.0, 1.0], vec![3.0, 1.0], vec![2.0, 1.0]]))?;
    let p = nc.predict(&q);
    ensure(p == vec![0, 1, 0], || format!("predictions {p:?}"))
}

fn la_covariance() -> std::result::Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let rows: Vec<Vec<f64>> = (0..400)
        .map(|_| {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            vec![a, 0.5 * a + 0.3 * b]
        })
        .collect();
    let x = lift(Tensor::from_rows(&rows))?;
    let cfg = LaConfig {
        prototypes: 1,
        ..Default::default()
    };
    let dict = lift(BaseDictionary::build(&x, &cfg, 0))?;
    let draws = lift(dict.sample(&[0.0, 0.0], 10_000, &mut rng))?;
    let mut cov = DMatrix::<f64>::zeros(2, 2);
    for d in &draws {
        let v = nalgebra::DVector::from_column_slice(d);
        cov += &v * v.transpose();
    }
    cov /= draws.len() as f64;
    let rel = (&cov - &dict.covariances[0]).norm() / dict.covariances[0].norm();
    ensure(rel < 0.05, || format!("relative Frobenius error {rel}"))
}

fn risk_fit() -> std::result::Result<(), String> {
    let points: Vec<RiskPoint> = [4usize, 16, 64]
        .iter()
        .map(|&n| RiskPoint {
            n,
            m: n,
            error: 2.0 / (n as f64).sqrt(),
        })
        .collect();
    let c = lift(fit_risk_curve(&points))?;
    ensure((c.gamma - 0.5).abs() < 1e-12 && c.residual_rms < 1e-12, || format!("{c:?}"))
}

fn central_condition() -> std::result::Result<(), String> {
    let l = vec![0.2, 0.9, 1.4];
    let shifted: Vec<f64> = l.iter().map(|v| v + 0.3).collect();
    let same = lift(estimate_central_condition(&l, std::slice::from_ref(&l), 2.0))?;
    let shift = lift(estimate_central_condition(&l, &[shifted], 2.0))?;
    ensure(same.epsilon == 0.0 && (shift.epsilon + 0.3).abs() < 1e-12, || {
        format!("{} / {}", same.epsilon, shift.epsilon)
    })
}

fn lipschitz() -> std::result::Result<(), String> {
    let e = relative_lipschitz_from_records(
        &[LipschitzRecord {
            coarse_pred_a: 0,
            coarse_pred_b: 1,
            fine_loss_a: 0.2,
            fine_loss_b: 0.9,
        }],
        1e-12,
    );
    ensure(e.estimate.is_some_and(|v| (v - 0.7).abs() < 1e-12), || format!("{e:?}"))
}

fn config_roundtrip() -> std::result::Result<(), String> {
    let cfg = RunConfig::default();
    let flat = serde_json::Value::Object(lift(cfg.to_flat_json())?).to_string();
    ensure(lift(RunConfig::from_flat_json(&flat))? == cfg, || "roundtrip changed the config".into())?;
    ensure(RunConfig::from_flat_json(r#"{"no.such.key": 1}"#).is_err(), || "unknown key accepted".into())
}

pub fn run_selftest() -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|&(name, check)| CheckOutcome { name, result: check() })
        .collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn every_check_passes() {
        for o in super::run_selftest() {
            assert!(o.result.is_ok(), "{}: {:?}", o.name, o.result);
        }
    }
}
