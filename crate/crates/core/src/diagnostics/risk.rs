use serde::{Deserialize, Serialize};

use crate::data::{build_most_frequent_sets, split_per_class, SyntheticConfig};
use crate::error::{Error, Result};
use crate::eval::{Arm, ClassifierKind, ProtocolConfig};
use crate::pipeline::{evaluate_encoder, pretrain_coarse, PretrainMethod, PretrainSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskPoint {
    /// Number of fine-labelled support examples per task.
    pub n: usize,
    /// Number of coarse-labelled sets used for pretraining.
    pub m: usize,
    pub error: f64,
}

/// Least-squares fit of `log error = log C − γ log n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    pub points: Vec<RiskPoint>,
    pub log_c: f64,
    pub gamma: f64,
    pub residual_rms: f64,
}

pub fn fit_risk_curve(points: &[RiskPoint]) -> Result<RiskCurve> {
    if points.len() < 3 {
        return Err(Error::Contract(format!("fit_risk_curve needs at least 3 points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|p| p.n == 0 || p.m == 0) {
        return Err(Error::Contract(format!("fit_risk_curve: n and m must be positive, got {p:?}")));
    }
    if let Some(p) = points.iter().find(|p| !(p.error > 0.0) || !p.error.is_finite()) {
        return Err(Error::domain("fit_risk_curve", format!("log of non-positive error {} at n = {}", p.error, p.n)));
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.error.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::domain("fit_risk_curve", "all points share one n"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(RiskCurve {
        points: points.to_vec(),
        log_c: intercept,
        gamma: -slope,
        residual_rms: (rss / k).sqrt(),
    })
}

/// How the number of coarse sets scales with `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Growth {
    Linear,
    Quadratic,
    /// `m` fixed at its value for the first grid point.
    Constant,
}

impl Growth {
    pub fn sets(self, m0: usize, n: usize, n_first: usize) -> usize {
        match self {
            Growth::Linear => m0 * n,
            Growth::Quadratic => m0 * n * n,
            Growth::Constant => m0 * n_first,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskConfig {
    pub data: SyntheticConfig,
    /// Instances per fine class kept for pretraining; the rest are for evaluation.
    pub train_per_class: usize,
    pub set_size: (usize, usize),
    pub m0: usize,
    pub pretrain: PretrainSpec,
    pub c_way: usize,
    pub query: usize,
    pub tasks: usize,
    pub classifier: ClassifierKind,
}

/// Pretrains FACILE-FSP at each grid point on `m(n)` coarse sets, evaluates
/// `c_way`-way tasks with `n / c_way` shots and fits the error curve.
pub fn run_risk_experiment(growth: Growth, n_grid: &[usize], cfg: &RiskConfig, seed: u64) -> Result<RiskCurve> {
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("n_grid must be strictly ascending, got {n_grid:?}")));
    }
    if cfg.c_way == 0 {
        return Err(Error::Config("c_way must be positive".into()));
    }
    if let Some(n) = n_grid.iter().find(|&&n| n == 0 || n % cfg.c_way != 0) {
        return Err(Error::Config(format!("n = {n} is not a positive multiple of c_way = {}", cfg.c_way)));
    }
    if cfg.pretrain.method != PretrainMethod::FacileFsp {
        return Err(Error::Config("risk experiments pretrain with facile_fsp".into()));
    }
    let data = cfg.data.generate(seed)?;
    let (train, test) = split_per_class(data, cfg.train_per_class);
    let mut spec = cfg.pretrain.clone();
    spec.seed = seed;
    let mut points = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let m = growth.sets(cfg.m0, n, n_grid[0]);
        let coarse = build_most_frequent_sets(&train, m, cfg.set_size, seed ^ n as u64)?;
        let out = pretrain_coarse(&spec, &coarse)?;
        let proto = ProtocolConfig {
            c_way: cfg.c_way,
            k_shot: n / cfg.c_way,
            query: cfg.query,
            tasks: cfg.tasks,
            arms: vec![Arm::new(cfg.classifier, false)],
            ..Default::default()
        };
        let report = evaluate_encoder(&spec.encoder, &out.encoder, &test, &proto, None, seed)?;
        let acc = report.arm(proto.arms[0]).expect("single arm").mean_acc;
        points.push(RiskPoint { n, m, error: 1.0 - acc });
    }
    fit_risk_curve(&points)
}
