use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    NearestCentroid,
    LogisticRegression,
    Ridge,
}

impl ClassifierKind {
    pub fn short_name(self) -> &'static str {
        match self {
            ClassifierKind::NearestCentroid => "NC",
            ClassifierKind::LogisticRegression => "LR",
            ClassifierKind::Ridge => "RC",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrConfig {
    pub lambda: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LrConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

pub(crate) fn to_matrix(x: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(x.rows(), x.cols(), x.data())
}

fn check_support(op: &str, x: &Tensor, labels: &[usize], num_classes: usize, min_classes: usize) -> Result<()> {
    if x.ndim() != 2 || x.rows() != labels.len() {
        return Err(Error::Contract(format!(
            "{op}: {} feature rows for {} labels",
            x.shape().first().unwrap_or(&0),
            labels.len()
        )));
    }
    if num_classes < min_classes {
        return Err(Error::Contract(format!("{op}: needs at least {min_classes} classes, got {num_classes}")));
    }
    let mut seen = vec![false; num_classes];
    for &y in labels {
        *seen
            .get_mut(y)
            .ok_or_else(|| Error::Contract(format!("{op}: label {y} outside [0, {num_classes})")))? = true;
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(Error::Contract(format!("{op}: class {c} has no support examples")));
    }
    Ok(())
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct NearestCentroid {
    pub centroids: Vec<Vec<f64>>,
}

impl NearestCentroid {
    pub fn fit(x: &Tensor, labels: &[usize], num_classes: usize) -> Result<Self> {
        check_support("nc_fit", x, labels, num_classes, 1)?;
        let d = x.cols();
        let mut sums = vec![vec![0.0; d]; num_classes];
        let mut counts = vec![0usize; num_classes];
        for (r, &y) in labels.iter().enumerate() {
            counts[y] += 1;
            for (s, v) in sums[y].iter_mut().zip(x.row(r)) {
                *s += v;
            }
        }
        for (s, &n) in sums.iter_mut().zip(&counts) {
            s.iter_mut().for_each(|v| *v /= n as f64);
        }
        Ok(Self { centroids: sums })
    }

    pub fn predict_row(&self, z: &[f64]) -> usize {
        argmax(
            self.centroids
                .iter()
                .map(|c| -c.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()),
        )
    }

    pub fn predict(&self, x: &Tensor) -> Vec<usize> {
        (0..x.rows()).map(|r| self.predict_row(x.row(r))).collect()
    }
}

/// Multinomial logistic regression, weights `d × K` plus unpenalized bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticRegression {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct LrProblem {
    x: DMatrix<f64>,
    onehot: DMatrix<f64>,
    lambda: f64,
}

impl LrProblem {
    /// Objective and, if requested, the gradient `(∂W, ∂b)`.
    fn eval(&self, w: &DMatrix<f64>, b: &DVector<f64>, with_grad: bool) -> (f64, Option<(DMatrix<f64>, DVector<f64>)>) {
        let n = self.x.nrows() as f64;
        let mut logits = &self.x * w;
        let mut ce = 0.0;
        for (r, mut row) in logits.row_iter_mut().enumerate() {
            row += b.transpose();
            let m = row.max();
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for (k, v) in row.iter_mut().enumerate() {
                ce -= self.onehot[(r, k)] * (*v - lse);
                *v = (*v - lse).exp();
            }
        }
        let obj = ce / n + 0.5 * self.lambda * w.norm_squared();
        if !with_grad {
            return (obj, None);
        }
        let resid = (logits - &self.onehot) / n;
        let gw = self.x.transpose() * &resid + w * self.lambda;
        let gb = resid.row_sum().transpose();
        (obj, Some((gw, gb)))
    }
}

impl LogisticRegression {
    /// Minimizes `mean CE + λ/2 ‖W‖²` by gradient descent with Armijo backtracking.
    pub fn fit(x: &Tensor, labels: &[usize], num_classes: usize, cfg: &LrConfig) -> Result<Self> {
        check_support("lr_fit", x, labels, num_classes, 2)?;
        if cfg.lambda < 0.0 {
            return Err(Error::Config(format!("lr_fit: lambda must be >= 0, got {}", cfg.lambda)));
        }
        let mut onehot = DMatrix::zeros(labels.len(), num_classes);
        for (r, &y) in labels.iter().enumerate() {
            onehot[(r, y)] = 1.0;
        }
        let prob = LrProblem {
            x: to_matrix(x),
            onehot,
            lambda: cfg.lambda,
        };
        let mut w = DMatrix::zeros(x.cols(), num_classes);
        let mut b = DVector::zeros(num_classes);
        let (mut obj, g) = prob.eval(&w, &b, true);
        let (mut gw, mut gb) = g.expect("gradient requested");
        let mut step = 1.0;
        let mut iterations = 0;
        let mut converged = false;
        while iterations < cfg.max_iter {
            let gnorm = gw.amax().max(gb.amax());
            if gnorm < cfg.tol {
                converged = true;
                break;
            }
            let gsq = gw.norm_squared() + gb.norm_squared();
            step *= 2.0;
            loop {
                let wn = &w - &gw * step;
                let bn = &b - &gb * step;
                let (on, _) = prob.eval(&wn, &bn, false);
                if on <= obj - 0.5 * step * gsq || step < 1e-20 {
                    w = wn;
                    b = bn;
                    break;
                }
                step *= 0.5;
            }
            let (o, g) = prob.eval(&w, &b, true);
            obj = o;
            (gw, gb) = g.expect("gradient requested");
            iterations += 1;
        }
        if !converged && gw.amax().max(gb.amax()) < cfg.tol {
            converged = true;
        }
        Ok(Self {
            weights: w,
            bias: b,
            objective: obj,
            iterations,
            converged,
        })
    }

    pub fn scores(&self, x: &Tensor) -> DMatrix<f64> {
        let mut s = to_matrix(x) * &self.weights;
        for mut row in s.row_iter_mut() {
            row += self.bias.transpose();
        }
        s
    }

    pub fn predict(&self, x: &Tensor) -> Vec<usize> {
        let s = self.scores(x);
        s.row_iter().map(|r| argmax(r.iter().copied())).collect()
    }
}

/// One-vs-rest ridge regression on ±1 targets.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeClassifier {
    /// `(d + 1) × K`; the last row is the bias.
    pub weights: DMatrix<f64>,
}

impl RidgeClassifier {
    /// Design matrix with a trailing column of ones.
    pub fn design(x: &Tensor) -> DMatrix<f64> {
        let (n, d) = (x.rows(), x.cols());
        DMatrix::from_fn(n, d + 1, |r, c| if c < d { x.at(r, c) } else { 1.0 })
    }

    pub fn targets(labels: &[usize], num_classes: usize) -> DMatrix<f64> {
        DMatrix::from_fn(labels.len(), num_classes, |r, k| if labels[r] == k { 1.0 } else { -1.0 })
    }

    /// `XᵀX + αI` with the bias entry left unpenalized.
    pub fn gram(design: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
        let mut a = design.transpose() * design;
        for i in 0..design.ncols() - 1 {
            a[(i, i)] += alpha;
        }
        a
    }

    pub fn fit(x: &Tensor, labels: &[usize], num_classes: usize, alpha: f64) -> Result<Self> {
        check_support("rc_fit", x, labels, num_classes, 2)?;
        if alpha < 0.0 {
            return Err(Error::Config(format!("rc_fit: alpha must be >= 0, got {alpha}")));
        }
        let design = Self::design(x);
        let rhs = design.transpose() * Self::targets(labels, num_classes);
        let chol = Self::gram(&design, alpha)
            .cholesky()
            .ok_or_else(|| Error::Numerical("rc_fit: system is not positive definite".into()))?;
        Ok(Self {
            weights: chol.solve(&rhs),
        })
    }

    pub fn predict(&self, x: &Tensor) -> Vec<usize> {
        let s = Self::design(x) * &self.weights;
        s.row_iter().map(|r| argmax(r.iter().copied())).collect()
    }
}

/// A fitted classifier of any kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Classifier {
    NearestCentroid(NearestCentroid),
    LogisticRegression(LogisticRegression),
    Ridge(RidgeClassifier),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierParams {
    pub lr: LrConfig,
    pub ridge_alpha: f64,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        Self {
            lr: LrConfig::default(),
            ridge_alpha: 1.0,
        }
    }
}

impl Classifier {
    pub fn fit(kind: ClassifierKind, x: &Tensor, labels: &[usize], num_classes: usize, params: &ClassifierParams) -> Result<Self> {
        Ok(match kind {
            ClassifierKind::NearestCentroid => Classifier::NearestCentroid(NearestCentroid::fit(x, labels, num_classes)?),
            ClassifierKind::LogisticRegression => {
                Classifier::LogisticRegression(LogisticRegression::fit(x, labels, num_classes, &params.lr)?)
            }
            ClassifierKind::Ridge => Classifier::Ridge(RidgeClassifier::fit(x, labels, num_classes, params.ridge_alpha)?),
        })
    }

    pub fn predict(&self, x: &Tensor) -> Vec<usize> {
        match self {
            Classifier::NearestCentroid(c) => c.predict(x),
            Classifier::LogisticRegression(c) => c.predict(x),
            Classifier::Ridge(c) => c.predict(x),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn nc_fixtures() {
        let nc = NearestCentroid::fit(&t(&[&[1.0, 0.0], &[-1.0, 0.0]]), &[0, 1], 2).unwrap();
        assert_eq!(nc.centroids, vec![vec![1.0, 0.0], vec![-1.0, 0.0]]);
        assert_eq!(nc.predict(&t(&[&[0.9, 0.0], &[-0.2, 3.0], &[0.0, 1.0]])), vec![0, 1, 0]);
        assert!(NearestCentroid::fit(&t(&[&[1.0]]), &[1], 2).is_err());
    }

    #[test]
    fn lr_separable_and_heavily_regularized() {
        let x = t(&[&[1.0, 0.1], &[0.9, -0.1], &[-1.0, 0.2], &[-0.8, 0.0], &[-1.1, -0.3]]);
        let y = [0, 0, 1, 1, 1];
        let lr = LogisticRegression::fit(&x, &y, 2, &LrConfig { lambda: 0.1, ..Default::default() }).unwrap();
        assert!(lr.converged);
        assert_eq!(lr.predict(&x), y);
        let big = LogisticRegression::fit(&x, &y, 2, &LrConfig { lambda: 1e6, ..Default::default() }).unwrap();
        assert!(big.weights.amax() < 1e-2);
        assert!(big.predict(&x).iter().all(|&p| p == 1));
    }

    #[test]
    fn ridge_separable() {
        let x = t(&[&[1.0, 0.0], &[1.2, 0.1], &[0.0, 1.0], &[-0.1, 1.1], &[-1.0, -1.0]]);
        let y = [0, 0, 1, 1, 2];
        let rc = RidgeClassifier::fit(&x, &y, 3, 1.0).unwrap();
        assert_eq!(rc.predict(&x), y);
        assert!(RidgeClassifier::fit(&x, &[0, 0, 0, 0, 0], 1, 1.0).is_err());
    }
}
