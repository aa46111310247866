//! Latent augmentation: a k-means base dictionary of prototypes and
//! covariances, and Gaussian resampling of support embeddings around it.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaConfig {
    pub prototypes: usize,
    pub count: usize,
    pub eps: f64,
    pub max_iter: usize,
    pub shift_tol: f64,
}

impl Default for LaConfig {
    fn default() -> Self {
        Self {
            prototypes: 16,
            count: 100,
            eps: 1e-6,
            max_iter: 300,
            shift_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaseDictionary {
    /// `k × d`.
    pub prototypes: DMatrix<f64>,
    /// Cluster covariance plus `εI`.
    pub covariances: Vec<DMatrix<f64>>,
    /// Lower Cholesky factor of each stored covariance.
    pub cholesky: Vec<DMatrix<f64>>,
    pub sizes: Vec<usize>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest center; ties go to the lowest index.
fn nearest(centers: &[Vec<f64>], z: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(c, z);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn kmeans_pp<R: Rng>(rows: &[&[f64]], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centers = vec![rows[rng.random_range(0..rows.len())].to_vec()];
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let pick = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            Err(_) => rng.random_range(0..rows.len()),
        };
        let c = rows[pick].to_vec();
        for (d, r) in d2.iter_mut().zip(rows) {
            *d = d.min(sq_dist(r, &c));
        }
        centers.push(c);
    }
    centers
}

/// Lloyd's k-means from k-means++ seeds. Returns centers, assignments and
/// the number of iterations run.
pub fn kmeans(rows: &[&[f64]], k: usize, max_iter: usize, shift_tol: f64, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<usize>, usize)> {
    if k == 0 || rows.len() < k {
        return Err(Error::Contract(format!("kmeans: {} rows for {k} clusters", rows.len())));
    }
    let d = rows[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_pp(rows, k, &mut rng);
    let mut assign = vec![0; rows.len()];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut dist = vec![0.0; rows.len()];
        for (i, r) in rows.iter().enumerate() {
            (assign[i], dist[i]) = nearest(&centers, r);
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (r, &a) in rows.iter().zip(&assign) {
            counts[a] += 1;
            sums[a].iter_mut().zip(r.iter()).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = dist
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, &v)| if v > dist[best] { i } else { best });
                sums[c] = rows[far].to_vec();
                counts[c] = 1;
                dist[far] = 0.0;
            } else {
                sums[c].iter_mut().for_each(|s| *s /= counts[c] as f64);
            }
        }
        let shift = centers
            .iter()
            .zip(&sums)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centers = sums;
        if shift < shift_tol {
            break;
        }
    }
    for (i, r) in rows.iter().enumerate() {
        assign[i] = nearest(&centers, r).0;
    }
    Ok((centers, assign, iterations))
}

impl BaseDictionary {
    /// Clusters `features` (rows are pretraining-corpus embeddings).
    pub fn build(features: &Tensor, cfg: &LaConfig, seed: u64) -> Result<Self> {
        if features.ndim() != 2 {
            return Err(Error::shape("la_build", features.shape(), &[0, 0]));
        }
        if cfg.eps <= 0.0 {
            return Err(Error::Config(format!("la_build: eps must be positive, got {}", cfg.eps)));
        }
        let rows: Vec<&[f64]> = (0..features.rows()).map(|r| features.row(r)).collect();
        let (centers, assign, iterations) = kmeans(&rows, cfg.prototypes, cfg.max_iter, cfg.shift_tol, seed)?;
        let d = features.cols();
        let k = centers.len();
        let mut members: Vec<Vec<&[f64]>> = vec![Vec::new(); k];
        for (r, &a) in rows.iter().zip(&assign) {
            members[a].push(r);
        }
        let mut covariances = Vec::with_capacity(k);
        let mut cholesky = Vec::with_capacity(k);
        for (c, m) in members.iter().enumerate() {
            let mut cov = DMatrix::<f64>::zeros(d, d);
            if m.len() > 1 {
                let mean = DVector::from_fn(d, |j, _| m.iter().map(|r| r[j]).sum::<f64>() / m.len() as f64);
                for r in m {
                    let dev = DVector::from_column_slice(r) - &mean;
                    cov.ger(1.0, &dev, &dev, 1.0);
                }
                cov /= (m.len() - 1) as f64;
            }
            for i in 0..d {
                cov[(i, i)] += cfg.eps;
            }
            let l = cov
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Numerical(format!("la_build: covariance {c} is not positive definite")))?
                .l();
            covariances.push(cov);
            cholesky.push(l);
        }
        let prototypes = DMatrix::from_fn(k, d, |i, j| centers[i][j]);
        Ok(Self {
            prototypes,
            covariances,
            cholesky,
            sizes: members.iter().map(Vec::len).collect(),
            iterations,
        })
    }

    pub fn dim(&self) -> usize {
        self.prototypes.ncols()
    }

    pub fn nearest_prototype(&self, z: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, p) in self.prototypes.row_iter().enumerate() {
            let d: f64 = p.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    /// `count` draws of `z + L η` where `L` belongs to the nearest prototype.
    pub fn sample<R: Rng>(&self, z: &[f64], count: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        if z.len() != self.dim() {
            return Err(Error::shape("la_sample", &[z.len()], &[self.dim()]));
        }
        let l = &self.cholesky[self.nearest_prototype(z)];
        let base = DVector::from_column_slice(z);
        Ok((0..count)
            .map(|_| {
                let eta = DVector::from_fn(z.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
                (&base + l * eta).as_slice().to_vec()
            })
            .collect())
    }

    /// Each original row followed by its `count` augmented copies, labels repeated.
    pub fn expand<R: Rng>(&self, x: &Tensor, labels: &[usize], count: usize, rng: &mut R) -> Result<(Tensor, Vec<usize>)> {
        let mut rows = Vec::with_capacity(x.rows() * (count + 1));
        let mut out_labels = Vec::with_capacity(rows.capacity());
        for (r, &y) in labels.iter().enumerate() {
            rows.push(x.row(r).to_vec());
            rows.extend(self.sample(x.row(r), count, rng)?);
            out_labels.extend(std::iter::repeat_n(y, count + 1));
        }
        Ok((Tensor::from_rows(&rows)?, out_labels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_point_gives_eps_identity() {
        let x = Tensor::from_rows(&vec![vec![0.3, -0.2]; 5]).unwrap();
        let cfg = LaConfig {
            prototypes: 1,
            ..Default::default()
        };
        let dict = BaseDictionary::build(&x, &cfg, 0).unwrap();
        assert_eq!(dict.covariances[0], DMatrix::identity(2, 2) * 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bound = (2.0 * 1e-6f64).sqrt() * 5.0;
        for s in dict.sample(&[0.3, -0.2], 1000, &mut rng).unwrap() {
            assert!(sq_dist(&s, &[0.3, -0.2]).sqrt() < bound);
        }
    }

    #[test]
    fn too_few_rows() {
        let x = Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            BaseDictionary::build(&x, &LaConfig::default(), 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn expansion_layout() {
        let x = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        let cfg = LaConfig {
            prototypes: 2,
            ..Default::default()
        };
        let dict = BaseDictionary::build(&x, &cfg, 3).unwrap();
        let (ex, labels) = dict.expand(&x, &[0, 1, 1], 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(ex.rows(), 15);
        assert_eq!(labels, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1]);
        assert_eq!(ex.row(5), x.row(1));
    }
}
