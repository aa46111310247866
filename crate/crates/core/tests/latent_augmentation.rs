mod common;

use common::rng;
use facile::eval::{kmeans, BaseDictionary, LaConfig};
use facile::tensor::Tensor;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

fn normal(r: &mut rand_chacha::ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}

const DRAWS: usize = 10_000;
const PER_BLOB: usize = 2000;

/// One anisotropic Gaussian cluster: x = A g with a fixed mixing matrix.
fn correlated_cluster(seed: u64, n: usize) -> Tensor {
    let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.6, 0.5, 0.0, -0.3, 0.2, 0.4]);
    let mut r = rng(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let g = DVector::from_fn(3, |_, _| StandardNormal.sample(&mut r));
            (&a * g).as_slice().to_vec()
        })
        .collect();
    Tensor::from_rows(&rows).unwrap()
}

fn single_cluster_dict(x: &Tensor) -> BaseDictionary {
    let cfg = LaConfig {
        prototypes: 1,
        ..Default::default()
    };
    BaseDictionary::build(x, &cfg, 0).unwrap()
}

#[test]
fn draws_reproduce_cluster_covariance() {
    let dict = single_cluster_dict(&correlated_cluster(1, 500));
    let z = [0.3, -0.1, 0.2];
    let draws = dict.sample(&z, DRAWS, &mut rng(2)).unwrap();
    let zc = DVector::from_column_slice(&z);
    let mut cov = DMatrix::<f64>::zeros(3, 3);
    for d in &draws {
        let v = DVector::from_column_slice(d) - &zc;
        cov += &v * v.transpose();
    }
    cov /= DRAWS as f64;
    let sigma = &dict.covariances[0];
    let rel = (&cov - sigma).norm() / sigma.norm();
    assert!(rel < 0.05, "relative Frobenius error {rel}");
}

#[test]
fn draw_mean_within_clt_band() {
    let dict = single_cluster_dict(&correlated_cluster(3, 500));
    let z = [1.0, 2.0, -1.0];
    let draws = dict.sample(&z, DRAWS, &mut rng(4)).unwrap();
    let band = 4.0 * (dict.covariances[0].trace() / DRAWS as f64).sqrt();
    for j in 0..3 {
        let mean = draws.iter().map(|d| d[j]).sum::<f64>() / DRAWS as f64;
        assert!((mean - z[j]).abs() < band, "coordinate {j}: {mean}");
    }
}

#[test]
fn covariance_is_sample_covariance_plus_eps() {
    let x = correlated_cluster(5, 50);
    let dict = single_cluster_dict(&x);
    let n = x.rows() as f64;
    let mean: Vec<f64> = (0..3).map(|j| (0..x.rows()).map(|i| x.at(i, j)).sum::<f64>() / n).collect();
    for a in 0..3 {
        for b in 0..3 {
            let mut c = 0.0;
            for i in 0..x.rows() {
                c += (x.at(i, a) - mean[a]) * (x.at(i, b) - mean[b]);
            }
            c /= n - 1.0;
            if a == b {
                c += 1e-6;
            }
            assert!((dict.covariances[0][(a, b)] - c).abs() < 1e-12);
        }
    }
    let l = &dict.cholesky[0];
    assert!((l * l.transpose() - &dict.covariances[0]).amax() < 1e-12);
}

#[test]
fn kmeans_recovers_separated_blobs() {
    let centers = [[0.0, 0.0], [20.0, 0.0], [0.0, 20.0], [20.0, 20.0]];
    let sigma = 0.5;
    let mut r = rng(6);
    let mut rows = Vec::new();
    for c in &centers {
        for _ in 0..PER_BLOB {
            rows.push(c.iter().map(|m| m + sigma * normal(&mut r)).collect::<Vec<f64>>());
        }
    }
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let (found, assign, _) = kmeans(&refs, 4, 300, 1e-6, 7).unwrap();
    for c in &centers {
        let best = found
            .iter()
            .map(|f| ((f[0] - c[0]).powi(2) + (f[1] - c[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.1 * sigma, "center {c:?}: {best}");
    }
    for blob in assign.chunks(PER_BLOB) {
        assert!(blob.iter().all(|&a| a == blob[0]));
    }
}

#[test]
fn dictionary_is_deterministic_and_expansion_exact() {
    let x = correlated_cluster(8, 200);
    let cfg = LaConfig {
        prototypes: 4,
        ..Default::default()
    };
    let a = BaseDictionary::build(&x, &cfg, 9).unwrap();
    let b = BaseDictionary::build(&x, &cfg, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.sizes.iter().sum::<usize>(), 200);
    let support = Tensor::from_rows(&[x.row(0), x.row(1), x.row(2)]).unwrap();
    let (ex, labels) = a.expand(&support, &[0, 1, 2], 100, &mut rng(1)).unwrap();
    assert_eq!(ex.rows(), 3 * 101);
    for c in 0..3 {
        assert_eq!(labels.iter().filter(|&&l| l == c).count(), 101);
        assert_eq!(ex.row(c * 101), support.row(c));
    }
}

#[test]
fn degenerate_cluster_stays_within_eps_floor() {
    let x = Tensor::from_rows(&vec![vec![0.5, -0.5, 2.0]; 10]).unwrap();
    let dict = single_cluster_dict(&x);
    let bound = (3.0 * 1e-6f64).sqrt() * 5.0;
    for d in dict.sample(&[0.5, -0.5, 2.0], 1000, &mut rng(3)).unwrap() {
        let dist = ((d[0] - 0.5).powi(2) + (d[1] + 0.5).powi(2) + (d[2] - 2.0).powi(2)).sqrt();
        assert!(dist < bound);
    }
}
