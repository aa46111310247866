#![allow(dead_code)]

pub mod oracles;

use facile::data::{HierarchySpec, SyntheticConfig};
use facile::tensor::gradcheck::{check_params, GradCheckReport};
use facile::tensor::{Bound, Params, Tape, Tensor, Var};
use facile::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_REL_TOL: f64 = 1e-4;
pub const GRAD_STEP: f64 = 1e-6;
pub const GRAD_ABS_FLOOR: f64 = 1e-7;
pub const INSTANCES: u64 = 20;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub fn rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

pub fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    rows(rng, n, d)
        .into_iter()
        .map(|r| {
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.into_iter().map(|v| v / norm).collect()
        })
        .collect()
}

pub fn gradcheck<F>(params: &Params, build: F) -> GradCheckReport
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    check_params(params, GRAD_STEP, GRAD_REL_TOL, GRAD_ABS_FLOOR, build).unwrap()
}

/// Small well-separated hierarchy used where a full run would be slow.
pub fn small_synthetic() -> SyntheticConfig {
    SyntheticConfig {
        hierarchy: HierarchySpec {
            num_super: 4,
            fine_per_super: 3,
        },
        per_class: 30,
        dim: 8,
        sigma_fine: 0.5,
        sigma_super: 3.0,
    }
}
