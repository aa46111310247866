use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{HierarchySpec, LabeledInstance};
use crate::error::{Error, Result};

/// Parameters of the Gaussian superclass/fine-class generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub hierarchy: HierarchySpec,
    pub per_class: usize,
    pub dim: usize,
    pub sigma_fine: f64,
    pub sigma_super: f64,
}

/// Superclass centers ~ N(0, σ_super²I), fine centers ~ N(super center, (σ_super/4)²I),
/// instances ~ N(fine center, σ_fine²I). Instances are grouped by fine label.
pub fn gen_synthetic_hierarchy(
    spec: HierarchySpec,
    per_class: usize,
    dim: usize,
    sigma_fine: f64,
    sigma_super: f64,
    seed: u64,
) -> Result<Vec<LabeledInstance>> {
    if per_class == 0 || spec.num_fine() == 0 {
        return Err(Error::EmptyDataset(
            "per_class and class counts must be positive".into(),
        ));
    }
    if dim < 2 {
        return Err(Error::Config(format!("dim must be >= 2, got {dim}")));
    }
    if !(sigma_fine > 0.0 && sigma_super > 0.0) {
        return Err(Error::Config(format!(
            "sigmas must be positive, got fine={sigma_fine} super={sigma_super}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gaussian = |center: &[f64], sigma: f64| -> Vec<f64> {
        center
            .iter()
            .map(|c| {
                let z: f64 = StandardNormal.sample(&mut rng);
                c + sigma * z
            })
            .collect()
    };

    let origin = vec![0.0; dim];
    let super_centers: Vec<Vec<f64>> = (0..spec.num_super)
        .map(|_| gaussian(&origin, sigma_super))
        .collect();
    let fine_centers: Vec<Vec<f64>> = (0..spec.num_fine())
        .map(|f| gaussian(&super_centers[spec.super_of(f)], sigma_super / 4.0))
        .collect();

    let mut out = Vec::with_capacity(spec.num_fine() * per_class);
    for (fine, center) in fine_centers.iter().enumerate() {
        for _ in 0..per_class {
            out.push(LabeledInstance {
                features: gaussian(center, sigma_fine),
                fine_label: fine,
                super_label: spec.super_of(fine),
            });
        }
    }
    Ok(out)
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            hierarchy: HierarchySpec::default(),
            per_class: 90,
            dim: 128,
            sigma_fine: 3.0,
            sigma_super: 1.0,
        }
    }
}

impl SyntheticConfig {
    pub fn generate(&self, seed: u64) -> Result<Vec<LabeledInstance>> {
        gen_synthetic_hierarchy(
            self.hierarchy,
            self.per_class,
            self.dim,
            self.sigma_fine,
            self.sigma_super,
            seed,
        )
    }
}

/// Splits off the first `train_per_class` instances of every fine class.
pub fn split_per_class(
    data: Vec<LabeledInstance>,
    train_per_class: usize,
) -> (Vec<LabeledInstance>, Vec<LabeledInstance>) {
    let mut seen = std::collections::HashMap::<usize, usize>::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for inst in data {
        let n = seen.entry(inst.fine_label).or_insert(0);
        *n += 1;
        if *n <= train_per_class {
            train.push(inst);
        } else {
            test.push(inst);
        }
    }
    (train, test)
}
