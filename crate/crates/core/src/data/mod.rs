//! Instance datasets, coarse set-label builders, augmentation and meta-task sampling.

pub mod augment;
pub mod cifar;
mod meta;
mod sets;
mod synthetic;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use augment::{AugmentPolicy, ImageDims, StrongAugment};
pub use cifar::{load_cifar100, parse_cifar100};
pub use meta::{sample_meta_task, MetaSampler, MetaTask, TaskItem};
pub use sets::{
    build_most_frequent_sets, build_unique_count_sets, most_frequent_label, unique_count_label,
    CoarseDataset, CoarseSetExample, CoarseTask,
};
pub use synthetic::{gen_synthetic_hierarchy, split_per_class, SyntheticConfig};

/// One instance with its fine label and the superclass that label belongs to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub features: Vec<f64>,
    pub fine_label: usize,
    pub super_label: usize,
}

/// Balanced two-level label hierarchy: fine label `f` belongs to superclass `f / fine_per_super`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchySpec {
    pub num_super: usize,
    pub fine_per_super: usize,
}

impl Default for HierarchySpec {
    fn default() -> Self {
        Self {
            num_super: 20,
            fine_per_super: 5,
        }
    }
}

impl HierarchySpec {
    pub fn num_fine(&self) -> usize {
        self.num_super * self.fine_per_super
    }

    pub fn super_of(&self, fine: usize) -> usize {
        fine / self.fine_per_super
    }
}

/// SHA-256 over labels and the little-endian bytes of every feature.
pub fn dataset_digest(data: &[LabeledInstance]) -> String {
    let mut h = Sha256::new();
    for inst in data {
        h.update((inst.fine_label as u64).to_le_bytes());
        h.update((inst.super_label as u64).to_le_bytes());
        for v in &inst.features {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
