use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabeledInstance;
use crate::error::{Error, Result};

/// An instance reference inside a meta-task, with its remapped label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskItem {
    /// Index into the dataset the task was sampled from.
    pub index: usize,
    /// Label in `[0, c_way)`.
    pub label: usize,
}

/// One c-way k-shot episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaTask {
    pub support: Vec<TaskItem>,
    pub query: Vec<TaskItem>,
    /// `class_remap[new] = original fine label`.
    pub class_remap: Vec<usize>,
}

impl MetaTask {
    pub fn c_way(&self) -> usize {
        self.class_remap.len()
    }
}

/// Per-class index of a dataset for repeated task sampling.
#[derive(Clone, Debug)]
pub struct MetaSampler {
    by_class: BTreeMap<usize, Vec<usize>>,
}

impl MetaSampler {
    pub fn new(fine_labels: impl IntoIterator<Item = usize>) -> Self {
        let mut by_class = BTreeMap::<usize, Vec<usize>>::new();
        for (i, y) in fine_labels.into_iter().enumerate() {
            by_class.entry(y).or_default().push(i);
        }
        Self { by_class }
    }

    pub fn from_instances(data: &[LabeledInstance]) -> Self {
        Self::new(data.iter().map(|i| i.fine_label))
    }

    pub fn num_classes(&self) -> usize {
        self.by_class.len()
    }

    /// Classes, supports and queries are all drawn without replacement.
    pub fn sample(&self, c_way: usize, k_shot: usize, q: usize, seed: u64) -> Result<MetaTask> {
        if c_way == 0 || k_shot == 0 || q == 0 {
            return Err(Error::Config(format!(
                "c_way, k_shot and q must be positive (got {c_way}, {k_shot}, {q})"
            )));
        }
        if c_way > self.by_class.len() {
            return Err(Error::Config(format!(
                "{c_way}-way task needs {c_way} classes, dataset has {}",
                self.by_class.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes: Vec<usize> = self.by_class.keys().copied().collect();
        let chosen: Vec<usize> = sample(&mut rng, classes.len(), c_way)
            .into_iter()
            .map(|i| classes[i])
            .collect();

        let mut support = Vec::with_capacity(c_way * k_shot);
        let mut query = Vec::with_capacity(c_way * q);
        for (label, &class) in chosen.iter().enumerate() {
            let pool = &self.by_class[&class];
            let needed = k_shot + q;
            if pool.len() < needed {
                return Err(Error::TaskSampling {
                    class,
                    available: pool.len(),
                    needed,
                });
            }
            let picks = sample(&mut rng, pool.len(), needed).into_vec();
            support.extend(picks[..k_shot].iter().map(|&p| TaskItem {
                index: pool[p],
                label,
            }));
            query.extend(picks[k_shot..].iter().map(|&p| TaskItem {
                index: pool[p],
                label,
            }));
        }
        Ok(MetaTask {
            support,
            query,
            class_remap: chosen,
        })
    }
}

pub fn sample_meta_task(
    data: &[LabeledInstance],
    c_way: usize,
    k_shot: usize,
    q: usize,
    seed: u64,
) -> Result<MetaTask> {
    MetaSampler::from_instances(data).sample(c_way, k_shot, q, seed)
}
