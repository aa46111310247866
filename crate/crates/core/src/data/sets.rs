//! Coarse set-label tasks: distinct-superclass count and most frequent superclass.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabeledInstance;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoarseTask {
    /// Number of distinct superclasses among the members.
    UniqueCount,
    /// Mode of the members' superclasses, ties broken at random.
    MostFrequent,
}

/// A bag of member instances and its set-level label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseSetExample {
    /// Indices into [`CoarseDataset::features`].
    pub members: Vec<usize>,
    pub label: usize,
}

/// Sets over a pool of unlabeled feature vectors.
///
/// Only features are kept from the source instances, so nothing trained on a
/// `CoarseDataset` can read fine labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseDataset {
    pub task: CoarseTask,
    pub features: Vec<Vec<f64>>,
    pub sets: Vec<CoarseSetExample>,
    pub num_super: usize,
    pub size_range: (usize, usize),
}

impl CoarseDataset {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Size of the label space when the coarse label is treated as a class.
    pub fn num_classes(&self) -> usize {
        match self.task {
            CoarseTask::MostFrequent => self.num_super,
            CoarseTask::UniqueCount => self.size_range.1 + 1,
        }
    }

    /// Member features of set `i`, one row per member.
    pub fn member_rows(&self, i: usize) -> Vec<&[f64]> {
        self.sets[i].members.iter().map(|&m| self.features[m].as_slice()).collect()
    }
}

pub fn unique_count_label(supers: &[usize]) -> usize {
    let mut s = supers.to_vec();
    s.sort_unstable();
    s.dedup();
    s.len()
}

/// Mode of `supers`; ties are resolved by a uniform draw from `rng`.
pub fn most_frequent_label<R: Rng>(supers: &[usize], rng: &mut R) -> usize {
    let mut counts = BTreeMap::<usize, usize>::new();
    for &s in supers {
        *counts.entry(s).or_insert(0) += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    let tied: Vec<usize> = counts
        .iter()
        .filter(|(_, &c)| c == top)
        .map(|(&k, _)| k)
        .collect();
    if tied.len() == 1 {
        tied[0]
    } else {
        *tied.choose(rng).expect("nonempty tie set")
    }
}

pub fn build_unique_count_sets(
    data: &[LabeledInstance],
    m: usize,
    size_range: (usize, usize),
    seed: u64,
) -> Result<CoarseDataset> {
    build(data, m, size_range, seed, CoarseTask::UniqueCount)
}

pub fn build_most_frequent_sets(
    data: &[LabeledInstance],
    m: usize,
    size_range: (usize, usize),
    seed: u64,
) -> Result<CoarseDataset> {
    build(data, m, size_range, seed, CoarseTask::MostFrequent)
}

fn build(
    data: &[LabeledInstance],
    m: usize,
    (lo, hi): (usize, usize),
    seed: u64,
    task: CoarseTask,
) -> Result<CoarseDataset> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("no instances to build sets from".into()));
    }
    if lo == 0 || lo > hi || hi > data.len() {
        return Err(Error::Config(format!(
            "set size range [{lo}, {hi}] must lie within [1, {}]",
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sets = (0..m)
        .map(|_| {
            let size = rng.random_range(lo..=hi);
            let members: Vec<usize> = (0..size).map(|_| rng.random_range(0..data.len())).collect();
            let supers: Vec<usize> = members.iter().map(|&i| data[i].super_label).collect();
            let label = match task {
                CoarseTask::UniqueCount => unique_count_label(&supers),
                CoarseTask::MostFrequent => most_frequent_label(&supers, &mut rng),
            };
            CoarseSetExample { members, label }
        })
        .collect();
    Ok(CoarseDataset {
        task,
        features: data.iter().map(|i| i.features.clone()).collect(),
        sets,
        num_super: data.iter().map(|i| i.super_label).max().unwrap_or(0) + 1,
        size_range: (lo, hi),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unique_counts() {
        assert_eq!(unique_count_label(&[3, 3, 7, 7, 7, 12]), 3);
        assert_eq!(unique_count_label(&[4, 4, 4]), 1);
        assert_eq!(unique_count_label(&[0, 1, 2, 3, 4, 5]), 6);
    }

    #[test]
    fn unique_mode_and_singleton() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(most_frequent_label(&[5, 5, 9], &mut rng), 5);
        assert_eq!(most_frequent_label(&[7], &mut rng), 7);
    }

    #[test]
    fn tie_break_is_fair() {
        let mut hits5 = 0;
        for seed in 0..1000u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = most_frequent_label(&[5, 9], &mut rng);
            assert!(l == 5 || l == 9);
            hits5 += usize::from(l == 5);
        }
        assert!((450..=550).contains(&hits5), "label 5 chosen {hits5} times");
        assert!((450..=550).contains(&(1000 - hits5)));
    }

    fn pool() -> Vec<LabeledInstance> {
        (0..30)
            .map(|i| LabeledInstance {
                features: vec![i as f64, 0.0],
                fine_label: i % 10,
                super_label: (i % 10) / 2,
            })
            .collect()
    }

    #[test]
    fn sizes_stay_in_range_and_labels_rederive() {
        let data = pool();
        let ds = build_unique_count_sets(&data, 200, (6, 10), 3).unwrap();
        assert_eq!(ds.len(), 200);
        for s in &ds.sets {
            assert!((6..=10).contains(&s.members.len()));
            let supers: Vec<usize> = s.members.iter().map(|&m| data[m].super_label).collect();
            assert_eq!(unique_count_label(&supers), s.label);
        }
        assert_eq!(ds.num_classes(), 11);
    }

    #[test]
    fn bad_ranges() {
        let data = pool();
        assert!(build_most_frequent_sets(&data, 5, (0, 3), 0).is_err());
        assert!(build_most_frequent_sets(&data, 5, (4, 3), 0).is_err());
        assert!(build_most_frequent_sets(&data, 5, (4, 31), 0).is_err());
        assert!(build_most_frequent_sets(&[], 5, (1, 1), 0).is_err());
    }
}
