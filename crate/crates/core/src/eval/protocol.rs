use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classifiers::{Classifier, ClassifierKind, ClassifierParams};
use super::la::{BaseDictionary, LaConfig};
use super::metrics::{accuracy, macro_f1, mean_ci95};
use crate::data::{MetaSampler, TaskItem};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A classifier with or without latent augmentation of its support set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arm {
    pub classifier: ClassifierKind,
    #[serde(default)]
    pub la: bool,
}

impl Arm {
    pub fn new(classifier: ClassifierKind, la: bool) -> Self {
        Self { classifier, la }
    }

    pub fn name(&self) -> String {
        let base = self.classifier.short_name();
        if self.la {
            format!("{base}+LA")
        } else {
            base.to_string()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub c_way: usize,
    pub k_shot: usize,
    pub query: usize,
    pub tasks: usize,
    pub arms: Vec<Arm>,
    pub classifier: ClassifierParams,
    pub la: LaConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            c_way: 5,
            k_shot: 5,
            query: 15,
            tasks: 1000,
            arms: vec![
                Arm::new(ClassifierKind::NearestCentroid, false),
                Arm::new(ClassifierKind::LogisticRegression, false),
                Arm::new(ClassifierKind::Ridge, false),
            ],
            classifier: ClassifierParams::default(),
            la: LaConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task_id: usize,
    pub arm: Arm,
    pub f1: f64,
    pub acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub mean_f1: f64,
    pub mean_acc: f64,
    /// Half-width of the 95% interval on `mean_f1`.
    pub ci95: f64,
    pub ci95_acc: f64,
    pub tasks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scores: Vec<TaskScore>,
    /// Keyed by arm name (`NC`, `LR+LA`, ...).
    pub summary: BTreeMap<String, ArmSummary>,
}

impl EvalReport {
    pub fn from_scores(scores: Vec<TaskScore>) -> Self {
        let mut by_arm: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for s in &scores {
            let e = by_arm.entry(s.arm.name()).or_default();
            e.0.push(s.f1);
            e.1.push(s.acc);
        }
        let summary = by_arm
            .into_iter()
            .map(|(name, (f1, acc))| {
                let (mean_f1, ci95) = mean_ci95(&f1);
                let (mean_acc, ci95_acc) = mean_ci95(&acc);
                let s = ArmSummary {
                    mean_f1,
                    mean_acc,
                    ci95,
                    ci95_acc,
                    tasks: f1.len(),
                };
                (name, s)
            })
            .collect();
        Self { scores, summary }
    }

    pub fn arm(&self, arm: Arm) -> Option<&ArmSummary> {
        self.summary.get(&arm.name())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("task_id,classifier,la_flag,f1,acc\n");
        for s in &self.scores {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                s.task_id,
                s.arm.classifier.short_name(),
                s.arm.la,
                s.f1,
                s.acc
            );
        }
        out
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary)?)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let csv = dir.join("tasks.csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join("summary.json");
        std::fs::write(&json, self.summary_json()?).map_err(|e| Error::io(&json, e))
    }
}

fn gather(x: &Tensor, items: &[TaskItem]) -> Result<(Tensor, Vec<usize>)> {
    let rows: Vec<&[f64]> = items.iter().map(|i| x.row(i.index)).collect();
    Ok((Tensor::from_rows(&rows)?, items.iter().map(|i| i.label).collect()))
}

/// Seed for task `t`; shared by serial and parallel schedules.
pub fn task_seed(seed: u64, task: usize) -> u64 {
    seed ^ task as u64
}

/// Scores every arm on one sampled task.
pub fn run_task(
    embeddings: &Tensor,
    sampler: &MetaSampler,
    cfg: &ProtocolConfig,
    dict: Option<&BaseDictionary>,
    seed: u64,
    task_id: usize,
) -> Result<Vec<TaskScore>> {
    let ts = task_seed(seed, task_id);
    let task = sampler.sample(cfg.c_way, cfg.k_shot, cfg.query, ts)?;
    let (sx, sy) = gather(embeddings, &task.support)?;
    let (qx, qy) = gather(embeddings, &task.query)?;
    let c = task.c_way();
    let expanded = match (cfg.arms.iter().any(|a| a.la), dict) {
        (true, Some(d)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(ts);
            rng.set_stream(1);
            Some(d.expand(&sx, &sy, cfg.la.count, &mut rng)?)
        }
        (true, None) => return Err(Error::Config("latent augmentation requested without a base dictionary".into())),
        _ => None,
    };
    cfg.arms
        .iter()
        .map(|&arm| {
            let (x, y) = match (&expanded, arm.la) {
                (Some((ex, ey)), true) => (ex, ey.as_slice()),
                _ => (&sx, sy.as_slice()),
            };
            let preds = Classifier::fit(arm.classifier, x, y, c, &cfg.classifier)?.predict(&qx);
            Ok(TaskScore {
                task_id,
                arm,
                f1: macro_f1(&preds, &qy, c),
                acc: accuracy(&preds, &qy),
            })
        })
        .collect()
}

/// Runs `cfg.tasks` meta-tasks over pre-embedded data. Task `t` uses seed
/// `seed ^ t`, so the report is the same for any worker count.
pub fn evaluate_protocol(
    embeddings: &Tensor,
    fine_labels: &[usize],
    cfg: &ProtocolConfig,
    dict: Option<&BaseDictionary>,
    seed: u64,
) -> Result<EvalReport> {
    if embeddings.ndim() != 2 || embeddings.rows() != fine_labels.len() {
        return Err(Error::shape("evaluate_protocol", embeddings.shape(), &[fine_labels.len()]));
    }
    if cfg.tasks == 0 || cfg.arms.is_empty() {
        return Err(Error::Config("evaluation needs at least one task and one arm".into()));
    }
    if cfg.arms.iter().any(|a| a.la) && dict.is_none() {
        return Err(Error::Config("latent augmentation requested without a base dictionary".into()));
    }
    let sampler = MetaSampler::new(fine_labels.iter().copied());
    let per_task: Vec<Vec<TaskScore>> = (0..cfg.tasks)
        .into_par_iter()
        .map(|t| run_task(embeddings, &sampler, cfg, dict, seed, t))
        .collect::<Result<_>>()?;
    Ok(EvalReport::from_scores(per_task.into_iter().flatten().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn onehot_data(classes: usize, per: usize) -> (Tensor, Vec<usize>) {
        let rows: Vec<Vec<f64>> = (0..classes * per)
            .map(|i| (0..classes).map(|c| if c == i / per { 1.0 } else { 0.0 }).collect())
            .collect();
        (Tensor::from_rows(&rows).unwrap(), (0..classes * per).map(|i| i / per).collect())
    }

    #[test]
    fn perfect_separation_gives_unit_f1_zero_ci() {
        let (x, y) = onehot_data(6, 20);
        let cfg = ProtocolConfig {
            tasks: 20,
            ..Default::default()
        };
        let r = evaluate_protocol(&x, &y, &cfg, None, 5).unwrap();
        assert_eq!(r.scores.len(), 60);
        for s in r.summary.values() {
            assert_eq!((s.mean_f1, s.ci95, s.mean_acc), (1.0, 0.0, 1.0));
        }
        let again = evaluate_protocol(&x, &y, &cfg, None, 5).unwrap();
        assert_eq!(r.summary_json().unwrap(), again.summary_json().unwrap());
    }

    #[test]
    fn la_without_dictionary_is_config_error() {
        let (x, y) = onehot_data(6, 20);
        let cfg = ProtocolConfig {
            tasks: 2,
            arms: vec![Arm::new(ClassifierKind::Ridge, true)],
            ..Default::default()
        };
        assert!(evaluate_protocol(&x, &y, &cfg, None, 0).unwrap_err().is_config());
    }

    #[test]
    fn csv_layout() {
        let r = EvalReport::from_scores(vec![TaskScore {
            task_id: 3,
            arm: Arm::new(ClassifierKind::LogisticRegression, true),
            f1: 0.5,
            acc: 0.25,
        }]);
        assert_eq!(r.to_csv(), "task_id,classifier,la_flag,f1,acc\n3,LR,true,0.5,0.25\n");
        assert!(r.summary.contains_key("LR+LA"));
    }
}
