//! Run configuration: a flat JSON object whose keys are dotted paths into
//! [`RunConfig`], e.g. `{"pretrain.optim.lr0": 0.02, "eval.tasks": 200}`.
//!
//! Keys are merged over [`RunConfig::default`]. An object value replaces the
//! default wholesale when it carries a `kind` tag, so switching an
//! augmentation policy does not inherit fields of the previous variant.
//! Unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::{
    build_most_frequent_sets, build_unique_count_sets, dataset_digest, load_cifar100, split_per_class,
    AugmentPolicy, CoarseDataset, CoarseTask, LabeledInstance, SyntheticConfig,
};
use crate::diagnostics::{Growth, RiskConfig};
use crate::error::{Error, Result};
use crate::eval::{ClassifierKind, ProtocolConfig};
use crate::models::{AggregatorKind, EncoderConfig};
use crate::pipeline::{PretrainMethod, PretrainSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Cifar100,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub synthetic: SyntheticConfig,
    /// Synthetic only: instances per fine class used for pretraining.
    pub train_per_class: usize,
    pub cifar_train: Option<PathBuf>,
    pub cifar_test: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            synthetic: SyntheticConfig::default(),
            train_per_class: 60,
            cifar_train: None,
            cifar_test: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoarseConfig {
    pub task: CoarseTask,
    pub sets: usize,
    pub size_min: usize,
    pub size_max: usize,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        Self {
            task: CoarseTask::MostFrequent,
            sets: 2000,
            size_min: 4,
            size_max: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskSection {
    pub growths: Vec<Growth>,
    pub n_grid: Vec<usize>,
    pub m0: usize,
    pub c_way: usize,
    pub query: usize,
    pub tasks: usize,
    pub classifier: ClassifierKind,
}

impl Default for RiskSection {
    fn default() -> Self {
        Self {
            growths: vec![Growth::Linear, Growth::Quadratic],
            n_grid: vec![10, 20, 40],
            m0: 2,
            c_way: 5,
            query: 15,
            tasks: 200,
            classifier: ClassifierKind::NearestCentroid,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub eta: f64,
    /// Ridge strengths of the logistic-regression fine heads compared in the
    /// central-condition estimate.
    pub lambdas: Vec<f64>,
    pub pairs: usize,
    pub tol: f64,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            lambdas: vec![0.01, 0.1, 1.0, 10.0],
            pairs: 200,
            tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub coarse: CoarseConfig,
    pub pretrain: PretrainSpec,
    pub eval: ProtocolConfig,
    pub risk: RiskSection,
    pub diagnose: DiagnoseConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data = DataConfig::default();
        let encoder = EncoderConfig {
            input_dim: data.synthetic.dim,
            hidden_dims: vec![64],
            embed_dim: 32,
        };
        let mut pretrain = PretrainSpec::new(PretrainMethod::FacileFsp, encoder);
        pretrain.epochs = 20;
        pretrain.optim.lr0 = 0.02;
        pretrain.optim.weight_decay = 5e-4;
        pretrain.head.aggregator = AggregatorKind::DeepsetMean;
        pretrain.augmentation = AugmentPolicy::FeatureNoise {
            sigma: 0.5 * data.synthetic.sigma_fine,
        };
        Self {
            seed: 0,
            data,
            coarse: CoarseConfig::default(),
            pretrain,
            eval: ProtocolConfig {
                tasks: 200,
                ..Default::default()
            },
            risk: RiskSection::default(),
            diagnose: DiagnoseConfig::default(),
        }
    }
}

/// Seeds for each stage, derived from the run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSeeds {
    pub data: u64,
    pub coarse: u64,
    pub pretrain: u64,
    pub eval: u64,
}

impl StageSeeds {
    pub fn from_run(seed: u64) -> Self {
        Self {
            data: seed,
            coarse: seed.wrapping_add(1),
            pretrain: seed.wrapping_add(2),
            eval: seed.wrapping_add(3),
        }
    }
}

/// Turns `{"a.b": 1, "a.c": 2}` into `{"a": {"b": 1, "c": 2}}`.
pub fn unflatten(flat: &Map<String, Value>) -> Result<Value> {
    let mut root = Map::new();
    for (key, value) in flat {
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("malformed key `{key}`")));
        }
        let (last, path) = parts.split_last().expect("split yields at least one part");
        let mut node = &mut root;
        for (depth, part) in path.iter().enumerate() {
            let entry = node
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            node = entry.as_object_mut().ok_or_else(|| {
                Error::Config(format!("key `{key}` conflicts with `{}`", parts[..=depth].join(".")))
            })?;
        }
        if node.contains_key(*last) {
            return Err(Error::Config(format!("key `{key}` conflicts with a longer key")));
        }
        node.insert(last.to_string(), value.clone());
    }
    Ok(Value::Object(root))
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let replace = v.as_object().is_some_and(|m| m.contains_key("kind"));
                match b.get_mut(&k) {
                    Some(slot) if !replace => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Parses a flat dotted-key JSON document.
    pub fn from_flat_json(text: &str) -> Result<Self> {
        let parsed: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        let flat = parsed
            .as_object()
            .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        let tree = unflatten(flat)?;
        let method_only = flat.contains_key("pretrain.method") && !flat.contains_key("pretrain.loss");
        let mut base = serde_json::to_value(RunConfig::default())?;
        merge(&mut base, tree);
        let mut cfg: RunConfig = serde_json::from_value(base).map_err(|e| Error::Config(e.to_string()))?;
        if method_only {
            cfg.pretrain.loss = cfg.pretrain.method.default_loss();
        }
        Ok(cfg)
    }

    /// Reads a config file; a missing file is a config error naming the path.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
        Self::from_flat_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// The flat form of this config, one dotted key per leaf.
    pub fn to_flat_json(&self) -> Result<Map<String, Value>> {
        fn walk(prefix: &str, v: Value, out: &mut Map<String, Value>) {
            match v {
                Value::Object(m) if !m.is_empty() && !m.contains_key("kind") => {
                    for (k, child) in m {
                        let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
                        walk(&key, child, out);
                    }
                }
                other => {
                    out.insert(prefix.to_string(), other);
                }
            }
        }
        let mut out = Map::new();
        walk("", serde_json::to_value(self)?, &mut out);
        Ok(out)
    }

    pub fn seeds(&self) -> StageSeeds {
        StageSeeds::from_run(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.pretrain.validate()?;
        if self.coarse.size_min == 0 || self.coarse.size_min > self.coarse.size_max {
            return Err(Error::Config(format!(
                "coarse set sizes [{}, {}] are invalid",
                self.coarse.size_min, self.coarse.size_max
            )));
        }
        if self.data.source == DataSource::Synthetic && self.pretrain.encoder.input_dim != self.data.synthetic.dim {
            return Err(Error::Config(format!(
                "encoder input_dim {} does not match synthetic dim {}",
                self.pretrain.encoder.input_dim, self.data.synthetic.dim
            )));
        }
        Ok(())
    }

    /// Pretraining pool and held-out fine-labelled instances.
    pub fn load_data(&self) -> Result<(Vec<LabeledInstance>, Vec<LabeledInstance>)> {
        match self.data.source {
            DataSource::Synthetic => {
                let all = self.data.synthetic.generate(self.seeds().data)?;
                Ok(split_per_class(all, self.data.train_per_class))
            }
            DataSource::Cifar100 => {
                let (Some(train), Some(test)) = (&self.data.cifar_train, &self.data.cifar_test) else {
                    return Err(Error::Config(
                        "data.cifar_train and data.cifar_test are required for cifar100".into(),
                    ));
                };
                load_cifar100(train, test)
            }
        }
    }

    pub fn build_coarse(&self, train: &[LabeledInstance]) -> Result<CoarseDataset> {
        let range = (self.coarse.size_min, self.coarse.size_max);
        let seed = self.seeds().coarse;
        match self.coarse.task {
            CoarseTask::MostFrequent => build_most_frequent_sets(train, self.coarse.sets, range, seed),
            CoarseTask::UniqueCount => build_unique_count_sets(train, self.coarse.sets, range, seed),
        }
    }

    /// Pretraining spec with its seed set from the run seed.
    pub fn pretrain_spec(&self) -> PretrainSpec {
        let mut spec = self.pretrain.clone();
        spec.seed = self.seeds().pretrain;
        spec
    }

    pub fn risk_config(&self) -> Result<RiskConfig> {
        if self.data.source != DataSource::Synthetic {
            return Err(Error::Config("risk curves run on the synthetic hierarchy".into()));
        }
        Ok(RiskConfig {
            data: self.data.synthetic.clone(),
            train_per_class: self.data.train_per_class,
            set_size: (self.coarse.size_min, self.coarse.size_max),
            m0: self.risk.m0,
            pretrain: self.pretrain.clone(),
            c_way: self.risk.c_way,
            query: self.risk.query,
            tasks: self.risk.tasks,
            classifier: self.risk.classifier,
        })
    }
}

/// `(name, sha256)` for each split.
pub fn digests(train: &[LabeledInstance], test: &[LabeledInstance]) -> Vec<(String, String)> {
    vec![
        ("train".to_string(), dataset_digest(train)),
        ("test".to_string(), dataset_digest(test)),
    ]
}
