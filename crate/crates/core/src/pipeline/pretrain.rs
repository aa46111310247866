use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AugmentPolicy, CoarseDataset, CoarseTask};
use crate::error::{Error, Result};
use crate::losses::{self, ContrastiveBatch, LossKind};
use crate::models::{AggregatorConfig, AggregatorKind, EncoderConfig, Linear, Mlp, ProjectionConfig};
use crate::tensor::{sgd_step, Bound, Params, SgdConfig, SgdState, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainMethod {
    FacileFsp,
    FacileSupcon,
    FspPatch,
    Simclr,
    Simsiam,
    RandomInit,
}

impl PretrainMethod {
    pub fn default_loss(self) -> LossKind {
        match self {
            PretrainMethod::FacileFsp | PretrainMethod::FspPatch | PretrainMethod::RandomInit => LossKind::Ce,
            PretrainMethod::FacileSupcon => LossKind::Supcon,
            PretrainMethod::Simclr => LossKind::Simclr,
            PretrainMethod::Simsiam => LossKind::Simsiam,
        }
    }

    fn accepts(self, loss: LossKind) -> bool {
        matches!(
            (self, loss),
            (PretrainMethod::FacileFsp, LossKind::Ce | LossKind::L1)
                | (PretrainMethod::FacileSupcon, LossKind::Supcon)
                | (PretrainMethod::FspPatch, LossKind::Ce)
                | (PretrainMethod::Simclr, LossKind::Simclr)
                | (PretrainMethod::Simsiam, LossKind::Simsiam)
                | (PretrainMethod::RandomInit, _)
        )
    }
}

/// Optimizer settings; the step count is derived from epochs and batch size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSpec {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimSpec {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }
}

/// Set head and projection sizes shared by every pretraining method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadSpec {
    pub aggregator: AggregatorKind,
    pub hidden_dim: usize,
    pub heads: usize,
    pub inducing_points: usize,
    pub projection_dim: usize,
}

impl Default for HeadSpec {
    fn default() -> Self {
        Self {
            aggregator: AggregatorKind::SetTransformer,
            hidden_dim: 64,
            heads: 4,
            inducing_points: 3,
            projection_dim: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSpec {
    pub method: PretrainMethod,
    pub loss: LossKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimSpec,
    pub augmentation: AugmentPolicy,
    pub temperature: f64,
    pub encoder: EncoderConfig,
    pub head: HeadSpec,
    pub seed: u64,
}

impl Default for PretrainSpec {
    fn default() -> Self {
        Self::new(PretrainMethod::FacileFsp, EncoderConfig::default())
    }
}

impl PretrainSpec {
    pub fn new(method: PretrainMethod, encoder: EncoderConfig) -> Self {
        Self {
            method,
            loss: method.default_loss(),
            epochs: 50,
            batch_size: 16,
            optim: OptimSpec::default(),
            augmentation: AugmentPolicy::None,
            temperature: losses::DEFAULT_TEMPERATURE,
            encoder,
            head: HeadSpec::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if !self.method.accepts(self.loss) {
            return Err(Error::Config(format!(
                "method {:?} cannot train with loss {:?}",
                self.method, self.loss
            )));
        }
        if self.method != PretrainMethod::RandomInit && (self.epochs == 0 || self.batch_size == 0) {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        Ok(())
    }

    pub fn aggregator_config(&self, output_dim: usize) -> AggregatorConfig {
        AggregatorConfig {
            kind: self.head.aggregator,
            input_dim: self.encoder.embed_dim,
            hidden_dim: self.head.hidden_dim,
            heads: self.head.heads,
            inducing_points: self.head.inducing_points,
            output_dim,
        }
    }

    fn projection(&self, input_dim: usize) -> ProjectionConfig {
        ProjectionConfig {
            input_dim,
            hidden_dim: self.head.hidden_dim,
            out_dim: self.head.projection_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainOutput {
    /// Encoder parameters only; heads are dropped.
    pub encoder: Params,
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    /// Every non-encoder parameter (set head, projections).
    pub heads: Params,
    /// Set head used during training, for set-level methods.
    pub aggregator: Option<AggregatorConfig>,
}

impl PretrainOutput {
    pub fn initial_loss(&self) -> Option<f64> {
        self.step_losses.first().copied()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

const PROJ: &str = "proj";
const PRED: &str = "pred";

/// The trainable graph for one method: parameter init plus a batch loss.
struct Objective<'a> {
    spec: &'a PretrainSpec,
    data: &'a CoarseDataset,
    /// Training examples: set indices for set-level methods, `(instance, label)`
    /// pairs for FSP-Patch, instance indices for self-supervised methods.
    examples: Vec<(usize, usize)>,
    aggregator: Option<AggregatorConfig>,
    patch_head: Option<Linear>,
}

impl<'a> Objective<'a> {
    fn new(spec: &'a PretrainSpec, data: &'a CoarseDataset) -> Result<Self> {
        if data.dim() != spec.encoder.input_dim {
            return Err(Error::Config(format!(
                "coarse data has dimension {}, encoder expects {}",
                data.dim(),
                spec.encoder.input_dim
            )));
        }
        if spec.loss == LossKind::L1 && data.task != CoarseTask::UniqueCount {
            return Err(Error::Config("l1 loss needs the unique_count coarse task".into()));
        }
        let (examples, aggregator, patch_head) = match spec.method {
            PretrainMethod::FacileFsp | PretrainMethod::FacileSupcon => {
                let out = match (spec.method, spec.loss) {
                    (PretrainMethod::FacileSupcon, _) => spec.head.hidden_dim,
                    (_, LossKind::L1) => 1,
                    _ => data.num_classes(),
                };
                let agg = spec.aggregator_config(out);
                agg.validate()?;
                let ex = data.sets.iter().enumerate().map(|(i, s)| (i, s.label)).collect();
                (ex, Some(agg), None)
            }
            PretrainMethod::FspPatch => {
                let ex = data
                    .sets
                    .iter()
                    .flat_map(|s| s.members.iter().map(move |&m| (m, s.label)))
                    .collect();
                let head = Linear::new("head", spec.encoder.embed_dim, data.num_classes());
                (ex, None, Some(head))
            }
            PretrainMethod::Simclr | PretrainMethod::Simsiam => ((0..data.features.len()).map(|i| (i, 0)).collect(), None, None),
            PretrainMethod::RandomInit => (Vec::new(), None, None),
        };
        Ok(Self {
            spec,
            data,
            examples,
            aggregator,
            patch_head,
        })
    }

    fn init<R: Rng>(&self, rng: &mut R) -> Result<Params> {
        let spec = self.spec;
        let mut p = spec.encoder.init(rng);
        if let Some(agg) = &self.aggregator {
            p.extend(agg.init(rng)?);
        }
        if let Some(head) = &self.patch_head {
            head.init(&mut p, rng);
        }
        match spec.method {
            PretrainMethod::FacileSupcon => p.extend(spec.projection(spec.head.hidden_dim).init(PROJ, rng)),
            PretrainMethod::Simclr => p.extend(spec.projection(spec.encoder.embed_dim).init(PROJ, rng)),
            PretrainMethod::Simsiam => {
                let h = spec.head;
                Mlp::new(PROJ, &[spec.encoder.embed_dim, h.hidden_dim, h.projection_dim]).init(&mut p, rng);
                Mlp::new(PRED, &[h.projection_dim, h.hidden_dim, h.projection_dim]).init(&mut p, rng);
            }
            _ => {}
        }
        Ok(p)
    }

    fn view<R: Rng>(&self, row: usize, rng: &mut R) -> Result<Vec<f64>> {
        self.spec.augmentation.apply(&self.data.features[row], rng)
    }

    /// Concatenates views of the listed sets; returns the instance matrix and row ranges.
    fn set_rows<R: Rng>(&self, sets: &[usize], rng: &mut R) -> Result<(Tensor, Vec<(usize, usize)>)> {
        let mut rows = Vec::new();
        let mut ranges = Vec::with_capacity(sets.len());
        for &s in sets {
            let start = rows.len();
            for &m in &self.data.sets[s].members {
                rows.push(self.view(m, rng)?);
            }
            ranges.push((start, rows.len()));
        }
        Ok((Tensor::from_rows(&rows)?, ranges))
    }

    fn loss<R: Rng>(&self, tape: &mut Tape, bound: &Bound, batch: &[(usize, usize)], rng: &mut R) -> Result<Var> {
        let spec = self.spec;
        let enc = &spec.encoder;
        let ids: Vec<usize> = batch.iter().map(|e| e.0).collect();
        let labels: Vec<usize> = batch.iter().map(|e| e.1).collect();
        match spec.method {
            PretrainMethod::FacileFsp => {
                let agg = self.aggregator.as_ref().expect("set method has an aggregator");
                let (x, ranges) = self.set_rows(&ids, rng)?;
                let x = tape.constant(x);
                let h = enc.forward(tape, bound, x)?;
                let out = agg.forward_batch(tape, bound, h, &ranges)?;
                if spec.loss == LossKind::L1 {
                    let pred = tape.reshape(out, vec![batch.len()])?;
                    let target = Tensor::vector(labels.iter().map(|&l| l as f64).collect())?;
                    let target = tape.constant(target);
                    losses::l1_loss(tape, pred, target)
                } else {
                    losses::cross_entropy(tape, out, &labels)
                }
            }
            PretrainMethod::FacileSupcon => {
                let agg = self.aggregator.as_ref().expect("set method has an aggregator");
                let doubled: Vec<usize> = ids.iter().flat_map(|&i| [i, i]).collect();
                let (x, ranges) = self.set_rows(&doubled, rng)?;
                let x = tape.constant(x);
                let h = enc.forward(tape, bound, x)?;
                let feats = agg.forward_batch(tape, bound, h, &ranges)?;
                let z = spec.projection(spec.head.hidden_dim).forward(PROJ, tape, bound, feats)?;
                let batch = ContrastiveBatch {
                    z,
                    labels: Some(labels),
                    temperature: spec.temperature,
                };
                Ok(losses::supcon_loss(tape, &batch)?.mean)
            }
            PretrainMethod::FspPatch => {
                let rows = ids.iter().map(|&i| self.view(i, rng)).collect::<Result<Vec<_>>>()?;
                let x = tape.constant(Tensor::from_rows(&rows)?);
                let h = enc.forward(tape, bound, x)?;
                let logits = self.patch_head.as_ref().expect("patch head").forward(tape, bound, h)?;
                losses::cross_entropy(tape, logits, &labels)
            }
            PretrainMethod::Simclr => {
                let mut rows = Vec::with_capacity(2 * ids.len());
                for &i in &ids {
                    rows.push(self.view(i, rng)?);
                    rows.push(self.view(i, rng)?);
                }
                let x = tape.constant(Tensor::from_rows(&rows)?);
                let h = enc.forward(tape, bound, x)?;
                let z = spec.projection(enc.embed_dim).forward(PROJ, tape, bound, h)?;
                let batch = ContrastiveBatch {
                    z,
                    labels: None,
                    temperature: spec.temperature,
                };
                Ok(losses::simclr_loss(tape, &batch)?.mean)
            }
            PretrainMethod::Simsiam => {
                let h = spec.head;
                let proj = Mlp::new(PROJ, &[enc.embed_dim, h.hidden_dim, h.projection_dim]);
                let pred = Mlp::new(PRED, &[h.projection_dim, h.hidden_dim, h.projection_dim]);
                let branch = |tape: &mut Tape, rng: &mut R| -> Result<(Var, Var)> {
                    let rows = ids.iter().map(|&i| self.view(i, rng)).collect::<Result<Vec<_>>>()?;
                    let x = tape.constant(Tensor::from_rows(&rows)?);
                    let e = enc.forward(tape, bound, x)?;
                    let z = proj.forward(tape, bound, e)?;
                    let p = pred.forward(tape, bound, z)?;
                    Ok((p, z))
                };
                let (p1, z1) = branch(tape, rng)?;
                let (p2, z2) = branch(tape, rng)?;
                losses::simsiam_loss(tape, p1, z1, p2, z2)
            }
            PretrainMethod::RandomInit => unreachable!("random init does not train"),
        }
    }
}

/// Pretrains an instance encoder from coarse set labels (or, for the
/// self-supervised baselines, from the instance pool alone).
///
/// Parameters are drawn from `seed` on stream 0 and batching/augmentation use
/// stream 1, so every method starts from the same encoder as `random_init`.
pub fn pretrain_coarse(spec: &PretrainSpec, data: &CoarseDataset) -> Result<PretrainOutput> {
    spec.validate()?;
    if data.is_empty() || data.features.is_empty() {
        return Err(Error::EmptyDataset("coarse dataset has no sets".into()));
    }
    let obj = Objective::new(spec, data)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut params = obj.init(&mut init_rng)?;
    let encoder_prefix = format!("{}.", EncoderConfig::PREFIX);
    if spec.method == PretrainMethod::RandomInit {
        return Ok(PretrainOutput {
            encoder: params.with_prefix(&encoder_prefix),
            step_losses: Vec::new(),
            epoch_losses: Vec::new(),
            steps: 0,
            heads: Params::new(),
            aggregator: None,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let per_epoch = obj.examples.len().div_ceil(spec.batch_size);
    let sgd = SgdConfig {
        lr0: spec.optim.lr0,
        momentum: spec.optim.momentum,
        weight_decay: spec.optim.weight_decay,
        total_steps: spec.epochs * per_epoch,
    };
    sgd.validate()?;
    let mut state = SgdState::default();
    let mut order = obj.examples.clone();
    let mut step_losses = Vec::with_capacity(sgd.total_steps);
    let mut epoch_losses = Vec::with_capacity(spec.epochs);
    let mut step = 0;
    for _ in 0..spec.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        for batch in order.chunks(spec.batch_size) {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let loss = obj.loss(&mut tape, &bound, batch, &mut rng)?;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::Divergence { step, loss: value });
            }
            tape.backward(loss)?;
            let grads = bound.grads(&tape);
            sgd_step(&mut params, &grads, &mut state, &sgd, step)?;
            step_losses.push(value);
            epoch_sum += value * batch.len() as f64;
            step += 1;
        }
        epoch_losses.push(epoch_sum / order.len() as f64);
    }
    let encoder = params.with_prefix(&encoder_prefix);
    let heads = params.without_prefix(&encoder_prefix);
    Ok(PretrainOutput {
        encoder,
        step_losses,
        epoch_losses,
        steps: step,
        heads,
        aggregator: obj.aggregator,
    })
}
