//! Permutation-invariant set heads: Deep Sets, attention-based MIL pooling and
//! a one-block Set Transformer (ISAB followed by PMA).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_positive, Linear};
use crate::error::{Error, Result};
use crate::tensor::{Bound, Params, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    DeepsetMean,
    DeepsetSum,
    DeepsetMax,
    AttnMil,
    SetTransformer,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorConfig {
    pub kind: AggregatorKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Attention heads, Set Transformer only.
    pub heads: usize,
    /// Inducing points, Set Transformer only.
    pub inducing_points: usize,
    pub output_dim: usize,
}

/// Set-level output plus the attention maps recorded on the way.
#[derive(Clone, Debug)]
pub struct AggregatorOutput {
    /// `1 × output_dim`.
    pub output: Var,
    /// Softmax-normalized attention matrices (rows sum to one).
    pub attention: Vec<Var>,
}

const P: &str = "agg";

impl AggregatorConfig {
    pub fn new(kind: AggregatorKind, input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Self {
            kind,
            input_dim,
            hidden_dim,
            heads: 4,
            inducing_points: 3,
            output_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("aggregator", &[self.input_dim, self.hidden_dim, self.output_dim])?;
        if self.kind == AggregatorKind::SetTransformer {
            if self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
                return Err(Error::Config(format!(
                    "set transformer: heads ({}) must divide hidden_dim ({})",
                    self.heads, self.hidden_dim
                )));
            }
            if self.inducing_points == 0 {
                return Err(Error::Config("set transformer needs at least one inducing point".into()));
            }
        }
        Ok(())
    }

    fn deepset_layers(&self) -> [Linear; 3] {
        [
            Linear::new(format!("{P}.phi.0"), self.input_dim, self.hidden_dim),
            Linear::new(format!("{P}.phi.1"), self.hidden_dim, self.hidden_dim),
            Linear::new(format!("{P}.rho"), self.hidden_dim, self.output_dim),
        ]
    }

    fn attn_layers(&self) -> [Linear; 3] {
        [
            Linear::new(format!("{P}.attn.v"), self.input_dim, self.hidden_dim),
            Linear::new(format!("{P}.attn.w"), self.hidden_dim, 1),
            Linear::new(format!("{P}.out"), self.input_dim, self.output_dim),
        ]
    }

    fn mabs(&self) -> [Mab; 3] {
        let h = self.hidden_dim;
        [
            Mab::new(&format!("{P}.isab.0"), h, self.input_dim, h, self.heads),
            Mab::new(&format!("{P}.isab.1"), self.input_dim, h, h, self.heads),
            Mab::new(&format!("{P}.pma"), h, h, h, self.heads),
        ]
    }

    fn st_head(&self) -> Linear {
        Linear::new(format!("{P}.out"), self.hidden_dim, self.output_dim)
    }

    pub fn init<R: Rng>(&self, rng: &mut R) -> Result<Params> {
        self.validate()?;
        let mut p = Params::new();
        match self.kind {
            AggregatorKind::DeepsetMean | AggregatorKind::DeepsetSum | AggregatorKind::DeepsetMax => {
                self.deepset_layers().iter().for_each(|l| l.init(&mut p, rng))
            }
            AggregatorKind::AttnMil => self.attn_layers().iter().for_each(|l| l.init(&mut p, rng)),
            AggregatorKind::SetTransformer => {
                let bound = 1.0 / (self.hidden_dim as f64).sqrt();
                let mut draw = |rows: usize| {
                    let data = (0..rows * self.hidden_dim)
                        .map(|_| rng.random_range(-bound..bound))
                        .collect();
                    Tensor::matrix(rows, self.hidden_dim, data).expect("positive dims")
                };
                p.insert(format!("{P}.inducing"), draw(self.inducing_points));
                p.insert(format!("{P}.seed"), draw(1));
                for m in self.mabs() {
                    m.init(&mut p, rng);
                }
                self.st_head().init(&mut p, rng);
            }
        }
        Ok(p)
    }

    /// Maps one set (`a × input_dim`, `a ≥ 1`) to a `1 × output_dim` prediction.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, set: Var) -> Result<AggregatorOutput> {
        let s = tape.shape(set).to_vec();
        if s.len() != 2 || s[1] != self.input_dim {
            return Err(Error::shape("aggregator_forward", &s, &[self.input_dim]));
        }
        let a = s[0];
        match self.kind {
            AggregatorKind::DeepsetMean | AggregatorKind::DeepsetSum | AggregatorKind::DeepsetMax => {
                let [phi0, phi1, rho] = self.deepset_layers();
                let h = phi0.forward(tape, bound, set)?;
                let h = tape.relu(h);
                let h = phi1.forward(tape, bound, h)?;
                let pooled = match self.kind {
                    AggregatorKind::DeepsetMean => tape.mean(h, 0)?,
                    AggregatorKind::DeepsetSum => tape.sum(h, 0)?,
                    _ => tape.max(h, 0)?,
                };
                let pooled = tape.reshape(pooled, vec![1, self.hidden_dim])?;
                Ok(AggregatorOutput {
                    output: rho.forward(tape, bound, pooled)?,
                    attention: Vec::new(),
                })
            }
            AggregatorKind::AttnMil => {
                let [v, w, out] = self.attn_layers();
                let hidden = v.forward(tape, bound, set)?;
                let hidden = tape.tanh(hidden);
                let scores = w.forward(tape, bound, hidden)?;
                let scores = tape.reshape(scores, vec![1, a])?;
                let weights = tape.softmax(scores, 1)?;
                let pooled = tape.matmul(weights, set)?;
                Ok(AggregatorOutput {
                    output: out.forward(tape, bound, pooled)?,
                    attention: vec![weights],
                })
            }
            AggregatorKind::SetTransformer => {
                let [mab0, mab1, pma] = self.mabs();
                let mut attention = Vec::new();
                let inducing = bound.var(&format!("{P}.inducing"))?;
                let seed = bound.var(&format!("{P}.seed"))?;
                let summary = mab0.forward(tape, bound, inducing, set, &mut attention)?;
                let encoded = mab1.forward(tape, bound, set, summary, &mut attention)?;
                let pooled = pma.forward(tape, bound, seed, encoded, &mut attention)?;
                Ok(AggregatorOutput {
                    output: self.st_head().forward(tape, bound, pooled)?,
                    attention,
                })
            }
        }
    }

    /// Runs every set in `sets` (given as row ranges of `instances`) and stacks
    /// the outputs into `num_sets × output_dim`.
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        instances: Var,
        ranges: &[(usize, usize)],
    ) -> Result<Var> {
        if ranges.is_empty() {
            return Err(Error::Contract("aggregator batch with no sets".into()));
        }
        let mut outs = Vec::with_capacity(ranges.len());
        for &(start, end) in ranges {
            if start >= end {
                return Err(Error::Contract("aggregator_forward on an empty set".into()));
            }
            let set = tape.slice_rows(instances, start, end)?;
            outs.push(self.forward(tape, bound, set)?.output);
        }
        tape.concat(&outs, 0)
    }
}

/// Multihead attention block `MAB(Q, K) = H + relu(H W_o + b_o)` with
/// `H = Q W_q + Attention(Q W_q, K W_k, K W_v)`.
struct Mab {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
    dim: usize,
}

impl Mab {
    fn new(prefix: &str, q_dim: usize, k_dim: usize, dim: usize, heads: usize) -> Self {
        Self {
            q: Linear::new(format!("{prefix}.q"), q_dim, dim),
            k: Linear::new(format!("{prefix}.k"), k_dim, dim),
            v: Linear::new(format!("{prefix}.v"), k_dim, dim),
            o: Linear::new(format!("{prefix}.o"), dim, dim),
            heads,
            dim,
        }
    }

    fn init<R: Rng>(&self, p: &mut Params, rng: &mut R) {
        for l in [&self.q, &self.k, &self.v, &self.o] {
            l.init(p, rng);
        }
    }

    fn forward(&self, tape: &mut Tape, bound: &Bound, query: Var, keys: Var, attention: &mut Vec<Var>) -> Result<Var> {
        let q = self.q.forward(tape, bound, query)?;
        let k = self.k.forward(tape, bound, keys)?;
        let v = self.v.forward(tape, bound, keys)?;
        let head_dim = self.dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut heads = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
            let qh = tape.slice_cols(q, lo, hi)?;
            let kh = tape.slice_cols(k, lo, hi)?;
            let vh = tape.slice_cols(v, lo, hi)?;
            let kt = tape.transpose(kh)?;
            let logits = tape.matmul(qh, kt)?;
            let logits = tape.scale(logits, scale);
            let weights = tape.softmax(logits, 1)?;
            attention.push(weights);
            let mixed = tape.matmul(weights, vh)?;
            heads.push(tape.add(qh, mixed)?);
        }
        let h = tape.concat(&heads, 1)?;
        let ff = self.o.forward(tape, bound, h)?;
        let ff = tape.relu(ff);
        tape.add(h, ff)
    }
}
