use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_positive, eval_frozen, Linear};
use crate::error::{Error, Result};
use crate::tensor::{Bound, Params, Tape, Tensor, Var};

/// Stack of [`Linear`] layers with ReLU between consecutive layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(prefix: &str, dims: &[usize]) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(format!("{prefix}.{i}"), w[0], w[1]))
            .collect();
        Self { layers }
    }

    pub fn init<R: Rng>(&self, params: &mut Params, rng: &mut R) {
        for l in &self.layers {
            l.init(params, rng);
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = tape.relu(h);
            }
            h = layer.forward(tape, bound, h)?;
        }
        Ok(h)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_dim: 128,
            hidden_dims: vec![256, 128],
            embed_dim: 64,
        }
    }
}

impl EncoderConfig {
    pub const PREFIX: &'static str = "encoder";

    pub fn validate(&self) -> Result<()> {
        check_positive("encoder", &self.dims())
    }

    fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(self.embed_dim);
        dims
    }

    pub fn mlp(&self) -> Mlp {
        Mlp::new(Self::PREFIX, &self.dims())
    }

    pub fn init<R: Rng>(&self, rng: &mut R) -> Params {
        let mut p = Params::new();
        self.mlp().init(&mut p, rng);
        p
    }

    /// `B × input_dim` → `B × embed_dim`; rows never interact.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, batch: Var) -> Result<Var> {
        let s = tape.shape(batch);
        if s.len() != 2 || s[1] != self.input_dim {
            return Err(Error::shape("encoder_forward", s, &[self.input_dim]));
        }
        self.mlp().forward(tape, bound, batch)
    }

    /// Embeds raw rows with frozen parameters.
    pub fn embed<R: AsRef<[f64]>>(&self, params: &Params, rows: &[R]) -> Result<Tensor> {
        if rows.is_empty() {
            return Err(Error::Contract("encoder_forward on an empty batch".into()));
        }
        let x = Tensor::from_rows(rows)?;
        eval_frozen(params, |tape, bound| {
            let xv = tape.constant(x);
            self.forward(tape, bound, xv)
        })
    }
}

/// Two-layer head with ReLU in between and a unit-norm output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
}

impl ProjectionConfig {
    pub const NORM_EPS: f64 = 1e-12;

    pub fn validate(&self) -> Result<()> {
        check_positive("projection", &[self.input_dim, self.hidden_dim, self.out_dim])
    }

    pub fn mlp(&self, prefix: &str) -> Mlp {
        Mlp::new(prefix, &[self.input_dim, self.hidden_dim, self.out_dim])
    }

    pub fn init<R: Rng>(&self, prefix: &str, rng: &mut R) -> Params {
        let mut p = Params::new();
        self.mlp(prefix).init(&mut p, rng);
        p
    }

    /// affine → ReLU → affine → row-wise l2 normalization.
    pub fn forward(&self, prefix: &str, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let s = tape.shape(x);
        if s.len() != 2 || s[1] != self.input_dim {
            return Err(Error::shape("projection_forward", s, &[self.input_dim]));
        }
        let h = self.mlp(prefix).forward(tape, bound, x)?;
        tape.l2_normalize(h, 1, Self::NORM_EPS)
    }
}
