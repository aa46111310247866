//! Instance encoders, set aggregators and projection heads.
//!
//! Every model is a small config struct that knows how to initialize its
//! parameters under a name prefix and how to record its forward pass on a
//! [`Tape`]. Parameters live in a shared [`Params`] store so that whole
//! pipelines (encoder, aggregator, head) train through one optimizer.

mod aggregators;
mod checkpoint;
mod encoder;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use aggregators::{AggregatorConfig, AggregatorKind, AggregatorOutput};
pub use checkpoint::{CheckpointHeader, ModelCheckpoint};
pub use encoder::{EncoderConfig, Mlp, ProjectionConfig};

use crate::error::{Error, Result};
use crate::tensor::{Bound, Params, Tape, Tensor, Var};

/// Affine map `x W + b` with `W: in × out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Self {
            name: name.into(),
            in_dim,
            out_dim,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    /// Uniform in `±1/√in` for weights and biases.
    pub fn init<R: Rng>(&self, params: &mut Params, rng: &mut R) {
        let bound = 1.0 / (self.in_dim as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let w = draw(self.in_dim * self.out_dim);
        let b = draw(self.out_dim);
        params.insert(
            self.weight_name(),
            Tensor::matrix(self.in_dim, self.out_dim, w).expect("positive dims"),
        );
        params.insert(self.bias_name(), Tensor::vector(b).expect("positive dims"));
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let w = bound.var(&self.weight_name())?;
        let b = bound.var(&self.bias_name())?;
        let xw = tape.matmul(x, w)?;
        tape.broadcast_add(xw, b)
    }
}

pub(crate) fn check_positive(what: &str, dims: &[usize]) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::Config(format!("{what}: dimensions must be positive, got {dims:?}")));
    }
    Ok(())
}

/// Runs `forward` with frozen parameters and returns the output value.
pub fn eval_frozen<F>(params: &Params, forward: F) -> Result<Tensor>
where
    F: FnOnce(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let out = forward(&mut tape, &bound)?;
    Ok(tape.value(out).clone())
}
