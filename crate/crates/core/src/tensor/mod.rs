//! Dense tensors, a reverse-mode tape, parameter stores and SGD.

pub mod gradcheck;
mod optim;
mod params;
mod tape;
mod value;

pub use optim::{sgd_step, SgdConfig, SgdState};
pub use params::{Bound, Grads, Params};
pub use tape::{OpKind, Tape, Var};
pub use value::Tensor;

pub(crate) use tape::norm;
