//! Dense matrices, reverse-mode differentiation, parameters, and the optimizer.

mod checkpoint;
pub mod gradcheck;
mod optim;
mod params;
mod tape;

pub use checkpoint::{Checkpoint, NamedTensor};
pub use optim::{AdamConfig, AdamW};
pub use params::{normal, uniform_fan_in, ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var};

/// Row-major `f64` matrix used for every value and gradient.
pub type Matrix = ndarray::Array2<f64>;
