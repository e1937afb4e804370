//! A small reverse-mode autodiff engine over row-major `f64` tensors.
//!
//! A [`Graph`] records operations on a tape while computing forward values;
//! [`Graph::backward`] walks the tape in reverse and returns gradients for
//! every parameter of the [`ParamTree`] the graph was built over.

mod gradcheck;
mod graph;
pub mod layers;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{gradient_check, GradCheckReport};
pub use graph::{Grads, Graph, Var};
pub use optim::{Adam, AdamConfig, LrSchedule};
pub use params::ParamTree;
pub use tensor::Tensor;

/// Rotary embedding base.
pub const ROPE_BASE: f64 = 10_000.0;
