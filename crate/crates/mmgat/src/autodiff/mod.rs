//! Minimal dense-tensor reverse-mode automatic differentiation.
//!
//! A [`Tape`] records the forward pass as a list of nodes with backward
//! closures; [`Tape::backward`] replays them in strict reverse order.
//! The operation set is exactly what the pose model needs: matmul, bias,
//! (leaky) ReLU, row gather/concat/scale, segment softmax/sum/mean,
//! inverted dropout and the two losses. [`AdamState`] and [`LrSchedule`]
//! cover the optimizer side.

pub mod kernels;
mod optim;
mod tape;
mod tensor;

pub use optim::{adam_step, AdamState, LrSchedule, OptimError};
pub use tape::{Tape, Var};
pub use tensor::{ParamEntry, ParamSet, Tensor, TensorError};
