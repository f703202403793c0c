//! Reverse-mode automatic differentiation over dense tensors.

mod adam;
pub mod checkpoint;
mod float;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use checkpoint::Checkpoint;
pub use float::Float;
pub use gradcheck::{grad_check, grad_check_params, op_suite, Probed, relative_error, CheckResult};
pub use tape::{BinaryOp, Gradients, Tape, UnaryOp, Var};
pub use tensor::{ParamId, ParamStore, Tensor};
