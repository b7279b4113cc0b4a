//! Dense `f64` tensors, a define-by-run reverse-mode autodiff graph, a named
//! parameter store with Adam, and finite-difference gradient checking.

mod adam;
mod error;
mod gradcheck;
mod graph;
mod kernels;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, ParamCheck};
pub use graph::{log_sum_exp, CustomOp, Gradients, Graph, Var};
pub use params::{BoundParams, ParamBinder, ParamEntry, ParameterStore};
pub use tensor::Tensor;
