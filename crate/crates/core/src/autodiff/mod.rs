//! Differentiable-array substrate: dense tensors, a reverse-mode tape, and a
//! finite-difference gradient checker.

pub mod gradcheck;
mod graph;
pub mod kernels;
mod params;
mod scalar;
mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, Stencil};
pub use graph::{Gradients, Graph, Var, LAYER_NORM_EPS};
pub use params::{ParamId, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tensor::{numel, Tensor};
