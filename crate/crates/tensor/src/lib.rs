//! Minimal dense-tensor substrate with reverse-mode gradients.
//!
//! Values live in row-major [`Tensor`]s. Differentiable computations are
//! recorded on a [`Graph`] that is rebuilt for every evaluation; calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! gradients for every parameter and every input leaf that asked for one.
//!
//! Everything is generic over [`Real`] so the same model code runs in 32-bit
//! (training) and 64-bit (gradient checking).

mod error;
mod gemm;
mod graph;
mod real;
mod tensor;

pub mod conv;
pub mod gradcheck;
pub mod init;
pub mod lstm;
pub mod rng;

pub use conv::ConvGeometry;
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use real::Real;
pub use tensor::{ParamSet, Tensor};
