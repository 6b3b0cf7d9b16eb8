//! Reverse-mode automatic differentiation over rank-4 CPU tensors.
//!
//! Tensors are immutable graph nodes. Operations record a backward rule
//! whenever any input requires a gradient and recording is enabled (see
//! [`no_grad`]). [`Tensor::backward`] returns gradients of every leaf that
//! contributed to a scalar output.
//!
//! The element type is generic over [`Float`] so the same network code runs
//! in `f32` for training and in `f64` for finite-difference verification.

mod conv;
mod elementwise;
mod float;
pub mod gradcheck;
mod likelihood;
mod structural;
mod tensor;

pub use conv::ConvGeom;
pub use elementwise::{sigmoid, softplus};
pub use float::{gemm, normal_cdf, normal_pdf, Float};
pub use likelihood::gaussian_bin_mass;
pub use tensor::{grad_enabled, no_grad, numel, Gradients, Shape, Tensor};
