//! Reconstruction of dynamic images from undersampled multi-coil k-space data
//! with convolutional sparsifying filters learned end-to-end through an
//! unrolled splitting network.

// NaN-rejecting guards are written as `!(x > 0.0)` on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod config;
pub mod denoiser;
pub mod error;
pub mod io;
pub mod metrics;
pub mod objective;
pub mod operators;
pub mod pipeline;
pub mod selftest;
pub mod sim;
pub mod solver;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{ComplexVolume, RealVolume, Shape};
