//! Gradient computation, optimization and verification for the unrolled
//! network.

mod adam;
mod backward;
mod fdcheck;
mod trainer;

pub use adam::{adam_step, adam_step_with_rates, AdamState, TrainConfig};
pub use backward::{network_backward, network_backward_with_stats, BackwardStats, Gradients};
pub use fdcheck::{finite_diff_check, FdProblem, FdReport};
pub use trainer::{mean_loss, train, EpochRecord, Sample, TrainOutcome};

use crate::error::Result;
use crate::tensor::ComplexVolume;

/// Squared L2 error over the two-channel real view.
pub fn loss_l2(x_out: &ComplexVolume, x_ref: &ComplexVolume) -> Result<f64> {
    Ok(x_out.sub(x_ref)?.norm_sqr())
}

/// Gradient of [`loss_l2`] with respect to `x_out`.
pub fn loss_l2_grad(x_out: &ComplexVolume, x_ref: &ComplexVolume) -> Result<ComplexVolume> {
    Ok(x_out.sub(x_ref)?.scaled(2.0))
}
