//! Reference methods: decoupled filter pretraining and the
//! alternating-minimization solver of the relaxed objective.

mod altmin;
mod caol;

pub use altmin::{alternating_min_reconstruct, AltMinOutcome};
pub use caol::{caol_pretrain, default_sparsity_alpha, CaolConfig, CaolOutcome};
