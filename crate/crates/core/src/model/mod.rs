//! The grounded-prediction recurrence.
//!
//! One step: Ground fuses the observed token into the carried state, the
//! matrix memory is written (GPN+M only), Predict refines the grounded state
//! with a gated residual, the FFN and the memory read, and Decode scores the
//! next token from the predicted state.

mod backward;
mod config;
mod forward;
mod ops;
mod params;

pub use backward::{backward_bptt, backward_weighted};
pub use config::{Mode, ModelConfig};
pub use forward::{
    forward_batch, forward_sequence, log_decay, BatchForward, DecayLog, MemTrace, StateBundle, Stepper, Trace,
};
pub use ops::{cross_entropy, decode_loss, ground, mem_read, mem_read_raw, mem_write, predict, step};
pub use params::{
    count_params, init_params, param_specs, random_params, Init, MemoryParams, ParamGrads, ParamSpec, Params,
};

use crate::error::Result;
use crate::numerics::Real;

/// Mean CE and its gradient for one batch of equal-length sequences.
pub fn loss_and_grad<R: Real, S: AsRef<[u32]>>(
    p: &Params<R>,
    seqs: &[S],
    trunc: Option<usize>,
) -> Result<(f64, ParamGrads<R>)> {
    let fwd = forward_batch(p, StateBundle::initial(p, seqs.len()), seqs)?;
    let g = backward_bptt(p, &fwd.trace, trunc)?;
    Ok((fwd.mean_ce(), g))
}

#[cfg(test)]
mod tests;
