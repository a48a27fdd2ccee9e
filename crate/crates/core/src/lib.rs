//! Grounded prediction networks.
//!
//! A single recurrent state vector, one SwiGLU FFN and one gated delta-rule
//! matrix memory, revisited every token. The crate provides the model with
//! hand-derived BPTT gradients, an AdamW trainer for byte-level corpora, and
//! analysis tools that look directly at the trained state: its geometry, its
//! mean direction, and how long content survives in the state and in each
//! memory head.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod exec;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use error::{GpnError, Result};
