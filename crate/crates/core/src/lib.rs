//! Trainable write-time memory gating for embodied agents on a small
//! grid-world household simulator.

pub mod backbone;
pub mod error;
pub mod eval;
pub mod gate;
pub mod io;
pub mod memory;
pub mod memworld;
pub mod nn;
pub mod pipeline;
pub mod train;

pub use error::{Error, Result};
