//! Control scores and coherence.

mod control;
mod npmi;

pub use control::*;
pub use npmi::*;
