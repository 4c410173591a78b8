//! Shear-wave elastography toolkit: simulate push-induced shear waves and RF
//! speckle sequences, track axial micro-displacements, reconstruct
//! shear-wave-speed and Young's-modulus maps by time of flight, and score
//! them.

pub mod data;
pub mod elastic;
pub mod error;
pub mod metrics;
pub mod rf;
pub mod sws;
pub mod tracking;

pub(crate) mod interp;

pub use error::{Error, Result};
pub use interp::bilinear_clamped;
