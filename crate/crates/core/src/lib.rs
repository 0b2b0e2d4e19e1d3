//! Steady periodic water waves with affine vorticity: trivial flows, the
//! kernel equation, kernels of prescribed dimension, bifurcation asymptotics
//! and Newton continuation of small-amplitude waves.

pub mod asymptotics;
pub mod cli;
pub mod continuation;
pub mod diophantine;
pub mod error;
pub mod field;
pub mod io;
pub mod kernel_analysis;
pub mod presets;
pub mod spectral;
pub mod trivial_flows;

pub use error::{Result, WaveError};
