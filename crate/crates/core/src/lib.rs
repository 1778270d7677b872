//! Three-layer networks trained by one-pass SGD, their mean-field limit, and
//! the coupling between the two.

pub mod coupling;
pub mod data;
pub mod embedding;
pub mod error;
pub mod harness;
pub mod io;
pub mod math;
pub mod metrics;
pub mod mf;
pub mod net;

pub use error::{Error, Result};
