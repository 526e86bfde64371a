//! Simulation of a diamond NV-center nuclear-spin gyroscope.
//!
//! The ¹⁴N nuclear spin of an NV ensemble is hyperpolarised, prepared in a
//! double-quantum superposition and read out through the electron spin. A
//! rotation about the NV axis appears as a pseudo-field on the nucleus and
//! shifts the Ramsey fringe. Interleaved electron-spin measurements track the
//! magnetic field and temperature so that their drifts can be subtracted.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod comag;
pub mod drift;
pub mod dynamics;
pub mod error;
pub mod fit;
pub mod harness;
pub mod noise;
pub mod protocol;
pub mod spin;
pub mod timeseries;

pub use error::{Error, Result};
