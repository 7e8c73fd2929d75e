//! Numerical laboratory for charge transfer Schrodinger models: periodic-box
//! fields, split-step propagators, bound states, channel projections and
//! probes of dispersive estimates.

pub mod error;
pub mod estimators;
pub mod gridfield;
pub mod potentials;
pub mod propagator;
pub mod scattering;
pub mod spectrum;
pub mod symmetries;

pub use error::{Error, Result};
pub use gridfield::{Grid, GridParams, ScalarField, SpinorField, Vec3};
