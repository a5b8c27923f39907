//! Modular Bayesian inverse uncertainty quantification.
//!
//! Experimental tests are split between inverse UQ and validation, a
//! Gaussian-process emulator of the model discrepancy is trained on the
//! validation tests, a second emulator replaces the simulator, and the
//! calibration parameters are sampled with adaptive Metropolis.

pub mod dataio;
pub mod doe;
pub mod error;
pub mod gp;
pub mod inference;
pub mod modular_bayes;
pub mod optim;
pub mod pipeline;
pub mod posterior;
pub mod toymodel;
pub mod tsa;

pub use error::{Error, Result};
