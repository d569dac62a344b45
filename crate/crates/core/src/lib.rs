//! Reduced-basis ensemble Kalman inversion (RB-EKI) for time-fractional
//! diffusion inverse problems.
//!
//! The crate is organized bottom-up:
//!
//! * [`tfpde`]: full-order L1/finite-difference solver and sensors.
//! * [`pod`]: snapshot matrices and the POD reduced basis.
//! * [`dsrbf`]: doubly stochastic RBF regression with stochastic LOOCV
//!   shape selection.
//! * [`surrogate`]: the POD-DSRBF non-intrusive reduced model.
//! * [`eki`]: regularized ensemble Kalman inversion.
//! * [`experiments`]: problem definitions and drivers for the source
//!   localization and diffusivity identification studies.

pub mod dsrbf;
pub mod eki;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod pod;
pub mod rng;
pub mod surrogate;
pub mod tfpde;
mod textio;

pub use error::{Error, Result};
