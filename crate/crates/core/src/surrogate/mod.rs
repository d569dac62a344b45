//! Non-intrusive POD-DSRBF reduced model.
//!
//! Each POD coefficient `a_k(t; theta)`, sampled on a tensor grid of
//! training times and parameters, is factored by an SVD into separable
//! time modes and parameter modes. Every mode is then learned by its own
//! DSRBF model, which gives a continuous surrogate
//! `a~_k(t, theta) = sum_l lambda_l^k psi~_l^k(t) phi~_l^k(theta)`.

mod model;
mod tensor;
mod validation;

pub use model::{train, ModeModel, ShapeStrategy, Surrogate, TrainOptions};
pub use tensor::{
    build_training_set, tensor_decompose, CoefficientTensor, ModeDecomposition, ModeTruncation,
};
pub use validation::{
    validation_errors, validation_errors_from_trajectories, write_validation_csv,
    CoefficientPredictor, PointError, ValidationReport, ValidationRow,
};
