//! Full-order solver for the time-fractional diffusion equation on the unit
//! square with homogeneous Neumann boundaries, and the point-sensor
//! observation operator.
//!
//! Space is discretized with a conservative five-point finite-difference
//! stencil, time with the implicit L1 scheme for the Caputo derivative
//! (full history, no memory truncation).

mod grid;
mod observe;
mod operator;
mod solver;

pub use grid::{SpatialGrid, TimeGrid};
pub use observe::{uniform_sensor_layout, ObservationSetup};
pub use operator::{assemble_diffusion_operator, DiffusionOperator};
pub use solver::{
    gaussian_bump_source, l1_weights, solve_forward, ConstantField, FractionalModel,
    GaussianBump, SourceTerm, SpaceField, Trajectory,
};
