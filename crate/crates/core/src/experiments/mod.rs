//! Problem definitions and experiment drivers.
//!
//! Three inverse problems share one pipeline: sample training parameters,
//! solve the coarse full model, build the POD basis and the surrogate,
//! generate data on a finer grid, then invert at each noise level with
//! RB-EKI (and optionally with EKI on the coarse full model).

mod config;
mod convergence;
mod data;
mod kl;
mod offline;
mod problem;
mod study;
mod validate;

pub use config::{ExperimentConfig, NoiseLevelMode, ProblemKind};
pub use convergence::{
    forward_convergence, observed_order, spatial_study, temporal_study, ConvergencePoint,
    ConvergenceStudy, Refinement,
};
pub use data::{
    add_noise, compute_metrics, correlation, draw_standard_noise, generate_synthetic_data,
    relative_error, SyntheticData,
};
pub use kl::{kl_expansion, KlDiffusivity, KlField, KlLogField};
pub use offline::{
    build_offline, pod_criterion, train_options, training_time_indices, OfflineStage,
    OfflineTimings,
};
pub use problem::{FullForward, Problem, KL_SOURCE_CENTER};
pub use study::{
    run_example1, run_example1_alpha, run_example2, run_study, MethodRun, StudyReport,
    TimingComparison, DIRECT_EKI, RB_EKI,
};
pub use validate::{evaluate_configuration, validate_surrogate, SweepEntry, ValidationSet};
