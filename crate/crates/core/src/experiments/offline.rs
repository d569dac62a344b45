use std::time::Instant;

use nalgebra::DMatrix;

use super::config::ExperimentConfig;
use super::problem::FullForward;
use crate::dsrbf::ShapeBounds;
use crate::error::Result;
use crate::pod::{build_snapshot_matrix, compute_pod, PodBasis, PodCriterion};
use crate::rng::SeedTree;
use crate::surrogate::{train, CoefficientTensor, ModeTruncation, ShapeStrategy, Surrogate, TrainOptions};
use crate::tfpde::Trajectory;

/// Wall-clock seconds of the offline steps.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OfflineTimings {
    pub snapshots: f64,
    pub pod: f64,
    pub training: f64,
}

impl OfflineTimings {
    pub fn total(&self) -> f64 {
        self.snapshots + self.pod + self.training
    }
}

#[derive(Debug, Clone)]
pub struct OfflineStage {
    pub params: DMatrix<f64>,
    pub trajectories: Vec<Trajectory>,
    pub time_indices: Vec<usize>,
    pub basis: PodBasis,
    /// Trained surrogate with the configured sensors attached.
    pub surrogate: Surrogate,
    pub timings: OfflineTimings,
}

/// Every `train_time_stride`-th coarse step, excluding `t = 0`.
pub fn training_time_indices(cfg: &ExperimentConfig) -> Vec<usize> {
    (cfg.train_time_stride..=cfg.coarse_steps)
        .step_by(cfg.train_time_stride)
        .collect()
}

pub fn pod_criterion(cfg: &ExperimentConfig) -> PodCriterion {
    match cfg.pod_modes {
        Some(p) => PodCriterion::Fixed(p),
        None => PodCriterion::Energy(cfg.pod_energy),
    }
}

pub fn train_options(cfg: &ExperimentConfig, strategy: ShapeStrategy) -> TrainOptions {
    TrainOptions {
        kernel: cfg.kernel,
        n_rv: cfg.n_rv,
        n_obs: cfg.n_obs,
        bounds: ShapeBounds {
            lo: cfg.shape_lo,
            hi: cfg.shape_hi,
            ..ShapeBounds::default()
        },
        truncation: match cfg.mode_count {
            Some(q) => ModeTruncation::Fixed(q),
            None => ModeTruncation::Energy {
                tol: cfg.mode_energy,
                cap: None,
            },
        },
        strategy,
    }
}

/// Training parameters come from `seeds.named("train-params")`, surrogate
/// fits from `seeds.named("surrogate")`.
pub fn build_offline(cfg: &ExperimentConfig, coarse: &FullForward, seeds: &SeedTree) -> Result<OfflineStage> {
    let clock = Instant::now();
    let params = coarse
        .problem()
        .sample_parameters(cfg.n_train, &mut seeds.named("train-params").rng());
    let trajectories = coarse.solve_all(&params).map_err(|e| e.in_stage("snapshots"))?;
    let snapshots_time = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let time_indices = training_time_indices(cfg);
    let basis = build_snapshot_matrix(&trajectories, &time_indices)
        .and_then(|s| compute_pod(&s, pod_criterion(cfg)))
        .map_err(|e| e.in_stage("pod"))?;
    let pod_time = clock.elapsed().as_secs_f64();
    log::info!("POD basis: p = {} from {} snapshots", basis.p(), params.nrows() * time_indices.len());

    let clock = Instant::now();
    let surrogate = CoefficientTensor::from_trajectories(&basis, &trajectories, params.clone(), &time_indices)
        .and_then(|tensor| {
            train(
                &tensor,
                &basis,
                &train_options(cfg, ShapeStrategy::Stochastic),
                &seeds.named("surrogate"),
            )
        })
        .and_then(|s| s.with_observation(coarse.setup()))
        .map_err(|e| e.in_stage("training"))?;
    let training_time = clock.elapsed().as_secs_f64();
    log::info!(
        "surrogate: {} mode models, mode counts {:?}",
        surrogate.n_models(),
        surrogate.mode_counts()
    );
    Ok(OfflineStage {
        params,
        trajectories,
        time_indices,
        basis,
        surrogate,
        timings: OfflineTimings {
            snapshots: snapshots_time,
            pod: pod_time,
            training: training_time,
        },
    })
}
