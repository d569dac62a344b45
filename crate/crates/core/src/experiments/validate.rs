use std::fs::{self, File};
use std::io::BufWriter;
use std::time::Instant;

use super::config::ExperimentConfig;
use super::offline::{train_options, training_time_indices};
use super::problem::{FullForward, Problem};
use crate::error::{Error, Result};
use crate::pod::{build_snapshot_matrix, compute_pod, PodBasis, PodCriterion};
use crate::rng::SeedTree;
use crate::surrogate::{
    train, validation_errors_from_trajectories, write_validation_csv, CoefficientTensor,
    ShapeStrategy, ValidationReport, ValidationRow,
};
use crate::tfpde::Trajectory;

/// One `(p, N, method)` cell of the sweep.
#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub row: ValidationRow,
    pub report: ValidationReport,
}

/// Test parameters and their full-order solutions.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub params: nalgebra::DMatrix<f64>,
    pub trajectories: Vec<Trajectory>,
    /// Coarse time indices of the validation times (the sensor times).
    pub time_indices: Vec<usize>,
}

impl ValidationSet {
    /// `cfg.n_validation` prior draws from `seeds.named("validation")`.
    pub fn generate(cfg: &ExperimentConfig, coarse: &FullForward, seeds: &SeedTree) -> Result<Self> {
        let params = coarse
            .problem()
            .sample_parameters(cfg.n_validation, &mut seeds.named("validation").rng());
        Ok(ValidationSet {
            trajectories: coarse.solve_all(&params)?,
            params,
            time_indices: coarse.setup().time_indices().to_vec(),
        })
    }
}

/// Trains one surrogate on the given trajectories with a `p`-mode basis and
/// evaluates it on the validation set.
pub fn evaluate_configuration(
    cfg: &ExperimentConfig,
    full_basis: &PodBasis,
    p: usize,
    params: &nalgebra::DMatrix<f64>,
    trajectories: &[Trajectory],
    strategy: ShapeStrategy,
    test: &ValidationSet,
    seeds: &SeedTree,
) -> Result<SweepEntry> {
    let clock = Instant::now();
    let basis = full_basis.truncated(p)?;
    let tensor = CoefficientTensor::from_trajectories(&basis, trajectories, params.clone(), &training_time_indices(cfg))?;
    let surrogate = train(&tensor, &basis, &train_options(cfg, strategy), &seeds.named("surrogate"))?;
    let wall_time = clock.elapsed().as_secs_f64();
    let report = validation_errors_from_trajectories(&surrogate, &basis, &test.params, &test.trajectories, &test.time_indices)?;
    let method = match strategy {
        ShapeStrategy::Stochastic => "dsrbf",
        ShapeStrategy::RippaConstant => "rbf",
    };
    log::info!("validation {method} p = {p} N = {}: eps_a = {:.3e}", params.nrows(), report.eps_a);
    Ok(SweepEntry {
        row: ValidationRow {
            p: basis.p(),
            n_train: params.nrows(),
            method,
            eps_a: report.eps_a,
            eps_p: report.eps_p,
            eps_c: report.eps_c,
            wall_time,
        },
        report,
    })
}

/// Sweeps basis size and training size for the stochastic-shape surrogate
/// and the constant-shape baseline; writes `validation.csv`.
pub fn validate_surrogate(cfg: &ExperimentConfig) -> Result<Vec<SweepEntry>> {
    cfg.validate()?;
    if cfg.validation_p.is_empty() || cfg.validation_n.is_empty() {
        return Err(Error::domain("validation sweep needs at least one p and one N"));
    }
    let seeds = SeedTree::new(cfg.seed);
    let coarse = FullForward::from_config(Problem::from_config(cfg)?, cfg, cfg.coarse_n, cfg.coarse_steps)?;
    let test = ValidationSet::generate(cfg, &coarse, &seeds).map_err(|e| e.in_stage("validation-set"))?;
    let p_max = *cfg.validation_p.iter().max().expect("non-empty");
    let mut entries = Vec::new();
    for &n in &cfg.validation_n {
        let params = coarse
            .problem()
            .sample_parameters(n, &mut seeds.named("train-params").child(n as u64).rng());
        let trajectories = coarse.solve_all(&params).map_err(|e| e.in_stage("snapshots"))?;
        let full = build_snapshot_matrix(&trajectories, &training_time_indices(cfg))
            .and_then(|s| compute_pod(&s, PodCriterion::Fixed(p_max)))
            .map_err(|e| e.in_stage("pod"))?;
        for &p in &cfg.validation_p {
            for strategy in [ShapeStrategy::Stochastic, ShapeStrategy::RippaConstant] {
                let e = evaluate_configuration(cfg, &full, p.min(full.p()), &params, &trajectories, strategy, &test, &seeds)
                    .map_err(|e| e.in_stage("training"))?;
                entries.push(e);
            }
        }
    }
    fs::create_dir_all(&cfg.output_dir)?;
    let rows: Vec<ValidationRow> = entries.iter().map(|e| e.row).collect();
    write_validation_csv(&rows, BufWriter::new(File::create(cfg.output_dir.join("validation.csv"))?))?;
    Ok(entries)
}
