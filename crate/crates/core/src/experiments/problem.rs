use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::config::{ExperimentConfig, ProblemKind};
use super::kl::{kl_expansion, KlField};
use crate::eki::{Evaluation, ForwardMap, PriorSpec};
use crate::error::{Error, Result};
use crate::tfpde::{
    solve_forward, uniform_sensor_layout, ConstantField, FractionalModel, GaussianBump,
    ObservationSetup, SpatialGrid, TimeGrid, Trajectory,
};

/// Fixed source location of the diffusivity problem.
pub const KL_SOURCE_CENTER: [f64; 2] = [0.25, 0.75];

/// Parameter-to-model map of one inverse problem.
#[derive(Debug, Clone)]
pub enum Problem {
    Source2d { alpha: f64 },
    Source2dAlpha { clamp: [f64; 2] },
    DiffusivityKl { field: Arc<KlField>, alpha: f64 },
}

impl Problem {
    /// The KL basis is built on the coarse grid and extended to other grids
    /// by its Nystrom interpolant.
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(match cfg.problem {
            ProblemKind::Source2d => Problem::Source2d { alpha: cfg.alpha },
            ProblemKind::Source2dAlpha => Problem::Source2dAlpha {
                clamp: cfg.alpha_clamp,
            },
            ProblemKind::DiffusivityKl => Problem::DiffusivityKl {
                field: Arc::new(kl_expansion(
                    cfg.kl_variance,
                    cfg.kl_length,
                    cfg.kl_modes,
                    &SpatialGrid::square(cfg.coarse_n)?,
                )?),
                alpha: cfg.alpha,
            },
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Problem::Source2d { .. } => 2,
            Problem::Source2dAlpha { .. } => 3,
            Problem::DiffusivityKl { field, .. } => field.d(),
        }
    }

    pub fn prior(&self) -> PriorSpec {
        match self {
            Problem::Source2d { .. } | Problem::Source2dAlpha { .. } => PriorSpec::unit_box(self.dim()),
            Problem::DiffusivityKl { field, .. } => PriorSpec::StandardNormal { dim: field.d() },
        }
    }

    /// One prior draw per row. The order coordinate of the
    /// alpha problem is drawn inside the solver's clamp range so that every
    /// training parameter is solvable as given.
    pub fn sample_parameters<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(n, d);
        for j in 0..n {
            for i in 0..d {
                m[(j, i)] = match self {
                    Problem::Source2d { .. } => rng.gen_range(0.0..1.0),
                    Problem::Source2dAlpha { clamp } if i == 2 => rng.gen_range(clamp[0]..clamp[1]),
                    Problem::Source2dAlpha { .. } => rng.gen_range(0.0..1.0),
                    Problem::DiffusivityKl { .. } => rng.sample(StandardNormal),
                };
            }
        }
        m
    }

    /// The model at `theta` and whether a coordinate had to be clamped.
    pub fn model(&self, theta: &[f64]) -> Result<(FractionalModel, bool)> {
        if theta.len() != self.dim() || theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "parameter must be {} finite values, got {theta:?}",
                self.dim()
            )));
        }
        match self {
            Problem::Source2d { alpha } => {
                let src = Arc::new(GaussianBump::new([theta[0], theta[1]]));
                Ok((FractionalModel::with_source(*alpha, src)?, false))
            }
            Problem::Source2dAlpha { clamp } => {
                let a = theta[2].clamp(clamp[0], clamp[1]);
                let src = Arc::new(GaussianBump::new([theta[0], theta[1]]));
                Ok((FractionalModel::with_source(a, src)?, a != theta[2]))
            }
            Problem::DiffusivityKl { field, alpha } => {
                let model = FractionalModel::new(
                    *alpha,
                    Arc::new(field.diffusivity(theta)?),
                    Arc::new(GaussianBump::new(KL_SOURCE_CENTER)),
                    Arc::new(ConstantField(0.0)),
                )?;
                Ok((model, false))
            }
        }
    }
}

/// Full-order forward map: solve on a grid, then read the sensors.
#[derive(Debug, Clone)]
pub struct FullForward {
    problem: Problem,
    grid: SpatialGrid,
    tgrid: TimeGrid,
    setup: ObservationSetup,
}

impl FullForward {
    pub fn new(problem: Problem, grid: SpatialGrid, tgrid: TimeGrid, setup: ObservationSetup) -> Self {
        FullForward {
            problem,
            grid,
            tgrid,
            setup,
        }
    }

    /// Grid `n x n` with `steps` steps and the configured sensors. The
    /// setup's noise level is a placeholder (noise is handled separately).
    pub fn from_config(problem: Problem, cfg: &ExperimentConfig, n: usize, steps: usize) -> Result<Self> {
        let grid = SpatialGrid::square(n)?;
        let tgrid = TimeGrid::new(cfg.t_final, steps)?;
        let setup = ObservationSetup::new(
            &grid,
            &tgrid,
            uniform_sensor_layout(cfg.sensors_per_axis, cfg.sensor_margin),
            cfg.sensor_times.clone(),
            1.0,
        )?;
        Ok(FullForward::new(problem, grid, tgrid, setup))
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn tgrid(&self) -> &TimeGrid {
        &self.tgrid
    }

    pub fn setup(&self) -> &ObservationSetup {
        &self.setup
    }

    pub fn solve(&self, theta: &[f64]) -> Result<(Trajectory, bool)> {
        let (model, clamped) = self.problem.model(theta)?;
        Ok((solve_forward(&model, &self.grid, &self.tgrid)?, clamped))
    }

    /// One trajectory per parameter row, in parallel.
    pub fn solve_all(&self, params: &DMatrix<f64>) -> Result<Vec<Trajectory>> {
        let rows: Vec<Vec<f64>> = params.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.par_iter()
            .enumerate()
            .map(|(index, th)| {
                self.solve(th).map(|(t, _)| t).map_err(|e| Error::Solve {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

impl ForwardMap for FullForward {
    fn output_dim(&self) -> usize {
        self.setup.m()
    }

    fn evaluate(&self, theta: &[f64]) -> Result<Evaluation> {
        let (traj, clamped) = self.solve(theta)?;
        Ok(Evaluation {
            value: self.setup.observe(&traj)?,
            clamped,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn alpha_is_clamped_and_flagged() {
        let p = Problem::Source2dAlpha { clamp: [0.01, 0.99] };
        let (m, c) = p.model(&[0.5, 0.5, 1.3]).unwrap();
        assert!(c);
        assert_eq!(m.alpha(), 0.99);
        let (m, c) = p.model(&[0.5, 0.5, 0.4]).unwrap();
        assert!(!c);
        assert_eq!(m.alpha(), 0.4);
        assert!(p.model(&[0.5, 0.5]).is_err());
    }

    #[test]
    fn training_samples_respect_prior_support() {
        let p = Problem::Source2dAlpha { clamp: [0.01, 0.99] };
        let m = p.sample_parameters(500, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(m.column(2).iter().all(|a| (0.01..0.99).contains(a)));
        assert!(m.column(0).iter().all(|a| (0.0..1.0).contains(a)));
    }

    #[test]
    fn example1_observation_count() {
        let cfg = ExperimentConfig::defaults(ProblemKind::Source2d);
        let f = FullForward::from_config(Problem::from_config(&cfg).unwrap(), &cfg, 21, 100).unwrap();
        assert_eq!(f.output_dim(), 27);
        let y = f.evaluate(&[0.2, 0.7]).unwrap();
        assert_eq!(y.value.len(), 27);
        assert!(y.value.iter().all(|v| v.is_finite() && *v > 0.0));
        assert_eq!(y, f.evaluate(&[0.2, 0.7]).unwrap());
    }

    #[test]
    fn diffusivity_problem_observes_147_values() {
        let mut cfg = ExperimentConfig::defaults(ProblemKind::DiffusivityKl);
        cfg.coarse_steps = 20;
        let f = FullForward::from_config(Problem::from_config(&cfg).unwrap(), &cfg, 21, 20).unwrap();
        assert_eq!(f.output_dim(), 147);
        let y = f.evaluate(&[0.5; 9]).unwrap();
        assert!(y.value.iter().all(|v| v.is_finite()));
    }
}
