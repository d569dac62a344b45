//! Regularized ensemble Kalman inversion.
//!
//! Each iteration pushes the ensemble through the forward map, checks the
//! discrepancy principle on the ensemble-mean output and, if not yet
//! satisfied, applies the Kalman-type update
//! `theta_j += C^{theta w} (C^{ww} + gamma Gamma)^{-1} (y_j - w_j)`, where
//! `gamma` is the smallest value in `gamma0 * 2^i` meeting
//! `gamma ||Gamma^{1/2} (C^{ww} + gamma Gamma)^{-1} r|| >= rho ||Gamma^{-1/2} r||`
//! for `r = y_obs - w_bar`.

use std::io::Write;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::SeedTree;

/// Output of one forward evaluation; `clamped` reports that the input was
/// moved into the map's domain first.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: DVector<f64>,
    pub clamped: bool,
}

/// Parameter-to-observable map. Must be safe to call concurrently.
pub trait ForwardMap: Sync {
    fn output_dim(&self) -> usize;
    fn evaluate(&self, theta: &[f64]) -> Result<Evaluation>;
}

/// Adapts a closure into a [`ForwardMap`] (never clamps).
pub struct FnForward<F> {
    dim: usize,
    f: F,
}

impl<F> FnForward<F>
where
    F: Fn(&[f64]) -> Result<DVector<f64>> + Sync,
{
    pub fn new(output_dim: usize, f: F) -> Self {
        FnForward { dim: output_dim, f }
    }
}

impl<F> ForwardMap for FnForward<F>
where
    F: Fn(&[f64]) -> Result<DVector<f64>> + Sync,
{
    fn output_dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, theta: &[f64]) -> Result<Evaluation> {
        Ok(Evaluation {
            value: (self.f)(theta)?,
            clamped: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpec {
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
    StandardNormal { dim: usize },
}

impl PriorSpec {
    pub fn unit_box(dim: usize) -> Self {
        PriorSpec::UniformBox {
            lo: vec![0.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            PriorSpec::UniformBox { lo, .. } => lo.len(),
            PriorSpec::StandardNormal { dim } => *dim,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            PriorSpec::UniformBox { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() {
                    return Err(Error::structure("prior box bounds must be non-empty and equal in length"));
                }
                if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
                    return Err(Error::domain("prior box needs lo < hi in every dimension"));
                }
            }
            PriorSpec::StandardNormal { dim } => {
                if *dim == 0 {
                    return Err(Error::structure("prior dimension must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Ensemble members, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: DMatrix<f64>,
    iteration: usize,
}

impl Ensemble {
    pub fn new(members: DMatrix<f64>) -> Result<Self> {
        if members.nrows() < 2 || members.ncols() == 0 {
            return Err(Error::structure(format!(
                "ensemble needs at least 2 members and 1 dimension, got {}x{}",
                members.nrows(),
                members.ncols()
            )));
        }
        if members.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("ensemble contains non-finite entries"));
        }
        Ok(Ensemble {
            members,
            iteration: 0,
        })
    }

    pub fn members(&self) -> &DMatrix<f64> {
        &self.members
    }

    pub fn member(&self, j: usize) -> Vec<f64> {
        self.members.row(j).iter().copied().collect()
    }

    pub fn n_e(&self) -> usize {
        self.members.nrows()
    }

    pub fn dim(&self) -> usize {
        self.members.ncols()
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn mean(&self) -> DVector<f64> {
        self.members.row_mean().transpose()
    }
}

pub fn sample_prior<R: Rng + ?Sized>(spec: &PriorSpec, n_e: usize, rng: &mut R) -> Result<Ensemble> {
    spec.validate()?;
    let d = spec.dim();
    let mut m = DMatrix::zeros(n_e, d);
    // row by row so that member j does not depend on N_e
    for j in 0..n_e {
        for i in 0..d {
            m[(j, i)] = match spec {
                PriorSpec::UniformBox { lo, hi } => rng.gen_range(lo[i]..hi[i]),
                PriorSpec::StandardNormal { .. } => rng.sample(StandardNormal),
            };
        }
    }
    Ensemble::new(m)
}

/// SPD observation-noise covariance with its Cholesky factor `Gamma = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct NoiseCovariance {
    gamma: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl NoiseCovariance {
    pub fn new(gamma: DMatrix<f64>) -> Result<Self> {
        if !gamma.is_square() || gamma.nrows() == 0 {
            return Err(Error::structure("noise covariance must be square and non-empty"));
        }
        let scale = gamma.amax();
        if (&gamma - gamma.transpose()).amax() > 1e-12 * scale {
            return Err(Error::domain("noise covariance is not symmetric"));
        }
        let chol = gamma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::domain("noise covariance is not positive definite"))?;
        Ok(NoiseCovariance { gamma, chol })
    }

    /// `sigma^2 I_m`.
    pub fn isotropic(sigma: f64, m: usize) -> Result<Self> {
        NoiseCovariance::new(DMatrix::from_diagonal_element(m, m, sigma * sigma))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn dim(&self) -> usize {
        self.gamma.nrows()
    }

    /// `L^{-1} r`, whose norm is `||Gamma^{-1/2} r||`.
    pub fn whiten(&self, r: &DVector<f64>) -> DVector<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(r)
            .expect("Cholesky factor has a positive diagonal")
    }

    pub fn whitened_norm(&self, r: &DVector<f64>) -> f64 {
        self.whiten(r).norm()
    }

    /// `||Gamma^{1/2} x|| = ||Lᵀ x||`.
    pub fn colored_norm(&self, x: &DVector<f64>) -> f64 {
        (self.chol.l().transpose() * x).norm()
    }

    /// `L z`, a draw from `N(0, Gamma)` when `z` is standard normal.
    pub fn color(&self, z: &DVector<f64>) -> DVector<f64> {
        self.chol.l() * z
    }
}

/// `y_obs + xi_j`, `xi_j ~ N(0, Gamma)`, one column per member.
pub fn perturb_observations<R: Rng + ?Sized>(
    y_obs: &DVector<f64>,
    noise: &NoiseCovariance,
    n_e: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let m = y_obs.len();
    if noise.dim() != m {
        return Err(Error::structure(format!(
            "observation has {m} entries, covariance is {}x{}",
            noise.dim(),
            noise.dim()
        )));
    }
    let mut out = DMatrix::zeros(m, n_e);
    for j in 0..n_e {
        let z = DVector::from_fn(m, |_, _| rng.sample(StandardNormal));
        out.set_column(j, &(y_obs + noise.color(&z)));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub theta_mean: DVector<f64>,
    pub output_mean: DVector<f64>,
    /// `d x m`
    pub c_theta_w: DMatrix<f64>,
    /// `m x m`
    pub c_ww: DMatrix<f64>,
}

/// Sample means and cross/auto covariances with `1 / (N_e - 1)`.
/// `outputs` holds one forward value per row.
pub fn ensemble_stats(ensemble: &Ensemble, outputs: &DMatrix<f64>) -> Result<EnsembleStats> {
    let n = ensemble.n_e();
    if outputs.nrows() != n {
        return Err(Error::structure(format!(
            "{} outputs for {n} members",
            outputs.nrows()
        )));
    }
    let theta_mean = ensemble.mean();
    let output_mean: DVector<f64> = outputs.row_mean().transpose();
    let mut dt = ensemble.members().clone();
    for mut r in dt.row_iter_mut() {
        r -= theta_mean.transpose();
    }
    let mut dw = outputs.clone();
    for mut r in dw.row_iter_mut() {
        r -= output_mean.transpose();
    }
    let s = 1.0 / (n - 1) as f64;
    Ok(EnsembleStats {
        c_theta_w: dt.transpose() * &dw * s,
        c_ww: dw.transpose() * &dw * s,
        theta_mean,
        output_mean,
    })
}

fn regularized_factor(c_ww: &DMatrix<f64>, noise: &NoiseCovariance, gamma: f64) -> Result<Cholesky<f64, Dyn>> {
    (c_ww + noise.matrix() * gamma)
        .cholesky()
        .ok_or_else(|| Error::numerical(format!("C_ww + {gamma} Gamma is not positive definite")))
}

/// Whether `gamma` satisfies the regularization inequality for residual `r`.
pub fn gamma_condition(
    c_ww: &DMatrix<f64>,
    noise: &NoiseCovariance,
    r: &DVector<f64>,
    rho: f64,
    gamma: f64,
) -> Result<bool> {
    let x = regularized_factor(c_ww, noise, gamma)?.solve(r);
    Ok(gamma * noise.colored_norm(&x) >= rho * noise.whitened_norm(r))
}

/// Smallest `gamma0 * 2^i` satisfying [`gamma_condition`].
pub fn select_gamma(
    c_ww: &DMatrix<f64>,
    noise: &NoiseCovariance,
    r: &DVector<f64>,
    rho: f64,
    gamma0: f64,
) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) || !(gamma0 > 0.0 && gamma0.is_finite()) {
        return Err(Error::domain(format!("need 0 < rho < 1 and gamma0 > 0, got {rho}, {gamma0}")));
    }
    if r.iter().all(|v| *v == 0.0) {
        return Ok(gamma0);
    }
    let mut gamma = gamma0;
    for _ in 0..1100 {
        if gamma_condition(c_ww, noise, r, rho, gamma)? {
            return Ok(gamma);
        }
        gamma *= 2.0;
    }
    Err(Error::numerical("regularization parameter search did not terminate"))
}

/// Kalman-type update of every member with its perturbed observation
/// (`perturbed` is `m x N_e`, `outputs` is `N_e x m`).
pub fn eki_update(
    ensemble: &Ensemble,
    outputs: &DMatrix<f64>,
    perturbed: &DMatrix<f64>,
    gamma: f64,
    noise: &NoiseCovariance,
) -> Result<Ensemble> {
    let stats = ensemble_stats(ensemble, outputs)?;
    let m = outputs.ncols();
    if perturbed.nrows() != m || perturbed.ncols() != ensemble.n_e() || noise.dim() != m {
        return Err(Error::structure("perturbed observations, outputs and covariance disagree in shape"));
    }
    let factor = regularized_factor(&stats.c_ww, noise, gamma)?;
    let innovation = perturbed - outputs.transpose();
    let delta = &stats.c_theta_w * factor.solve(&innovation);
    let members = ensemble.members() + delta.transpose();
    if members.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("update produced non-finite members"));
    }
    Ok(Ensemble {
        members,
        iteration: ensemble.iteration + 1,
    })
}

/// `misfit <= tau * noise_level`.
pub fn discrepancy_stop(misfit: f64, noise_level: f64, tau: f64) -> bool {
    misfit <= tau * noise_level
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkiOptions {
    pub n_e: usize,
    pub rho: f64,
    pub tau: f64,
    pub gamma0: f64,
    pub max_iters: usize,
    /// Right-hand side of the discrepancy principle.
    pub noise_level: f64,
    pub seed: u64,
    /// Keep iterating after the discrepancy principle fires, up to twice
    /// the stopping iteration (the estimate is still the one at the stop).
    pub run_past_stop: bool,
}

impl Default for EkiOptions {
    fn default() -> Self {
        EkiOptions {
            n_e: 100,
            rho: 0.7,
            tau: 1.0 / 0.7,
            gamma0: 1.0,
            max_iters: 100,
            noise_level: 0.0,
            seed: 0,
            run_past_stop: false,
        }
    }
}

impl EkiOptions {
    fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::domain(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if self.tau * self.rho < 1.0 - 1e-12 {
            return Err(Error::domain(format!("need tau >= 1/rho, got tau = {}", self.tau)));
        }
        if !(self.gamma0 > 0.0) || !(self.noise_level >= 0.0) {
            return Err(Error::domain("gamma0 must be positive and noise_level nonnegative"));
        }
        if self.n_e < 2 {
            return Err(Error::structure("ensemble size must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Discrepancy,
    MaxIters,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Discrepancy => "discrepancy",
            StopReason::MaxIters => "max_iters",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub theta_mean: DVector<f64>,
    /// `||theta_bar - theta_true|| / ||theta_true||` when the truth is known.
    pub rel_error: Option<f64>,
    /// `||Gamma^{-1/2} (y_obs - w_bar)||` with the ensemble-mean output of
    /// the forward map used for the inversion.
    pub misfit: f64,
    /// Misfit of the mean evaluated by a reference model (filled in by the
    /// caller, see `experiments::compute_metrics`).
    pub reference_misfit: Option<f64>,
    /// Regularization parameter of the update leaving this iteration.
    pub gamma: Option<f64>,
    /// Members whose input was clamped by the forward map.
    pub clamps: usize,
    /// Seconds since the start of the run.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionResult {
    pub records: Vec<IterationRecord>,
    pub final_ensemble: Ensemble,
    pub stop_reason: StopReason,
    /// Iteration at which the discrepancy principle fired.
    pub stop_iteration: Option<usize>,
    pub noise_level: f64,
    pub wall_time: f64,
}

impl InversionResult {
    /// Mean at the stopping iteration (or the last one without a stop).
    pub fn estimate(&self) -> &DVector<f64> {
        let n = self.stop_iteration.unwrap_or(self.records.len() - 1);
        &self.records[n].theta_mean
    }

    /// Iterations performed up to the stop (updates applied).
    pub fn iterations(&self) -> usize {
        self.stop_iteration.unwrap_or(self.records.len() - 1)
    }

    pub fn total_clamps(&self) -> usize {
        self.records.iter().map(|r| r.clamps).sum()
    }

    /// `n, e_theta, E_theta, gamma, wall_time, clamps, misfit_forward`.
    /// `E_theta` is the reference misfit when available.
    pub fn write_diagnostics_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,e_theta,E_theta,gamma,wall_time,clamps,misfit_forward")?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
        for r in &self.records {
            writeln!(
                w,
                "{},{},{:e},{},{:.3},{},{:e}",
                r.iteration,
                opt(r.rel_error),
                r.reference_misfit.unwrap_or(r.misfit),
                opt(r.gamma),
                r.wall_time,
                r.clamps,
                r.misfit
            )?;
        }
        Ok(())
    }
}

/// Evaluates the map on every member in parallel; returns `N_e x m`
/// outputs and the clamp count.
pub fn evaluate_ensemble<F: ForwardMap + ?Sized>(forward: &F, ensemble: &Ensemble) -> Result<(DMatrix<f64>, usize)> {
    let m = forward.output_dim();
    let evals = (0..ensemble.n_e())
        .into_par_iter()
        .map(|j| forward.evaluate(&ensemble.member(j)))
        .collect::<Result<Vec<_>>>()?;
    let mut out = DMatrix::zeros(ensemble.n_e(), m);
    let mut clamps = 0;
    for (j, e) in evals.into_iter().enumerate() {
        if e.value.len() != m {
            return Err(Error::structure(format!(
                "forward map returned {} values, expected {m}",
                e.value.len()
            )));
        }
        out.set_row(j, &e.value.transpose());
        clamps += usize::from(e.clamped);
    }
    Ok((out, clamps))
}

/// Runs the full loop from a prior ensemble drawn with `opts.seed`.
pub fn run_eki<F: ForwardMap + ?Sized>(
    forward: &F,
    prior: &PriorSpec,
    y_obs: &DVector<f64>,
    noise: &NoiseCovariance,
    opts: &EkiOptions,
    truth: Option<&DVector<f64>>,
) -> Result<InversionResult> {
    opts.validate()?;
    let seeds = SeedTree::new(opts.seed);
    let ensemble = sample_prior(prior, opts.n_e, &mut seeds.named("prior").rng())?;
    run_eki_from(forward, ensemble, y_obs, noise, opts, truth)
}

/// Runs the loop from a given initial ensemble.
pub fn run_eki_from<F: ForwardMap + ?Sized>(
    forward: &F,
    mut ensemble: Ensemble,
    y_obs: &DVector<f64>,
    noise: &NoiseCovariance,
    opts: &EkiOptions,
    truth: Option<&DVector<f64>>,
) -> Result<InversionResult> {
    opts.validate()?;
    if forward.output_dim() != y_obs.len() || noise.dim() != y_obs.len() {
        return Err(Error::structure(format!(
            "forward map gives {} outputs, data has {}, covariance {}",
            forward.output_dim(),
            y_obs.len(),
            noise.dim()
        )));
    }
    let truth_norm = match truth {
        Some(t) if t.len() != ensemble.dim() => {
            return Err(Error::structure("truth dimension differs from the ensemble"))
        }
        Some(t) if t.norm() == 0.0 => return Err(Error::domain("truth has zero norm")),
        Some(t) => t.norm(),
        None => 1.0,
    };
    let seeds = SeedTree::new(opts.seed);
    let perturbed = perturb_observations(y_obs, noise, ensemble.n_e(), &mut seeds.named("perturb").rng())?;
    let start = Instant::now();
    let mut records = Vec::new();
    let mut stop_iteration = None;
    loop {
        let n = ensemble.iteration();
        let (outputs, clamps) = evaluate_ensemble(forward, &ensemble).map_err(|e| Error::Forward {
            iteration: n,
            source: Box::new(e),
        })?;
        let stats = ensemble_stats(&ensemble, &outputs)?;
        let residual = y_obs - &stats.output_mean;
        let misfit = noise.whitened_norm(&residual);
        records.push(IterationRecord {
            iteration: n,
            rel_error: truth.map(|t| (&stats.theta_mean - t).norm() / truth_norm),
            theta_mean: stats.theta_mean.clone(),
            misfit,
            reference_misfit: None,
            gamma: None,
            clamps,
            wall_time: start.elapsed().as_secs_f64(),
        });
        if stop_iteration.is_none() && discrepancy_stop(misfit, opts.noise_level, opts.tau) {
            stop_iteration = Some(n);
            if !opts.run_past_stop {
                break;
            }
        }
        if let Some(s) = stop_iteration {
            if n >= 2 * s.max(1) {
                break;
            }
        }
        if n >= opts.max_iters {
            break;
        }
        let gamma = select_gamma(&stats.c_ww, noise, &residual, opts.rho, opts.gamma0)?;
        records.last_mut().expect("pushed above").gamma = Some(gamma);
        ensemble = eki_update(&ensemble, &outputs, &perturbed, gamma, noise)?;
        log::debug!("iteration {n}: misfit {misfit:.4e}, gamma {gamma:e}");
    }
    Ok(InversionResult {
        records,
        final_ensemble: ensemble,
        stop_reason: if stop_iteration.is_some() {
            StopReason::Discrepancy
        } else {
            StopReason::MaxIters
        },
        stop_iteration,
        noise_level: opts.noise_level,
        wall_time: start.elapsed().as_secs_f64(),
    })
}
