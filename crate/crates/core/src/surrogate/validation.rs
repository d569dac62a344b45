use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::Surrogate;
use crate::error::{Error, Result};
use crate::pod::PodBasis;
use crate::tfpde::Trajectory;

/// Anything that predicts POD coefficients at `(t, theta)`.
pub trait CoefficientPredictor: Sync {
    fn predict_coefficients(&self, t: f64, theta: &[f64]) -> Result<DVector<f64>>;
}

impl CoefficientPredictor for Surrogate {
    fn predict_coefficients(&self, t: f64, theta: &[f64]) -> Result<DVector<f64>> {
        Ok(self.eval_coefficients(t, theta)?.0)
    }
}

/// Relative errors at one `(theta, t)` validation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointError {
    pub param_index: usize,
    pub time: f64,
    /// `||u_h - U_p a~|| / ||u_h||`
    pub approximation: f64,
    /// `||u_h - U_p U_pᵀ u_h|| / ||u_h||`
    pub projection: f64,
    /// `||a - a~|| / ||u_h||`
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub eps_a: f64,
    pub eps_p: f64,
    pub eps_c: f64,
    pub points: Vec<PointError>,
    /// Points dropped because `u_h` vanished.
    pub skipped: usize,
}

/// Averages the three relative errors over test parameters and the chosen
/// time columns of precomputed full-order trajectories (one per row of
/// `params`).
pub fn validation_errors_from_trajectories<P: CoefficientPredictor + ?Sized>(
    predictor: &P,
    basis: &PodBasis,
    params: &DMatrix<f64>,
    trajectories: &[Trajectory],
    time_indices: &[usize],
) -> Result<ValidationReport> {
    if params.nrows() == 0 || params.nrows() != trajectories.len() {
        return Err(Error::structure(format!(
            "{} test parameters for {} trajectories",
            params.nrows(),
            trajectories.len()
        )));
    }
    if time_indices.is_empty() {
        return Err(Error::structure("no validation times"));
    }
    let per_param = trajectories
        .par_iter()
        .enumerate()
        .map(|(j, tr)| {
            let theta: Vec<f64> = params.row(j).iter().copied().collect();
            let mut out = Vec::with_capacity(time_indices.len());
            let mut skipped = 0;
            for &ti in time_indices {
                let t = *tr
                    .times()
                    .get(ti)
                    .ok_or_else(|| Error::structure(format!("time index {ti} out of range")))?;
                let u = tr.state(ti);
                let un = u.norm();
                if un == 0.0 {
                    skipped += 1;
                    continue;
                }
                let a = basis.project(u.as_slice())?;
                let at = predictor.predict_coefficients(t, &theta)?;
                out.push(PointError {
                    param_index: j,
                    time: t,
                    approximation: (&u - basis.reconstruct(&at)?).norm() / un,
                    projection: (&u - basis.reconstruct(&a)?).norm() / un,
                    coefficient: (&a - &at).norm() / un,
                });
            }
            Ok((out, skipped))
        })
        .collect::<Result<Vec<_>>>()?;
    let skipped = per_param.iter().map(|(_, s)| s).sum();
    if skipped > 0 {
        log::warn!("{skipped} validation points skipped: zero reference solution");
    }
    let points: Vec<PointError> = per_param.into_iter().flat_map(|(p, _)| p).collect();
    if points.is_empty() {
        return Err(Error::domain("every validation point has a zero reference solution"));
    }
    let n = points.len() as f64;
    let mean = |f: fn(&PointError) -> f64| points.iter().map(f).sum::<f64>() / n;
    Ok(ValidationReport {
        eps_a: mean(|p| p.approximation),
        eps_p: mean(|p| p.projection),
        eps_c: mean(|p| p.coefficient),
        points,
        skipped,
    })
}

/// As [`validation_errors_from_trajectories`], solving the full model at each
/// test parameter first (in parallel).
pub fn validation_errors<P, F>(
    predictor: &P,
    basis: &PodBasis,
    params: &DMatrix<f64>,
    time_indices: &[usize],
    solve: F,
) -> Result<ValidationReport>
where
    P: CoefficientPredictor + ?Sized,
    F: Fn(&[f64]) -> Result<Trajectory> + Sync,
{
    let rows: Vec<Vec<f64>> = params.row_iter().map(|r| r.iter().copied().collect()).collect();
    let trajectories = rows
        .par_iter()
        .enumerate()
        .map(|(index, th)| {
            solve(th).map_err(|e| Error::Solve {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    validation_errors_from_trajectories(predictor, basis, params, &trajectories, time_indices)
}

/// One row of the validation sweep output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationRow {
    pub p: usize,
    pub n_train: usize,
    pub method: &'static str,
    pub eps_a: f64,
    pub eps_p: f64,
    pub eps_c: f64,
    pub wall_time: f64,
}

pub fn write_validation_csv<W: Write>(rows: &[ValidationRow], mut w: W) -> Result<()> {
    writeln!(w, "method,p,N,eps_a,eps_p,eps_c,wall_time")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:e},{:e},{:e},{:.3}",
            r.method, r.p, r.n_train, r.eps_a, r.eps_p, r.eps_c, r.wall_time
        )?;
    }
    Ok(())
}
