use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{energy_rank, fix_sign, numerical_rank, sorted_svd};
use crate::pod::PodBasis;
use crate::tfpde::Trajectory;

/// POD coefficients on a tensor grid: `slices[k][(i, j)] = a_k(t_i; theta_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTensor {
    times: Vec<f64>,
    params: DMatrix<f64>,
    slices: Vec<DMatrix<f64>>,
}

impl CoefficientTensor {
    /// `params` holds one training parameter per row.
    pub fn new(times: Vec<f64>, params: DMatrix<f64>, slices: Vec<DMatrix<f64>>) -> Result<Self> {
        if times.len() < 2 || params.nrows() < 2 {
            return Err(Error::structure("need at least two training times and parameters"));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::domain("training times must be strictly increasing"));
        }
        for i in 0..params.nrows() {
            for j in 0..i {
                if params.row(i) == params.row(j) {
                    return Err(Error::domain(format!("training parameters {j} and {i} coincide")));
                }
            }
        }
        if let Some(k) = slices
            .iter()
            .position(|q| q.nrows() != times.len() || q.ncols() != params.nrows())
        {
            return Err(Error::structure(format!(
                "coefficient slice {k} is not {}x{}",
                times.len(),
                params.nrows()
            )));
        }
        Ok(CoefficientTensor {
            times,
            params,
            slices,
        })
    }

    /// Projects the selected time columns of one trajectory per parameter.
    pub fn from_trajectories(
        basis: &PodBasis,
        trajectories: &[Trajectory],
        params: DMatrix<f64>,
        time_indices: &[usize],
    ) -> Result<Self> {
        if trajectories.len() != params.nrows() {
            return Err(Error::structure(format!(
                "{} trajectories for {} parameters",
                trajectories.len(),
                params.nrows()
            )));
        }
        let first = trajectories
            .first()
            .ok_or_else(|| Error::structure("no trajectories"))?;
        let times = time_indices
            .iter()
            .map(|&i| {
                first
                    .times()
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::structure(format!("time index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        let (nt, nth) = (time_indices.len(), trajectories.len());
        let mut slices = vec![DMatrix::zeros(nt, nth); basis.p()];
        for (j, tr) in trajectories.iter().enumerate() {
            if tr.times() != first.times() {
                return Err(Error::structure(format!("trajectory {j} uses a different time grid")));
            }
            for (i, &ti) in time_indices.iter().enumerate() {
                let a = basis.project(tr.state_slice(ti))?;
                for (k, q) in slices.iter_mut().enumerate() {
                    q[(i, j)] = a[k];
                }
            }
        }
        CoefficientTensor::new(times, params, slices)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn params(&self) -> &DMatrix<f64> {
        &self.params
    }

    pub fn slices(&self) -> &[DMatrix<f64>] {
        &self.slices
    }

    pub fn p(&self) -> usize {
        self.slices.len()
    }
}

/// Solves the full model at every training parameter (in parallel) and
/// projects the selected time columns.
pub fn build_training_set<F>(
    solve: F,
    params: DMatrix<f64>,
    time_indices: &[usize],
    basis: &PodBasis,
) -> Result<CoefficientTensor>
where
    F: Fn(&[f64]) -> Result<Trajectory> + Sync,
{
    let rows: Vec<Vec<f64>> = params.row_iter().map(|r| r.iter().copied().collect()).collect();
    let trajectories = rows
        .par_iter()
        .enumerate()
        .map(|(index, theta)| {
            solve(theta).map_err(|e| Error::Solve {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    CoefficientTensor::from_trajectories(basis, &trajectories, params, time_indices)
}

/// How many time/parameter mode pairs to keep per coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModeTruncation {
    /// Smallest count whose energy fraction exceeds `tol`, at most `cap`.
    Energy { tol: f64, cap: Option<usize> },
    Fixed(usize),
}

impl Default for ModeTruncation {
    fn default() -> Self {
        ModeTruncation::Energy {
            tol: 0.9999,
            cap: None,
        }
    }
}

/// `Q ~ sum_l lambda_l psi_l phi_lᵀ` with unit-norm columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeDecomposition {
    pub lambda: Vec<f64>,
    /// Time modes, one per column (length `N_t`).
    pub psi: DMatrix<f64>,
    /// Parameter modes, one per column (length `N_theta`).
    pub phi: DMatrix<f64>,
}

impl ModeDecomposition {
    pub fn q(&self) -> usize {
        self.lambda.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.psi.nrows(), self.phi.nrows());
        for (l, lam) in self.lambda.iter().enumerate() {
            out += *lam * self.psi.column(l) * self.phi.column(l).transpose();
        }
        out
    }
}

/// SVD of one coefficient slice, truncated. Each time mode gets the `pod`
/// sign convention and its parameter mode is flipped with it. An all-zero
/// slice yields zero modes.
pub fn tensor_decompose(q: &DMatrix<f64>, truncation: ModeTruncation) -> Result<ModeDecomposition> {
    let svd = sorted_svd(q)?;
    let sv = &svd.singular_values;
    let rank = numerical_rank(sv, (q.nrows(), q.ncols()));
    let keep = if rank == 0 {
        log::warn!("coefficient slice is identically zero; no modes kept");
        0
    } else {
        match truncation {
            ModeTruncation::Energy { tol, cap } => {
                if !(tol > 0.0 && tol < 1.0) {
                    return Err(Error::domain(format!("energy tolerance {tol} not in (0, 1)")));
                }
                energy_rank(sv, tol).clamp(1, rank).min(cap.unwrap_or(usize::MAX).max(1))
            }
            ModeTruncation::Fixed(n) => n.clamp(1, rank),
        }
    };
    let mut psi = svd.u.columns(0, keep).into_owned();
    let mut phi = svd.v.columns(0, keep).into_owned();
    for l in 0..keep {
        if fix_sign(psi.column_mut(l).as_mut_slice()) {
            phi.column_mut(l).neg_mut();
        }
    }
    Ok(ModeDecomposition {
        lambda: sv[..keep].to_vec(),
        psi,
        phi,
    })
}
