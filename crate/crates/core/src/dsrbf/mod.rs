//! Doubly stochastic RBF regression.
//!
//! A model is a square collocation interpolant
//! `u(x) = sum_j c_j phi(eps_j ||x - z_j||)` whose per-center shape
//! parameters `eps_j` are drawn from a chi-squared law. The law's degrees of
//! freedom is the mean of several shape parameters chosen by the stochastic
//! leave-one-out cost of [`stochastic_loocv_cost`].
//!
//! All operations first map inputs affinely onto the unit cube using the
//! training-set bounding box, so shape parameters are comparable across
//! inputs of different scales.

mod loocv;
mod model;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use loocv::{
    build_shape_distribution, rippa_loocv_cost, select_optimal_shape, select_rippa_shape,
    stochastic_loocv_cost, stochastic_loocv_from_matrix, ShapeBounds,
};
pub use model::{fit, fit_with_shapes, DsrbfModel, ShapeDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelKind {
    #[serde(rename = "gaussian", alias = "ga")]
    Gaussian,
    #[serde(rename = "mq", alias = "multiquadric")]
    Multiquadric,
    #[serde(rename = "imq", alias = "inverse-multiquadric")]
    InverseMultiquadric,
}

impl KernelKind {
    #[inline]
    pub fn eval(self, r: f64) -> f64 {
        match self {
            KernelKind::Gaussian => (-r * r).exp(),
            KernelKind::Multiquadric => (1.0 + r * r).sqrt(),
            KernelKind::InverseMultiquadric => 1.0 / (1.0 + r * r).sqrt(),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            KernelKind::Gaussian => "gaussian",
            KernelKind::Multiquadric => "mq",
            KernelKind::InverseMultiquadric => "imq",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "ga" => Ok(KernelKind::Gaussian),
            "mq" | "multiquadric" => Ok(KernelKind::Multiquadric),
            "imq" | "inverse-multiquadric" => Ok(KernelKind::InverseMultiquadric),
            other => Err(Error::parse(format!("unknown kernel `{other}`"))),
        }
    }
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

pub fn kernel_eval(kind: KernelKind, r: f64) -> f64 {
    kind.eval(r)
}

/// Centers (one per row) and target values (one row per center, one column
/// per output).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    centers: DMatrix<f64>,
    values: DMatrix<f64>,
}

impl TrainingSet {
    pub fn new(centers: DMatrix<f64>, values: DMatrix<f64>) -> Result<Self> {
        let n = centers.nrows();
        if n < 2 {
            return Err(Error::structure(format!("need at least 2 centers, got {n}")));
        }
        if centers.ncols() == 0 || values.ncols() == 0 {
            return Err(Error::structure("centers and values need at least one column"));
        }
        if values.nrows() != n {
            return Err(Error::structure(format!(
                "{n} centers but {} value rows",
                values.nrows()
            )));
        }
        if centers.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::domain("training data contains non-finite entries"));
        }
        for i in 0..n {
            for j in 0..i {
                if centers.row(i) == centers.row(j) {
                    return Err(Error::domain(format!("centers {j} and {i} coincide")));
                }
            }
        }
        Ok(TrainingSet { centers, values })
    }

    /// One-dimensional inputs with a scalar target.
    pub fn scalar(points: &[f64], values: &[f64]) -> Result<Self> {
        TrainingSet::new(
            DMatrix::from_column_slice(points.len(), 1, points),
            DMatrix::from_column_slice(values.len(), 1, values),
        )
    }

    pub fn centers(&self) -> &DMatrix<f64> {
        &self.centers
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.centers.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.values.ncols()
    }
}

/// Per-dimension affine map `x -> (x - lo) / width` onto the unit cube.
#[derive(Debug, Clone, PartialEq)]
pub struct InputScaling {
    lo: Vec<f64>,
    width: Vec<f64>,
}

impl InputScaling {
    /// Bounding box of the rows of `centers`. Degenerate (constant)
    /// dimensions get unit width.
    pub fn from_centers(centers: &DMatrix<f64>) -> Self {
        let mut lo = Vec::with_capacity(centers.ncols());
        let mut width = Vec::with_capacity(centers.ncols());
        for c in centers.column_iter() {
            let min = c.min();
            let max = c.max();
            lo.push(min);
            width.push(if max > min { max - min } else { 1.0 });
        }
        InputScaling { lo, width }
    }

    pub fn from_parts(lo: Vec<f64>, width: Vec<f64>) -> Result<Self> {
        if lo.len() != width.len() || width.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::domain("invalid input scaling"));
        }
        Ok(InputScaling { lo, width })
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn width(&self) -> &[f64] {
        &self.width
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (d, o) in out.iter_mut().enumerate() {
            *o = (x[d] - self.lo[d]) / self.width[d];
        }
    }

    pub fn apply_rows(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(m.nrows(), m.ncols(), |i, d| {
            (m[(i, d)] - self.lo[d]) / self.width[d]
        })
    }
}

/// Pairwise Euclidean distances between the rows of `centers`.
pub(crate) fn distance_matrix(centers: &DMatrix<f64>) -> DMatrix<f64> {
    let n = centers.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..i {
            let mut s = 0.0;
            for k in 0..centers.ncols() {
                let diff = centers[(i, k)] - centers[(j, k)];
                s += diff * diff;
            }
            let r = s.sqrt();
            d[(i, j)] = r;
            d[(j, i)] = r;
        }
    }
    d
}

/// `A_ij = phi(eps_j * D_ij)` from a precomputed distance matrix.
pub(crate) fn matrix_from_distances(dist: &DMatrix<f64>, shapes: &[f64], kind: KernelKind) -> DMatrix<f64> {
    DMatrix::from_fn(dist.nrows(), dist.ncols(), |i, j| kind.eval(shapes[j] * dist[(i, j)]))
}

/// Collocation matrix `[A]_ij = phi(eps_j ||z_i - z_j||)` on the rows of
/// `centers`, in the coordinates given (no scaling).
pub fn assemble_matrix(centers: &DMatrix<f64>, shapes: &[f64], kind: KernelKind) -> Result<DMatrix<f64>> {
    if shapes.len() != centers.nrows() {
        return Err(Error::structure(format!(
            "{} shapes for {} centers",
            shapes.len(),
            centers.nrows()
        )));
    }
    if shapes.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::domain("shape parameters must be positive"));
    }
    Ok(matrix_from_distances(&distance_matrix(centers), shapes, kind))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kernel_examples() {
        assert_eq!(kernel_eval(KernelKind::Gaussian, 0.0), 1.0);
        assert_relative_eq!(kernel_eval(KernelKind::Multiquadric, 1.0), 2f64.sqrt());
        assert_relative_eq!(kernel_eval(KernelKind::InverseMultiquadric, 2.0), 5f64.powf(-0.5));
        assert_eq!("MQ".parse::<KernelKind>().unwrap(), KernelKind::Multiquadric);
        assert!("cubic".parse::<KernelKind>().is_err());
    }

    #[test]
    fn two_point_gaussian_matrix() {
        let z = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let a = assemble_matrix(&z, &[1.0, 2.0], KernelKind::Gaussian).unwrap();
        assert_eq!(a[(0, 0)], 1.0);
        assert_eq!(a[(1, 1)], 1.0);
        assert_relative_eq!(a[(0, 1)], (-4f64).exp());
        assert_relative_eq!(a[(1, 0)], (-1f64).exp());
    }

    #[test]
    fn equal_shapes_give_symmetric_matrix() {
        let z = DMatrix::from_fn(7, 2, |i, k| ((i * 3 + k * 5) % 7) as f64 / 7.0 + k as f64 * 0.01);
        for kind in [KernelKind::Gaussian, KernelKind::Multiquadric, KernelKind::InverseMultiquadric] {
            let a = assemble_matrix(&z, &[1.7; 7], kind).unwrap();
            assert_eq!((&a - a.transpose()).amax(), 0.0);
            assert!(a.diagonal().iter().all(|v| *v == kind.eval(0.0)));
        }
    }

    #[test]
    fn training_set_validation() {
        assert!(TrainingSet::scalar(&[0.5], &[1.0]).is_err());
        assert!(TrainingSet::scalar(&[0.5, 0.5], &[1.0, 2.0]).is_err());
        assert!(TrainingSet::scalar(&[0.0, 1.0], &[1.0, f64::NAN]).is_err());
        let ts = TrainingSet::scalar(&[0.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((ts.len(), ts.dim(), ts.n_outputs()), (3, 1, 1));
    }

    #[test]
    fn scaling_maps_box_to_unit_cube() {
        let c = DMatrix::from_row_slice(3, 2, &[2.0, 5.0, 4.0, 5.0, 3.0, 5.0]);
        let s = InputScaling::from_centers(&c);
        let m = s.apply_rows(&c);
        assert_eq!(m.column(0).as_slice(), &[0.0, 1.0, 0.5]);
        assert_eq!(m.column(1).as_slice(), &[0.0, 0.0, 0.0]);
    }
}
