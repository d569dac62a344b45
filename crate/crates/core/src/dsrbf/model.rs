use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution};

use super::{distance_matrix, matrix_from_distances, InputScaling, KernelKind, TrainingSet};
use crate::error::{Error, Result};
use crate::linalg::{inverse_norm1_estimate, norm1};
use crate::textio::{TextReader, TextWriter};

/// Chi-squared law for the per-center shape parameters.
///
/// Non-integer degrees of freedom are handled through the Gamma
/// representation `chi2(k) = Gamma(k / 2, 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeDistribution {
    dof: f64,
    observations: Vec<f64>,
}

impl ShapeDistribution {
    pub fn new(dof: f64) -> Result<Self> {
        if !(dof > 0.0 && dof.is_finite()) {
            return Err(Error::domain(format!("degrees of freedom must be positive, got {dof}")));
        }
        Ok(ShapeDistribution {
            dof,
            observations: Vec::new(),
        })
    }

    pub fn from_observations(observations: Vec<f64>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::structure("no shape observations"));
        }
        let dof = observations.iter().sum::<f64>() / observations.len() as f64;
        Ok(ShapeDistribution {
            observations,
            ..ShapeDistribution::new(dof)?
        })
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    /// One strictly positive draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let law = ChiSquared::new(self.dof).expect("dof validated at construction");
        loop {
            let x: f64 = law.sample(rng);
            if x > 0.0 && x.is_finite() {
                return x;
            }
        }
    }
}

/// Acceptance thresholds for a collocation solve.
const COND_LIMIT: f64 = 1e14;
const RESIDUAL_LIMIT: f64 = 1e-8;
const MAX_RETRIES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct DsrbfModel {
    kernel: KernelKind,
    scaling: InputScaling,
    /// Centers in scaled coordinates, one per row.
    centers: DMatrix<f64>,
    shapes: Vec<f64>,
    coefficients: DMatrix<f64>,
    fit_residual: f64,
    cond_estimate: f64,
}

struct Solved {
    coefficients: DMatrix<f64>,
    residual: f64,
    cond: f64,
}

fn solve_collocation(a: &DMatrix<f64>, f: &DMatrix<f64>) -> Result<Solved> {
    let lu = a.clone().lu();
    let mut c = lu
        .solve(f)
        .ok_or_else(|| Error::numerical("collocation matrix is singular"))?;
    // one step of iterative refinement
    let r = f - a * &c;
    if let Some(dc) = lu.solve(&r) {
        c += dc;
    }
    let fnorm = f.norm();
    let residual = if fnorm == 0.0 {
        (a * &c).norm()
    } else {
        (a * &c - f).norm() / fnorm
    };
    let cond = norm1(a) * inverse_norm1_estimate(&lu)?;
    Ok(Solved {
        coefficients: c,
        residual,
        cond,
    })
}

fn accept(s: &Solved) -> bool {
    s.cond.is_finite() && s.cond <= COND_LIMIT && s.residual <= RESIDUAL_LIMIT
}

/// Draws `eps_j ~ dist` independently per center and solves the square
/// collocation system `A_eps c = f_Z`. A numerically singular draw
/// (condition estimate above 1e14 or relative residual above 1e-8) is
/// retried with fresh shapes up to three times.
pub fn fit<R: Rng + ?Sized>(
    ts: &TrainingSet,
    kind: KernelKind,
    dist: &ShapeDistribution,
    rng: &mut R,
) -> Result<DsrbfModel> {
    let scaling = InputScaling::from_centers(ts.centers());
    let centers = scaling.apply_rows(ts.centers());
    let d = distance_matrix(&centers);
    let mut last = None;
    for _ in 0..=MAX_RETRIES {
        let shapes: Vec<f64> = (0..ts.len()).map(|_| dist.sample(rng)).collect();
        let a = matrix_from_distances(&d, &shapes, kind);
        let solved = solve_collocation(&a, ts.values())?;
        if accept(&solved) {
            return Ok(DsrbfModel {
                kernel: kind,
                scaling,
                centers,
                shapes,
                coefficients: solved.coefficients,
                fit_residual: solved.residual,
                cond_estimate: solved.cond,
            });
        }
        last = Some((solved.cond, solved.residual));
    }
    let (cond, res) = last.unwrap_or_default();
    Err(Error::numerical(format!(
        "collocation matrix numerically singular after {} draws (condition {cond:.3e}, residual {res:.3e})",
        MAX_RETRIES + 1
    )))
}

/// Fits with prescribed shapes (e.g. a constant LOOCV-optimal shape).
pub fn fit_with_shapes(ts: &TrainingSet, kind: KernelKind, shapes: &[f64]) -> Result<DsrbfModel> {
    if shapes.len() != ts.len() || shapes.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::domain("need one positive shape per center"));
    }
    let scaling = InputScaling::from_centers(ts.centers());
    let centers = scaling.apply_rows(ts.centers());
    let a = matrix_from_distances(&distance_matrix(&centers), shapes, kind);
    let solved = solve_collocation(&a, ts.values())?;
    if !solved.cond.is_finite() {
        return Err(Error::numerical("collocation matrix is singular"));
    }
    Ok(DsrbfModel {
        kernel: kind,
        scaling,
        centers,
        shapes: shapes.to_vec(),
        coefficients: solved.coefficients,
        fit_residual: solved.residual,
        cond_estimate: solved.cond,
    })
}

impl DsrbfModel {
    /// Assembles a model from its parts; `centers` are in scaled
    /// coordinates.
    pub fn from_parts(
        kernel: KernelKind,
        scaling: InputScaling,
        centers: DMatrix<f64>,
        shapes: Vec<f64>,
        coefficients: DMatrix<f64>,
    ) -> Result<Self> {
        let n = centers.nrows();
        if shapes.len() != n || coefficients.nrows() != n || scaling.dim() != centers.ncols() {
            return Err(Error::structure("inconsistent model parts"));
        }
        if shapes.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::domain("shape parameters must be positive"));
        }
        Ok(DsrbfModel {
            kernel,
            scaling,
            centers,
            shapes,
            coefficients,
            fit_residual: 0.0,
            cond_estimate: f64::NAN,
        })
    }

    pub fn kernel(&self) -> KernelKind {
        self.kernel
    }

    pub fn scaling(&self) -> &InputScaling {
        &self.scaling
    }

    pub fn centers(&self) -> &DMatrix<f64> {
        &self.centers
    }

    pub fn shapes(&self) -> &[f64] {
        &self.shapes
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    pub fn fit_residual(&self) -> f64 {
        self.fit_residual
    }

    pub fn cond_estimate(&self) -> f64 {
        self.cond_estimate
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.coefficients.ncols()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::structure(format!(
                "input has {} components, model expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    #[inline]
    fn basis(&self, x: &[f64], j: usize) -> f64 {
        let lo = self.scaling.lo();
        let w = self.scaling.width();
        let mut s = 0.0;
        for d in 0..x.len() {
            let diff = (x[d] - lo[d]) / w[d] - self.centers[(j, d)];
            s += diff * diff;
        }
        self.kernel.eval(self.shapes[j] * s.sqrt())
    }

    /// All outputs at `x` (original, unscaled coordinates).
    pub fn predict(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check_dim(x)?;
        let mut out = DVector::zeros(self.n_outputs());
        for j in 0..self.centers.nrows() {
            let phi = self.basis(x, j);
            for (o, c) in out.iter_mut().zip(self.coefficients.row(j).iter()) {
                *o += c * phi;
            }
        }
        Ok(out)
    }

    /// First output at `x`.
    pub fn predict_scalar(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok((0..self.centers.nrows())
            .map(|j| self.coefficients[(j, 0)] * self.basis(x, j))
            .sum())
    }

    pub(crate) fn write_into(&self, w: &mut TextWriter) {
        w.word("dsrbf", "v1");
        w.word("kernel", self.kernel.tag());
        w.floats("scale_lo", self.scaling.lo());
        w.floats("scale_width", self.scaling.width());
        w.matrix("centers", &self.centers);
        w.floats("shapes", &self.shapes);
        w.matrix("coefficients", &self.coefficients);
        w.float("fit_residual", self.fit_residual);
        w.float("cond_estimate", self.cond_estimate);
    }

    pub(crate) fn read_from(r: &mut TextReader<'_>) -> Result<Self> {
        let version = r.word("dsrbf")?;
        if version != "v1" {
            return Err(Error::parse(format!("unsupported model version `{version}`")));
        }
        let kernel = r.word("kernel")?.parse()?;
        let scaling = InputScaling::from_parts(r.floats("scale_lo")?, r.floats("scale_width")?)?;
        let centers = r.matrix("centers")?;
        let shapes = r.floats("shapes")?;
        let coefficients = r.matrix("coefficients")?;
        let mut m = DsrbfModel::from_parts(kernel, scaling, centers, shapes, coefficients)?;
        m.fit_residual = r.float("fit_residual")?;
        m.cond_estimate = r.float("cond_estimate")?;
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut w = TextWriter::new();
        self.write_into(&mut w);
        w.finish()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        DsrbfModel::read_from(&mut TextReader::new(text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsrbf::{build_shape_distribution, ShapeBounds};
    use crate::rng::SeedTree;
    use proptest::prelude::{prop_assert_eq, prop_assume, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn sin_set(n: usize) -> TrainingSet {
        let z: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let f: Vec<f64> = z.iter().map(|x| (2.0 * PI * x).sin()).collect();
        TrainingSet::scalar(&z, &f).unwrap()
    }

    #[test]
    fn chi_squared_mean_matches_dof() {
        let d = ShapeDistribution::new(2.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        let mean = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 2.7).abs() < 0.03);
        assert!(ShapeDistribution::new(0.0).is_err());
        let same = ShapeDistribution::from_observations(vec![1.25; 5]).unwrap();
        assert_eq!(same.dof(), 1.25);
    }

    #[test]
    fn fit_interpolates_and_records_residual() {
        let ts = sin_set(30);
        let dist = build_shape_distribution(&ts, KernelKind::Multiquadric, 3, 15, ShapeBounds::default(), &SeedTree::new(3))
            .unwrap();
        let m = fit(&ts, KernelKind::Multiquadric, &dist, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(m.fit_residual() <= 1e-8);
        assert!(m.shapes().iter().all(|e| *e > 0.0));
        let scale = 1.0 + ts.values().amax();
        for i in 0..ts.len() {
            let z = ts.centers()[(i, 0)];
            assert!((m.predict_scalar(&[z]).unwrap() - ts.values()[(i, 0)]).abs() <= 1e-6 * scale);
        }
    }

    #[test]
    fn zero_targets_give_zero_model() {
        let ts = TrainingSet::scalar(&[0.0, 0.3, 0.7, 1.0], &[0.0; 4]).unwrap();
        let dist = ShapeDistribution::new(3.0).unwrap();
        let m = fit(&ts, KernelKind::InverseMultiquadric, &dist, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(m.coefficients().iter().all(|c| *c == 0.0));
        assert_eq!(m.predict_scalar(&[0.42]).unwrap(), 0.0);
    }

    #[test]
    fn unit_coefficient_is_a_basis_function() {
        let scaling = InputScaling::from_parts(vec![0.0], vec![1.0]).unwrap();
        let centers = DMatrix::from_column_slice(3, 1, &[0.0, 0.5, 1.0]);
        let mut c = DMatrix::zeros(3, 1);
        c[(0, 0)] = 1.0;
        let m = DsrbfModel::from_parts(KernelKind::Gaussian, scaling, centers, vec![2.0, 1.0, 1.0], c).unwrap();
        for x in [0.0, 0.3, 0.9] {
            assert_eq!(m.predict_scalar(&[x]).unwrap(), (-(2.0 * x) * (2.0 * x)).exp());
        }
        assert!(m.predict(&[0.1, 0.2]).is_err());
    }

    #[test]
    fn gaussian_far_field_decay_bound() {
        let ts = sin_set(10);
        let m = fit(&ts, KernelKind::Gaussian, &ShapeDistribution::new(6.0).unwrap(), &mut ChaCha8Rng::seed_from_u64(2));
        let Ok(m) = m else { return };
        let x = 5.0;
        let eps_min = m.shapes().iter().copied().fold(f64::INFINITY, f64::min);
        let d_min = m.centers().iter().map(|z| (x - z).abs()).fold(f64::INFINITY, f64::min);
        let bound = m.coefficients().iter().map(|c| c.abs()).sum::<f64>() * (-(eps_min * d_min).powi(2)).exp();
        assert!(m.predict_scalar(&[x]).unwrap().abs() <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn vector_targets_share_one_matrix() {
        let z: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let centers = DMatrix::from_column_slice(12, 1, &z);
        let values = DMatrix::from_fn(12, 2, |i, j| if j == 0 { z[i] } else { z[i] * z[i] });
        let ts = TrainingSet::new(centers, values).unwrap();
        let m = fit_with_shapes(&ts, KernelKind::Multiquadric, &[2.0; 12]).unwrap();
        let y = m.predict(&[z[4]]).unwrap();
        assert!((y[0] - z[4]).abs() < 1e-8 && (y[1] - z[4] * z[4]).abs() < 1e-8);
    }

    #[test]
    fn fitting_is_seed_deterministic() {
        let ts = sin_set(20);
        let dist = ShapeDistribution::new(15.0).unwrap();
        let a = fit(&ts, KernelKind::Multiquadric, &dist, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let b = fit(&ts, KernelKind::Multiquadric, &dist, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn text_round_trip_is_bit_exact(seed in 0u64..500, n in 4usize..16, x in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let centers = DMatrix::from_fn(n, 2, |i, k| i as f64 + rng.gen_range(0.0..0.5) * (k as f64 + 1.0));
            let values = DMatrix::from_fn(n, 1, |_, _| rng.gen_range(-1.0..1.0));
            let ts = TrainingSet::new(centers, values).unwrap();
            let m = fit(&ts, KernelKind::Multiquadric, &ShapeDistribution::new(4.0).unwrap(), &mut rng);
            prop_assume!(m.is_ok());
            let m = m.unwrap();
            let back = DsrbfModel::from_text(&m.to_text()).unwrap();
            let p = [x * n as f64, 0.3];
            prop_assert_eq!(m.predict(&p).unwrap(), back.predict(&p).unwrap());
            prop_assert_eq!(back.to_text(), m.to_text());
        }
    }
}
