use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::operator::assemble_diffusion_operator;
use super::{SpatialGrid, TimeGrid};
use crate::error::{Error, Result};

/// A scalar function on the unit square.
pub trait SpaceField: Send + Sync {
    fn value(&self, x: [f64; 2]) -> f64;

    fn sample(&self, grid: &SpatialGrid) -> Vec<f64> {
        grid.nodes().map(|x| self.value(x)).collect()
    }
}

/// A scalar function of space and time.
pub trait SourceTerm: Send + Sync {
    fn value(&self, x: [f64; 2], t: f64) -> f64;

    fn sample_into(&self, grid: &SpatialGrid, t: f64, out: &mut [f64]) {
        for (p, o) in out.iter_mut().enumerate() {
            *o = self.value(grid.coords(p), t);
        }
    }
}

impl<F> SpaceField for F
where
    F: Fn([f64; 2]) -> f64 + Send + Sync,
{
    fn value(&self, x: [f64; 2]) -> f64 {
        self(x)
    }
}

impl<F> SourceTerm for F
where
    F: Fn([f64; 2], f64) -> f64 + Send + Sync,
{
    fn value(&self, x: [f64; 2], t: f64) -> f64 {
        self(x, t)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantField(pub f64);

impl SpaceField for ConstantField {
    fn value(&self, _x: [f64; 2]) -> f64 {
        self.0
    }
}

/// `e^{-t} exp(-|x - c|^2 / (2 w^2))`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianBump {
    pub center: [f64; 2],
    pub width: f64,
}

impl GaussianBump {
    pub fn new(center: [f64; 2]) -> Self {
        GaussianBump { center, width: 0.1 }
    }

    fn spatial(&self, x: [f64; 2]) -> f64 {
        let r2 = (x[0] - self.center[0]).powi(2) + (x[1] - self.center[1]).powi(2);
        (-0.5 * r2 / (self.width * self.width)).exp()
    }
}

impl SourceTerm for GaussianBump {
    fn value(&self, x: [f64; 2], t: f64) -> f64 {
        (-t).exp() * self.spatial(x)
    }

    fn sample_into(&self, grid: &SpatialGrid, t: f64, out: &mut [f64]) {
        let decay = (-t).exp();
        for (p, o) in out.iter_mut().enumerate() {
            *o = decay * self.spatial(grid.coords(p));
        }
    }
}

/// Source used by the source-localization problems: a Gaussian bump of
/// width 0.1 centered at `theta`, decaying like `e^{-t}`.
pub fn gaussian_bump_source(theta: [f64; 2], x: [f64; 2], t: f64) -> f64 {
    GaussianBump::new(theta).value(x, t)
}

/// Time-fractional diffusion model `D_t^alpha u = div(kappa grad u) + f`
/// with `u(., 0) = u_0` and homogeneous Neumann boundaries.
#[derive(Clone)]
pub struct FractionalModel {
    alpha: f64,
    kappa: Arc<dyn SpaceField>,
    source: Arc<dyn SourceTerm>,
    initial: Arc<dyn SpaceField>,
}

impl fmt::Debug for FractionalModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FractionalModel")
            .field("alpha", &self.alpha)
            .finish_non_exhaustive()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "fractional order must lie in (0, 1), got {alpha}"
        )))
    }
}

impl FractionalModel {
    pub fn new(
        alpha: f64,
        kappa: Arc<dyn SpaceField>,
        source: Arc<dyn SourceTerm>,
        initial: Arc<dyn SpaceField>,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(FractionalModel {
            alpha,
            kappa,
            source,
            initial,
        })
    }

    /// Unit diffusivity, zero initial state.
    pub fn with_source(alpha: f64, source: Arc<dyn SourceTerm>) -> Result<Self> {
        Self::new(
            alpha,
            Arc::new(ConstantField(1.0)),
            source,
            Arc::new(ConstantField(0.0)),
        )
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn kappa(&self) -> &dyn SpaceField {
        self.kappa.as_ref()
    }
}

/// L1 convolution weights `b_j = (j+1)^{1-alpha} - j^{1-alpha}`, `j < n`.
pub fn l1_weights(alpha: f64, n: usize) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let e = 1.0 - alpha;
    Ok((0..n)
        .map(|j| ((j + 1) as f64).powf(e) - (j as f64).powf(e))
        .collect())
}

/// Discrete solution on a space-time grid; column `k` is the state at `t_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    values: DMatrix<f64>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, values: DMatrix<f64>) -> Result<Self> {
        if times.len() != values.ncols() {
            return Err(Error::structure(format!(
                "{} times for {} snapshot columns",
                times.len(),
                values.ncols()
            )));
        }
        Ok(Trajectory { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_nodes(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.values.ncols()
    }

    pub fn state(&self, k: usize) -> DVector<f64> {
        self.values.column(k).into_owned()
    }

    pub fn state_slice(&self, k: usize) -> &[f64] {
        let n = self.values.nrows();
        &self.values.as_slice()[k * n..(k + 1) * n]
    }

    /// One row per node, one column per time, after a header row of times.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = self.times.iter().map(|t| format!("{t}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for p in 0..self.values.nrows() {
            let row: Vec<String> = self.values.row(p).iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Integrates the model with the implicit L1 scheme.
///
/// With `d = dt^{-alpha} / Gamma(2 - alpha)` each step solves
/// `(d I - L) u^k = d [sum_{j=1}^{k-1} (b_{j-1} - b_j) u^{k-j} + b_{k-1} u^0] + f(t_k)`
/// using one banded factorization shared by all steps.
pub fn solve_forward(
    model: &FractionalModel,
    grid: &SpatialGrid,
    tgrid: &TimeGrid,
) -> Result<Trajectory> {
    let n = tgrid.n_steps();
    let nh = grid.n_nodes();
    let alpha = model.alpha;
    let b = l1_weights(alpha, n)?;
    let d = tgrid.dt().powf(-alpha) / libm::tgamma(2.0 - alpha);

    let op = assemble_diffusion_operator(grid, model.kappa.as_ref())?;
    let lu = op.factor_shifted(d).map_err(|e| Error::SingularStep {
        step: 1,
        reason: e.to_string(),
    })?;

    let mut values = DMatrix::<f64>::zeros(nh, n + 1);
    let u0 = model.initial.sample(grid);
    if u0.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("initial state is not finite"));
    }
    values.as_mut_slice()[..nh].copy_from_slice(&u0);

    let mut forcing = vec![0.0; nh];
    let data = values.as_mut_slice();
    for k in 1..=n {
        let (past, rest) = data.split_at_mut(k * nh);
        let cur = &mut rest[..nh];
        cur.fill(0.0);
        for j in 1..k {
            let c = b[j - 1] - b[j];
            let col = &past[(k - j) * nh..(k - j + 1) * nh];
            for (o, v) in cur.iter_mut().zip(col) {
                *o += c * v;
            }
        }
        let c0 = b[k - 1];
        for (o, v) in cur.iter_mut().zip(&past[..nh]) {
            *o = d * (*o + c0 * v);
        }
        model.source.sample_into(grid, tgrid.time(k), &mut forcing);
        for (o, f) in cur.iter_mut().zip(&forcing) {
            *o += f;
        }
        lu.solve_in_place(cur);
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularStep {
                step: k,
                reason: "non-finite state".into(),
            });
        }
    }
    Trajectory::new(tgrid.times(), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn l1_weights_examples() {
        assert_eq!(l1_weights(0.5, 1).unwrap(), vec![1.0]);
        let w = l1_weights(0.5, 2).unwrap();
        assert_relative_eq!(w[1], 2f64.sqrt() - 1.0, epsilon = 1e-15);
        assert_relative_eq!(w[1], 0.414214, epsilon = 1e-6);
        assert!(l1_weights(1.0, 3).is_err());
        assert!(l1_weights(0.0, 3).is_err());
    }

    #[test]
    fn l1_weights_telescope_and_decrease() {
        let w = l1_weights(0.3, 100).unwrap();
        assert_eq!(w[0], 1.0);
        assert!(w.windows(2).all(|p| p[1] < p[0] && p[1] > 0.0));
        // direct summation, compared with n^{1-alpha}
        let s: f64 = w.iter().sum();
        assert_relative_eq!(s, 100f64.powf(0.7), max_relative = 1e-12);
    }

    #[test]
    fn gaussian_bump_examples() {
        assert_eq!(gaussian_bump_source([0.3, 0.4], [0.3, 0.4], 0.0), 1.0);
        assert_relative_eq!(
            gaussian_bump_source([0.2, 0.7], [0.2, 0.8], 0.0),
            (-0.5f64).exp(),
            max_relative = 1e-12
        );
        assert_relative_eq!(gaussian_bump_source([0.2, 0.7], [0.2, 0.8], 0.0), 0.606531, epsilon = 1e-6);
        assert_relative_eq!(gaussian_bump_source([0.2, 0.7], [0.2, 0.7], 1.0), 0.367879, epsilon = 1e-6);
    }

    #[test]
    fn homogeneous_problem_stays_zero() {
        let g = SpatialGrid::square(7).unwrap();
        let tg = TimeGrid::new(1.0, 10).unwrap();
        let m = FractionalModel::with_source(0.5, Arc::new(|_x: [f64; 2], _t: f64| 0.0)).unwrap();
        let tr = solve_forward(&m, &g, &tg).unwrap();
        assert_eq!(tr.n_times(), 11);
        assert!(tr.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constants_are_preserved() {
        let g = SpatialGrid::square(9).unwrap();
        let tg = TimeGrid::new(1.0, 40).unwrap();
        let m = FractionalModel::new(
            0.4,
            Arc::new(|x: [f64; 2]| 1.0 + x[0]),
            Arc::new(|_x: [f64; 2], _t: f64| 0.0),
            Arc::new(ConstantField(2.5)),
        )
        .unwrap();
        let tr = solve_forward(&m, &g, &tg).unwrap();
        for v in tr.values().iter() {
            assert_relative_eq!(*v, 2.5, max_relative = 1e-10);
        }
    }

    #[test]
    fn initial_column_is_initial_state() {
        let g = SpatialGrid::square(5).unwrap();
        let tg = TimeGrid::new(0.5, 5).unwrap();
        let m = FractionalModel::new(
            0.7,
            Arc::new(ConstantField(1.0)),
            Arc::new(GaussianBump::new([0.5, 0.5])),
            Arc::new(|x: [f64; 2]| x[0] * x[1]),
        )
        .unwrap();
        let tr = solve_forward(&m, &g, &tg).unwrap();
        for p in 0..g.n_nodes() {
            let x = g.coords(p);
            assert_eq!(tr.values()[(p, 0)], x[0] * x[1]);
        }
    }

    #[test]
    fn trapezoid_mass_grows_under_constant_nonnegative_source() {
        // wᵀL = 0 for trapezoid weights w, so the mass follows the scalar L1
        // recursion with constant forcing and increases monotonically.
        let g = SpatialGrid::square(11).unwrap();
        let tg = TimeGrid::new(1.0, 50).unwrap();
        let m = FractionalModel::new(
            0.6,
            Arc::new(|x: [f64; 2]| 0.5 + x[1]),
            Arc::new(|x: [f64; 2], _t: f64| (-20.0 * ((x[0] - 0.3).powi(2) + (x[1] - 0.6).powi(2))).exp()),
            Arc::new(ConstantField(0.0)),
        )
        .unwrap();
        let tr = solve_forward(&m, &g, &tg).unwrap();
        let w = g.trapezoid_weights();
        let mass: Vec<f64> = (0..tr.n_times())
            .map(|k| tr.state_slice(k).iter().zip(&w).map(|(u, w)| u * w).sum())
            .collect();
        assert!(mass.windows(2).all(|p| p[1] >= p[0]), "{mass:?}");
    }

    #[test]
    fn csv_has_header_and_rows() {
        let tr = Trajectory::new(vec![0.0, 0.5], DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "0,0.5");
    }
}
