use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use crate::error::Result;
use crate::tfpde::{solve_forward, FractionalModel, SpatialGrid, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Refinement {
    Time,
    Space,
}

/// Max-norm error of one run of a refinement study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergencePoint {
    pub kind: Refinement,
    pub alpha: f64,
    /// `dt` for time refinement, `h` for space refinement.
    pub step: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub points: Vec<ConvergencePoint>,
}

/// Least-squares slope of `ln(error)` against `ln(step)`.
pub fn observed_order(points: &[ConvergencePoint]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.step.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.error.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

impl ConvergenceStudy {
    pub fn series(&self, kind: Refinement, alpha: f64) -> Vec<ConvergencePoint> {
        self.points
            .iter()
            .filter(|p| p.kind == kind && p.alpha == alpha)
            .copied()
            .collect()
    }

    pub fn order(&self, kind: Refinement, alpha: f64) -> f64 {
        observed_order(&self.series(kind, alpha))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "kind,alpha,step,error")?;
        for p in &self.points {
            let kind = match p.kind {
                Refinement::Time => "time",
                Refinement::Space => "space",
            };
            writeln!(w, "{kind},{},{:.6e},{:.6e}", p.alpha, p.step, p.error)?;
        }
        Ok(())
    }
}

fn mode(x: [f64; 2]) -> f64 {
    (PI * x[0]).cos() * (PI * x[1]).cos()
}

/// Max-norm error over all nodes and steps for `u = g(t) cos(pi x) cos(pi y)`
/// with `D_t^alpha u = Delta u + f`, where `f = (D^alpha g - lambda g) mode`.
fn max_error(
    alpha: f64,
    n: usize,
    steps: usize,
    g: fn(f64) -> f64,
    caputo_g: impl Fn(f64) -> f64 + Send + Sync + 'static,
    lambda: f64,
) -> Result<f64> {
    let grid = SpatialGrid::square(n)?;
    let tgrid = TimeGrid::new(1.0, steps)?;
    let source = move |x: [f64; 2], t: f64| (caputo_g(t) - lambda * g(t)) * mode(x);
    let model = FractionalModel::with_source(alpha, Arc::new(source))?;
    let traj = solve_forward(&model, &grid, &tgrid)?;
    let mut err: f64 = 0.0;
    for k in 0..traj.n_times() {
        let gt = g(traj.times()[k]);
        for (p, v) in traj.state_slice(k).iter().enumerate() {
            err = err.max((v - gt * mode(grid.coords(p))).abs());
        }
    }
    Ok(err)
}

/// Time refinement over `dts_inv` with `u = t^2 mode`. The source uses the
/// grid eigenvalue of the five-point operator for `mode`, so the spatial
/// error vanishes and only the L1 error remains.
pub fn temporal_study(alpha: f64, n: usize, dts_inv: &[usize]) -> Result<Vec<ConvergencePoint>> {
    let h = 1.0 / (n - 1) as f64;
    let lambda = -2.0 * 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
    let c = 2.0 / libm::tgamma(3.0 - alpha);
    dts_inv
        .iter()
        .map(|&steps| {
            let error = max_error(alpha, n, steps, |t| t * t, move |t| c * t.powf(2.0 - alpha), lambda)?;
            Ok(ConvergencePoint {
                kind: Refinement::Time,
                alpha,
                step: 1.0 / steps as f64,
                error,
            })
        })
        .collect()
}

/// Space refinement with `u = t mode` against the continuous Laplacian
/// eigenvalue `-2 pi^2`. The L1 scheme is exact for functions linear in
/// time, so only the spatial error remains.
pub fn spatial_study(alpha: f64, ns: &[usize], steps: usize) -> Result<Vec<ConvergencePoint>> {
    let c = 1.0 / libm::tgamma(2.0 - alpha);
    ns.iter()
        .map(|&n| {
            let error = max_error(alpha, n, steps, |t| t, move |t| c * t.powf(1.0 - alpha), -2.0 * PI * PI)?;
            Ok(ConvergencePoint {
                kind: Refinement::Space,
                alpha,
                step: 1.0 / (n - 1) as f64,
                error,
            })
        })
        .collect()
}

/// Time refinement `dt = 1/25 .. 1/200` on an 11 x 11 grid and space
/// refinement `h = 1/10 .. 1/40` for every `alpha`.
pub fn forward_convergence(alphas: &[f64]) -> Result<ConvergenceStudy> {
    let mut points = Vec::new();
    for &alpha in alphas {
        points.extend(temporal_study(alpha, 11, &[25, 50, 100, 200])?);
        points.extend(spatial_study(alpha, &[11, 21, 41], 20)?);
    }
    Ok(ConvergenceStudy { points })
}
