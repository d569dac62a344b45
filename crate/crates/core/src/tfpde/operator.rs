use nalgebra::DMatrix;

use super::{SpaceField, SpatialGrid};
use crate::error::{Error, Result};
use crate::linalg::BandedLu;

/// Five-point conservative discretization of `div(kappa grad u)` with
/// homogeneous Neumann boundaries.
///
/// Face diffusivities are harmonic means of the two adjacent nodal values.
/// The boundary condition mirrors the first interior node (and its
/// diffusivity) across the boundary, so every row sums to zero.
#[derive(Debug, Clone)]
pub struct DiffusionOperator {
    grid: SpatialGrid,
    diag: Vec<f64>,
    west: Vec<f64>,
    east: Vec<f64>,
    south: Vec<f64>,
    north: Vec<f64>,
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Samples `kappa` on the grid and assembles the operator.
pub fn assemble_diffusion_operator(
    grid: &SpatialGrid,
    kappa: &dyn SpaceField,
) -> Result<DiffusionOperator> {
    DiffusionOperator::from_nodal(grid, &kappa.sample(grid))
}

impl DiffusionOperator {
    pub fn from_nodal(grid: &SpatialGrid, kappa: &[f64]) -> Result<Self> {
        let n = grid.n_nodes();
        if kappa.len() != n {
            return Err(Error::structure(format!(
                "diffusivity has {} values for {n} nodes",
                kappa.len()
            )));
        }
        if let Some(p) = kappa.iter().position(|k| !(*k > 0.0 && k.is_finite())) {
            return Err(Error::domain(format!(
                "diffusivity must be positive, got {} at node {p}",
                kappa[p]
            )));
        }
        let (nx, ny) = (grid.nx(), grid.ny());
        let (ihx2, ihy2) = (1.0 / grid.hx().powi(2), 1.0 / grid.hy().powi(2));
        let mut op = DiffusionOperator {
            grid: *grid,
            diag: vec![0.0; n],
            west: vec![0.0; n],
            east: vec![0.0; n],
            south: vec![0.0; n],
            north: vec![0.0; n],
        };
        for j in 0..ny {
            for i in 0..nx {
                let p = grid.index(i, j);
                let k = kappa[p];
                // x faces
                if i == 0 {
                    let ke = harmonic(k, kappa[p + 1]) * ihx2;
                    op.east[p] = 2.0 * ke;
                    op.diag[p] -= 2.0 * ke;
                } else if i == nx - 1 {
                    let kw = harmonic(k, kappa[p - 1]) * ihx2;
                    op.west[p] = 2.0 * kw;
                    op.diag[p] -= 2.0 * kw;
                } else {
                    let ke = harmonic(k, kappa[p + 1]) * ihx2;
                    let kw = harmonic(k, kappa[p - 1]) * ihx2;
                    op.east[p] = ke;
                    op.west[p] = kw;
                    op.diag[p] -= ke + kw;
                }
                // y faces
                if j == 0 {
                    let kn = harmonic(k, kappa[p + nx]) * ihy2;
                    op.north[p] = 2.0 * kn;
                    op.diag[p] -= 2.0 * kn;
                } else if j == ny - 1 {
                    let ks = harmonic(k, kappa[p - nx]) * ihy2;
                    op.south[p] = 2.0 * ks;
                    op.diag[p] -= 2.0 * ks;
                } else {
                    let kn = harmonic(k, kappa[p + nx]) * ihy2;
                    let ks = harmonic(k, kappa[p - nx]) * ihy2;
                    op.north[p] = kn;
                    op.south[p] = ks;
                    op.diag[p] -= kn + ks;
                }
            }
        }
        Ok(op)
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let nx = self.grid.nx();
        let n = self.grid.n_nodes();
        assert_eq!(u.len(), n, "state length does not match the grid");
        (0..n)
            .map(|p| {
                let mut s = self.diag[p] * u[p];
                if self.west[p] != 0.0 {
                    s += self.west[p] * u[p - 1];
                }
                if self.east[p] != 0.0 {
                    s += self.east[p] * u[p + 1];
                }
                if self.south[p] != 0.0 {
                    s += self.south[p] * u[p - nx];
                }
                if self.north[p] != 0.0 {
                    s += self.north[p] * u[p + nx];
                }
                s
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let nx = self.grid.nx();
        let n = self.grid.n_nodes();
        let mut m = DMatrix::zeros(n, n);
        for p in 0..n {
            m[(p, p)] = self.diag[p];
            if self.west[p] != 0.0 {
                m[(p, p - 1)] = self.west[p];
            }
            if self.east[p] != 0.0 {
                m[(p, p + 1)] = self.east[p];
            }
            if self.south[p] != 0.0 {
                m[(p, p - nx)] = self.south[p];
            }
            if self.north[p] != 0.0 {
                m[(p, p + nx)] = self.north[p];
            }
        }
        m
    }

    /// Factors `shift * I - L`, the matrix of one implicit time step.
    pub(crate) fn factor_shifted(&self, shift: f64) -> Result<BandedLu> {
        let nx = self.grid.nx();
        let n = self.grid.n_nodes();
        let mut band = BandedLu::zeros(n, nx);
        for p in 0..n {
            band.add(p, p, shift - self.diag[p]);
            if self.west[p] != 0.0 {
                band.add(p, p - 1, -self.west[p]);
            }
            if self.east[p] != 0.0 {
                band.add(p, p + 1, -self.east[p]);
            }
            if self.south[p] != 0.0 {
                band.add(p, p - nx, -self.south[p]);
            }
            if self.north[p] != 0.0 {
                band.add(p, p + nx, -self.north[p]);
            }
        }
        band.factor()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn annihilates_constants() {
        let g = SpatialGrid::square(9).unwrap();
        let kappa: Vec<f64> = g.nodes().map(|x| 1.0 + x[0] * x[1] + 0.3 * x[0]).collect();
        let op = DiffusionOperator::from_nodal(&g, &kappa).unwrap();
        let lu = op.apply(&vec![1.0; g.n_nodes()]);
        assert!(lu.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn rejects_non_positive_diffusivity() {
        let g = SpatialGrid::square(4).unwrap();
        let mut kappa = vec![1.0; 16];
        kappa[5] = 0.0;
        assert!(matches!(
            DiffusionOperator::from_nodal(&g, &kappa),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn three_by_three_matches_hand_stencil() {
        // h = 1/2, kappa = 1: interior coefficient 1/h^2 = 4, mirrored 8.
        let g = SpatialGrid::square(3).unwrap();
        let op = DiffusionOperator::from_nodal(&g, &[1.0; 9]).unwrap();
        let mut expect = DMatrix::<f64>::zeros(9, 9);
        for j in 0..3usize {
            for i in 0..3usize {
                let p = j * 3 + i;
                let mut axis = |q: Option<usize>, r: Option<usize>| match (q, r) {
                    (Some(a), Some(b)) => {
                        expect[(p, a)] += 4.0;
                        expect[(p, b)] += 4.0;
                        expect[(p, p)] -= 8.0;
                    }
                    (Some(a), None) | (None, Some(a)) => {
                        expect[(p, a)] += 8.0;
                        expect[(p, p)] -= 8.0;
                    }
                    (None, None) => unreachable!(),
                };
                axis(i.checked_sub(1).map(|ii| j * 3 + ii), (i < 2).then(|| p + 1));
                axis(j.checked_sub(1).map(|jj| jj * 3 + i), (j < 2).then(|| p + 3));
            }
        }
        assert_eq!(op.to_dense(), expect);
    }

    #[test]
    fn second_order_on_cosine_mode() {
        let err = |n: usize| {
            let g = SpatialGrid::square(n).unwrap();
            let op = DiffusionOperator::from_nodal(&g, &vec![1.0; g.n_nodes()]).unwrap();
            let u: Vec<f64> = g
                .nodes()
                .map(|x| (PI * x[0]).cos() * (PI * x[1]).cos())
                .collect();
            let lu = op.apply(&u);
            lu.iter()
                .zip(&u)
                .map(|(a, b)| (a + 2.0 * PI * PI * b).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2, e3) = (err(11), err(21), err(41));
        let r1 = (e1 / e2).log2();
        let r2 = (e2 / e3).log2();
        assert!((r1 - 2.0).abs() < 0.1 && (r2 - 2.0).abs() < 0.1, "{r1} {r2}");
    }
}
