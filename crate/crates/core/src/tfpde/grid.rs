use crate::error::{Error, Result};

const SNAP_TOL: f64 = 1e-9;

/// Uniform node grid on the unit square.
///
/// Nodes are numbered row-major with x fastest: node `(i, j)` (x-index `i`,
/// y-index `j`) has index `j * nx + i` and sits at `(i * hx, j * hy)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpatialGrid {
    nx: usize,
    ny: usize,
}

impl SpatialGrid {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::domain(format!(
                "grid needs at least 3 nodes per axis, got {nx}x{ny}"
            )));
        }
        Ok(SpatialGrid { nx, ny })
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn hx(&self) -> f64 {
        1.0 / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        1.0 / (self.ny - 1) as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let (i, j) = (idx % self.nx, idx / self.nx);
        [i as f64 * self.hx(), j as f64 * self.hy()]
    }

    pub fn nodes(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.n_nodes()).map(|p| self.coords(p))
    }

    /// Index of the node at `x`, if `x` coincides with one.
    pub fn node_at(&self, x: [f64; 2]) -> Option<usize> {
        let snap = |v: f64, h: f64, n: usize| -> Option<usize> {
            let k = (v / h).round();
            if k < 0.0 || k > (n - 1) as f64 || (k * h - v).abs() > SNAP_TOL {
                None
            } else {
                Some(k as usize)
            }
        };
        let i = snap(x[0], self.hx(), self.nx)?;
        let j = snap(x[1], self.hy(), self.ny)?;
        Some(self.index(i, j))
    }

    /// Trapezoidal quadrature weights; they sum to one.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let w1 = |k: usize, n: usize| if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
        let cell = self.hx() * self.hy();
        (0..self.n_nodes())
            .map(|p| w1(p % self.nx, self.nx) * w1(p / self.nx, self.ny) * cell)
            .collect()
    }
}

/// Uniform time grid `t_k = k T / n`, `k = 0..=n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_final: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, n_steps: usize) -> Result<Self> {
        if !(t_final > 0.0 && t_final.is_finite()) || n_steps == 0 {
            return Err(Error::domain(format!(
                "time grid needs T > 0 and at least one step (T = {t_final}, n = {n_steps})"
            )));
        }
        Ok(TimeGrid { t_final, n_steps })
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.n_steps as f64
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t_final * k as f64 / self.n_steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }

    /// Index of the node at time `t`, if `t` coincides with one.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = (t / self.dt()).round();
        if k < 0.0 || k > self.n_steps as f64 {
            return None;
        }
        let k = k as usize;
        ((self.time(k) - t).abs() <= SNAP_TOL * t.abs().max(1.0)).then_some(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_tiny_sizes() {
        assert!(SpatialGrid::new(2, 5).is_err());
        assert!(SpatialGrid::square(3).is_ok());
    }

    #[test]
    fn row_major_ordering() {
        let g = SpatialGrid::new(5, 3).unwrap();
        assert_eq!(g.index(2, 1), 7);
        assert_eq!(g.coords(7), [0.5, 0.5]);
        assert_eq!(g.node_at([0.5, 0.5]), Some(7));
        assert_eq!(g.node_at([0.3, 0.5]), None);
        assert_eq!(g.node_at([1.0, 1.0]), Some(14));
    }

    #[test]
    fn trapezoid_weights_integrate_one() {
        let g = SpatialGrid::square(21).unwrap();
        let s: f64 = g.trapezoid_weights().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn time_lookup() {
        let tg = TimeGrid::new(1.0, 100).unwrap();
        assert_eq!(tg.index_of(0.25), Some(25));
        assert_eq!(tg.index_of(1.0), Some(100));
        assert_eq!(tg.index_of(0.255), None);
        assert_eq!(tg.index_of(1.5), None);
        assert!((tg.dt() * tg.n_steps() as f64 - tg.t_final()).abs() < 1e-15);
    }
}
