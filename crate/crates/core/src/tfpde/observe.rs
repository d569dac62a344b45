use nalgebra::{DMatrix, DVector};

use super::{SpatialGrid, TimeGrid, Trajectory};
use crate::error::{Error, Result};

/// Point sensors read at a set of times, with i.i.d. Gaussian noise.
///
/// Observation vectors are ordered time-major: entry `j * m_x + i` is the
/// reading of sensor `i` at the `j`-th sensor time.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSetup {
    grid: SpatialGrid,
    sensor_locations: Vec<[f64; 2]>,
    sensor_nodes: Vec<usize>,
    sensor_times: Vec<f64>,
    time_indices: Vec<usize>,
    n_time_nodes: usize,
    noise_std: f64,
}

impl ObservationSetup {
    /// Sensors and times must coincide with grid and time-grid nodes.
    pub fn new(
        grid: &SpatialGrid,
        tgrid: &TimeGrid,
        sensor_locations: Vec<[f64; 2]>,
        sensor_times: Vec<f64>,
        noise_std: f64,
    ) -> Result<Self> {
        if sensor_locations.is_empty() || sensor_times.is_empty() {
            return Err(Error::structure("observation setup needs sensors and times"));
        }
        if !(noise_std > 0.0 && noise_std.is_finite()) {
            return Err(Error::domain(format!(
                "noise standard deviation must be positive, got {noise_std}"
            )));
        }
        let sensor_nodes = sensor_locations
            .iter()
            .map(|&x| {
                grid.node_at(x).ok_or_else(|| {
                    Error::domain(format!("sensor at {x:?} is not a grid node"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let time_indices = sensor_times
            .iter()
            .map(|&t| {
                if t <= 0.0 {
                    return Err(Error::domain(format!("sensor time {t} must be positive")));
                }
                tgrid
                    .index_of(t)
                    .ok_or_else(|| Error::domain(format!("sensor time {t} is not a time node")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ObservationSetup {
            grid: *grid,
            sensor_locations,
            sensor_nodes,
            sensor_times,
            time_indices,
            n_time_nodes: tgrid.n_steps() + 1,
            noise_std,
        })
    }

    pub fn with_noise_std(&self, noise_std: f64) -> Result<Self> {
        if !(noise_std > 0.0 && noise_std.is_finite()) {
            return Err(Error::domain(format!(
                "noise standard deviation must be positive, got {noise_std}"
            )));
        }
        Ok(ObservationSetup {
            noise_std,
            ..self.clone()
        })
    }

    pub fn m(&self) -> usize {
        self.sensor_nodes.len() * self.sensor_times.len()
    }

    pub fn n_sensors(&self) -> usize {
        self.sensor_nodes.len()
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn sensor_locations(&self) -> &[[f64; 2]] {
        &self.sensor_locations
    }

    pub fn sensor_nodes(&self) -> &[usize] {
        &self.sensor_nodes
    }

    pub fn sensor_times(&self) -> &[f64] {
        &self.sensor_times
    }

    pub fn time_indices(&self) -> &[usize] {
        &self.time_indices
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// `Gamma = delta^2 I`.
    pub fn covariance(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal_element(self.m(), self.m(), self.noise_std * self.noise_std)
    }

    /// Reads the sensors from a trajectory computed on this setup's grids.
    pub fn observe(&self, traj: &Trajectory) -> Result<DVector<f64>> {
        if traj.n_nodes() != self.grid.n_nodes() || traj.n_times() != self.n_time_nodes {
            return Err(Error::structure(format!(
                "trajectory is {}x{}, setup expects {}x{}",
                traj.n_nodes(),
                traj.n_times(),
                self.grid.n_nodes(),
                self.n_time_nodes
            )));
        }
        let mx = self.sensor_nodes.len();
        let mut y = DVector::zeros(self.m());
        for (j, &k) in self.time_indices.iter().enumerate() {
            let state = traj.state_slice(k);
            for (i, &p) in self.sensor_nodes.iter().enumerate() {
                y[j * mx + i] = state[p];
            }
        }
        Ok(y)
    }
}

/// `n x n` tensor layout covering `[margin, 1 - margin]^2`, x fastest.
pub fn uniform_sensor_layout(n: usize, margin: f64) -> Vec<[f64; 2]> {
    let coord = |i: usize| {
        if n == 1 {
            0.5
        } else {
            margin + (1.0 - 2.0 * margin) * i as f64 / (n - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            out.push([coord(i), coord(j)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(n: usize, margin: f64) -> ObservationSetup {
        let g = SpatialGrid::square(21).unwrap();
        let tg = TimeGrid::new(1.0, 100).unwrap();
        ObservationSetup::new(&g, &tg, uniform_sensor_layout(n, margin), vec![0.25, 0.75, 1.0], 0.01)
            .unwrap()
    }

    #[test]
    fn measurement_counts() {
        assert_eq!(setup(3, 0.25).m(), 27);
        assert_eq!(setup(5, 0.1).m(), 75);
        assert_eq!(setup(7, 0.05).m(), 147);
    }

    #[test]
    fn zero_trajectory_gives_zero_data() {
        let s = setup(3, 0.25);
        let tr = Trajectory::new(
            TimeGrid::new(1.0, 100).unwrap().times(),
            DMatrix::zeros(441, 101),
        )
        .unwrap();
        let y = s.observe(&tr).unwrap();
        assert_eq!(y.len(), 27);
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn off_grid_sensors_are_rejected() {
        let g = SpatialGrid::square(21).unwrap();
        let tg = TimeGrid::new(1.0, 100).unwrap();
        assert!(ObservationSetup::new(&g, &tg, vec![[0.33, 0.5]], vec![1.0], 0.1).is_err());
        assert!(ObservationSetup::new(&g, &tg, vec![[0.35, 0.5]], vec![0.255], 0.1).is_err());
        assert!(ObservationSetup::new(&g, &tg, vec![[0.35, 0.5]], vec![1.0], 0.0).is_err());
    }

    #[test]
    fn ordering_is_time_major() {
        let g = SpatialGrid::square(3).unwrap();
        let tg = TimeGrid::new(1.0, 2).unwrap();
        let s = ObservationSetup::new(&g, &tg, vec![[0.0, 0.0], [1.0, 1.0]], vec![0.5, 1.0], 1.0)
            .unwrap();
        let vals = DMatrix::from_fn(9, 3, |p, k| (10 * k + p) as f64);
        let tr = Trajectory::new(tg.times(), vals).unwrap();
        let y = s.observe(&tr).unwrap();
        assert_eq!(y.as_slice(), &[10.0, 18.0, 20.0, 28.0]);
    }
}
