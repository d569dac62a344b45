//! Snapshot matrices and the proper orthogonal decomposition.
//!
//! Snapshots are expanded directly in the POD modes (no mean subtraction),
//! with the Euclidean inner product on nodal values. The left singular
//! vectors come from a thin SVD of `S` when `n_h >= Q` and from the
//! eigendecomposition of the `n_h x n_h` Gram matrix `S Sᵀ` otherwise. Each
//! mode is signed so that its largest-magnitude entry is positive.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{energy_rank, fix_sign, numerical_rank, sorted_svd};
use crate::tfpde::Trajectory;

/// Snapshot columns with their `(time index, parameter index)` provenance.
#[derive(Debug, Clone)]
pub struct SnapshotMatrix {
    data: DMatrix<f64>,
    provenance: Vec<(usize, usize)>,
}

impl SnapshotMatrix {
    pub fn new(data: DMatrix<f64>, provenance: Vec<(usize, usize)>) -> Result<Self> {
        if data.ncols() != provenance.len() {
            return Err(Error::structure(format!(
                "{} columns but {} provenance records",
                data.ncols(),
                provenance.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("snapshot matrix contains non-finite entries"));
        }
        Ok(SnapshotMatrix { data, provenance })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn provenance(&self) -> &[(usize, usize)] {
        &self.provenance
    }

    pub fn n_h(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_snapshots(&self) -> usize {
        self.data.ncols()
    }
}

/// Stacks the selected time columns of every trajectory, parameter-major
/// (all times of trajectory 0, then trajectory 1, ...).
pub fn build_snapshot_matrix(
    trajectories: &[Trajectory],
    time_subsample: &[usize],
) -> Result<SnapshotMatrix> {
    let first = trajectories
        .first()
        .ok_or_else(|| Error::structure("no trajectories given"))?;
    if time_subsample.is_empty() {
        return Err(Error::structure("no snapshot times selected"));
    }
    let nh = first.n_nodes();
    for (j, tr) in trajectories.iter().enumerate() {
        if tr.n_nodes() != nh {
            return Err(Error::structure(format!(
                "trajectory {j} has {} nodes, expected {nh}",
                tr.n_nodes()
            )));
        }
        if let Some(&k) = time_subsample.iter().find(|&&k| k >= tr.n_times()) {
            return Err(Error::structure(format!(
                "time index {k} out of range for trajectory {j}"
            )));
        }
    }
    let q = trajectories.len() * time_subsample.len();
    let mut data = DMatrix::zeros(nh, q);
    let mut provenance = Vec::with_capacity(q);
    let mut col = 0;
    for (j, tr) in trajectories.iter().enumerate() {
        for &k in time_subsample {
            data.column_mut(col).copy_from_slice(tr.state_slice(k));
            provenance.push((k, j));
            col += 1;
        }
    }
    SnapshotMatrix::new(data, provenance)
}

/// How many modes to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PodCriterion {
    /// Exactly `p` modes, capped at the numerical rank.
    Fixed(usize),
    /// Smallest `p` whose captured energy fraction exceeds the tolerance.
    Energy(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    modes: DMatrix<f64>,
    singular_values: Vec<f64>,
    energy_tol: Option<f64>,
}

pub fn compute_pod(s: &SnapshotMatrix, criterion: PodCriterion) -> Result<PodBasis> {
    let (nh, q) = (s.n_h(), s.n_snapshots());
    if q == 0 {
        return Err(Error::structure("empty snapshot matrix"));
    }
    let (u, sigma) = if nh >= q {
        let svd = sorted_svd(s.data())?;
        (svd.u, svd.singular_values)
    } else {
        let gram = s.data() * s.data().transpose();
        let eig = gram.symmetric_eigen();
        let mut order: Vec<usize> = (0..nh).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut u = DMatrix::zeros(nh, nh);
        for (dst, &src) in order.iter().enumerate() {
            u.set_column(dst, &eig.eigenvectors.column(src));
        }
        let sigma = order
            .iter()
            .map(|&i| eig.eigenvalues[i].max(0.0).sqrt())
            .collect();
        (u, sigma)
    };
    if sigma.first().map_or(true, |&s0| s0 == 0.0) {
        return Err(Error::domain("snapshot matrix is identically zero"));
    }
    let rank = numerical_rank(&sigma, (nh, q));
    let (p, energy_tol) = match criterion {
        PodCriterion::Fixed(p) => (p.min(rank), None),
        PodCriterion::Energy(tol) => {
            if !(tol > 0.0 && tol < 1.0) {
                return Err(Error::domain(format!("energy tolerance {tol} not in (0, 1)")));
            }
            (energy_rank(&sigma, tol).min(rank.max(1)), Some(tol))
        }
    };
    let mut modes = u.columns(0, p).into_owned();
    for mut c in modes.column_iter_mut() {
        fix_sign(c.as_mut_slice());
    }
    Ok(PodBasis {
        modes,
        singular_values: sigma,
        energy_tol,
    })
}

impl PodBasis {
    /// Rebuilds a basis from stored modes and spectrum.
    pub fn from_parts(
        modes: DMatrix<f64>,
        singular_values: Vec<f64>,
        energy_tol: Option<f64>,
    ) -> Result<Self> {
        if modes.ncols() > singular_values.len() {
            return Err(Error::structure(format!(
                "{} modes but only {} singular values",
                modes.ncols(),
                singular_values.len()
            )));
        }
        if singular_values.windows(2).any(|w| w[0] < w[1]) || singular_values.iter().any(|s| *s < 0.0) {
            return Err(Error::domain("singular values must be non-increasing and nonnegative"));
        }
        Ok(PodBasis {
            modes,
            singular_values,
            energy_tol,
        })
    }

    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn energy_tol(&self) -> Option<f64> {
        self.energy_tol
    }

    pub fn p(&self) -> usize {
        self.modes.ncols()
    }

    pub fn n_h(&self) -> usize {
        self.modes.nrows()
    }

    /// Basis restricted to its first `p` modes.
    pub fn truncated(&self, p: usize) -> Result<PodBasis> {
        if p > self.p() {
            return Err(Error::structure(format!(
                "cannot truncate {} modes to {p}",
                self.p()
            )));
        }
        Ok(PodBasis {
            modes: self.modes.columns(0, p).into_owned(),
            singular_values: self.singular_values.clone(),
            energy_tol: None,
        })
    }

    /// `sqrt(sum_{k>p} sigma_k^2)`.
    pub fn tail_energy(&self) -> f64 {
        self.singular_values
            .iter()
            .skip(self.p())
            .map(|s| s * s)
            .sum::<f64>()
            .sqrt()
    }

    /// `a = U_pᵀ u`.
    pub fn project(&self, u: &[f64]) -> Result<DVector<f64>> {
        if u.len() != self.n_h() {
            return Err(Error::structure(format!(
                "state has {} entries, basis expects {}",
                u.len(),
                self.n_h()
            )));
        }
        Ok(DVector::from_iterator(
            self.p(),
            self.modes
                .column_iter()
                .map(|c| c.iter().zip(u).map(|(a, b)| a * b).sum()),
        ))
    }

    /// `U_p a`.
    pub fn reconstruct(&self, a: &DVector<f64>) -> Result<DVector<f64>> {
        if a.len() != self.p() {
            return Err(Error::structure(format!(
                "{} coefficients for {} modes",
                a.len(),
                self.p()
            )));
        }
        Ok(&self.modes * a)
    }

    /// `||S - U_p U_pᵀ S||_F`.
    pub fn snapshot_reconstruction_error(&self, s: &SnapshotMatrix) -> Result<f64> {
        if s.n_h() != self.n_h() {
            return Err(Error::structure(format!(
                "snapshots have {} rows, basis has {}",
                s.n_h(),
                self.n_h()
            )));
        }
        let coeffs = self.modes.transpose() * s.data();
        Ok((s.data() - &self.modes * coeffs).norm())
    }

    /// Writes `index,singular_value` rows (1-based index).
    pub fn write_spectrum_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,singular_value")?;
        for (i, s) in self.singular_values.iter().enumerate() {
            writeln!(w, "{},{s:e}", i + 1)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn snapshots(m: DMatrix<f64>) -> SnapshotMatrix {
        let q = m.ncols();
        SnapshotMatrix::new(m, (0..q).map(|i| (i, 0)).collect()).unwrap()
    }

    #[test]
    fn snapshot_matrix_layout() {
        let times = vec![0.0, 1.0, 2.0];
        let t0 = Trajectory::new(times.clone(), DMatrix::from_fn(2, 3, |i, k| (i + 10 * k) as f64)).unwrap();
        let t1 = Trajectory::new(times, DMatrix::from_fn(2, 3, |i, k| (100 + i + 10 * k) as f64)).unwrap();
        let s = build_snapshot_matrix(&[t0.clone(), t1], &[1, 2]).unwrap();
        assert_eq!(s.n_snapshots(), 4);
        assert_eq!(s.provenance(), &[(1, 0), (2, 0), (1, 1), (2, 1)]);
        assert_eq!(s.data()[(1, 2)], 111.0);

        let single = build_snapshot_matrix(&[t0.clone()], &[2]).unwrap();
        assert_eq!(single.data().column(0), t0.values().column(2));
        assert!(build_snapshot_matrix(&[], &[0]).is_err());
    }

    #[test]
    fn mismatched_trajectories_are_rejected() {
        let a = Trajectory::new(vec![0.0], DMatrix::zeros(3, 1)).unwrap();
        let b = Trajectory::new(vec![0.0], DMatrix::zeros(4, 1)).unwrap();
        assert!(matches!(build_snapshot_matrix(&[a, b], &[0]), Err(Error::Structure(_))));
    }

    #[test]
    fn rank_one_is_captured_exactly() {
        let u = DVector::from_fn(8, |i, _| (i as f64 + 1.0).sqrt());
        let v = DVector::from_fn(5, |j, _| (j as f64) - 1.5);
        let s = snapshots(&u * v.transpose());
        let b = compute_pod(&s, PodCriterion::Energy(0.9)).unwrap();
        assert_eq!(b.p(), 1);
        assert!(b.snapshot_reconstruction_error(&s).unwrap() < 1e-12 * s.data().norm());
    }

    #[test]
    fn zero_snapshots_have_no_basis() {
        assert!(compute_pod(&snapshots(DMatrix::zeros(4, 3)), PodCriterion::Fixed(1)).is_err());
    }

    #[test]
    fn full_rank_reconstruction() {
        let s = snapshots(random_matrix(10, 10, 1));
        let b = compute_pod(&s, PodCriterion::Fixed(10)).unwrap();
        assert!(b.snapshot_reconstruction_error(&s).unwrap() <= 1e-10 * s.data().norm());
    }

    #[test]
    fn projection_examples() {
        let s = snapshots(random_matrix(12, 30, 2));
        let b = compute_pod(&s, PodCriterion::Fixed(4)).unwrap();
        for k in 0..4 {
            let a = b.project(b.modes().column(k).as_slice()).unwrap();
            for (i, v) in a.iter().enumerate() {
                assert_relative_eq!(*v, if i == k { 1.0 } else { 0.0 }, epsilon = 1e-12);
            }
        }
        // orthogonal complement
        let full = compute_pod(&s, PodCriterion::Fixed(12)).unwrap();
        let w = full.modes().column(7).into_owned();
        assert!(b.project(w.as_slice()).unwrap().amax() < 1e-12);

        let zero = b.reconstruct(&DVector::zeros(4)).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
        let mut e1 = DVector::zeros(4);
        e1[0] = 1.0;
        assert_eq!(b.reconstruct(&e1).unwrap(), b.modes().column(0).into_owned());
        assert!(b.project(&[1.0; 3]).is_err());
        assert!(b.reconstruct(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn per_column_error_bounded_by_tail() {
        let s = snapshots(random_matrix(20, 15, 3));
        let b = compute_pod(&s, PodCriterion::Fixed(5)).unwrap();
        let tail = b.tail_energy();
        for c in s.data().column_iter() {
            let a = b.project(c.as_slice()).unwrap();
            let r = c - b.reconstruct(&a).unwrap();
            assert!(r.norm() <= tail * (1.0 + 1e-10));
        }
    }

    #[test]
    fn error_at_extremes() {
        let s = snapshots(random_matrix(6, 3, 4));
        let all = compute_pod(&s, PodCriterion::Fixed(3)).unwrap();
        assert!(all.snapshot_reconstruction_error(&s).unwrap() < 1e-12);
        let none = compute_pod(&s, PodCriterion::Fixed(0)).unwrap();
        assert_relative_eq!(none.snapshot_reconstruction_error(&s).unwrap(), s.data().norm(), max_relative = 1e-14);
    }

    #[test]
    fn gram_path_matches_direct_svd() {
        // Q > n_h goes through the Gram matrix
        let m = random_matrix(9, 40, 5);
        let via_gram = compute_pod(&snapshots(m.clone()), PodCriterion::Fixed(9)).unwrap();
        let direct = sorted_svd(&m).unwrap();
        for (a, b) in via_gram.singular_values().iter().zip(&direct.singular_values) {
            assert_relative_eq!(a, b, max_relative = 1e-10);
        }
    }

    #[test]
    fn sign_convention_holds() {
        let s = snapshots(random_matrix(15, 8, 6));
        let b = compute_pod(&s, PodCriterion::Fixed(8)).unwrap();
        for c in b.modes().column_iter() {
            let imax = c.iamax();
            assert!(c[imax] > 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn pod_identities(rows in 3usize..14, cols in 2usize..30, seed in 0u64..1000, frac in 0.0f64..1.0) {
            let s = snapshots(random_matrix(rows, cols, seed));
            let full = compute_pod(&s, PodCriterion::Fixed(rows.min(cols))).unwrap();
            // orthonormality
            let gram = full.modes().transpose() * full.modes();
            let eye = DMatrix::<f64>::identity(full.p(), full.p());
            prop_assert!((gram - eye).amax() <= 1e-10);
            // spectrum ordering
            prop_assert!(full.singular_values().windows(2).all(|w| w[0] >= w[1] && w[1] >= 0.0));
            // optimality identity and monotonicity in p
            let mut last = f64::INFINITY;
            for p in 0..=full.p() {
                let b = full.truncated(p).unwrap();
                let err = b.snapshot_reconstruction_error(&s).unwrap();
                let tail = b.tail_energy();
                prop_assert!((err * err - tail * tail).abs() <= 1e-8 * s.data().norm_squared());
                prop_assert!(err <= last * (1.0 + 1e-12) + 1e-14);
                last = err;
            }
            // energy criterion minimality
            let tol = 0.5 + 0.49 * frac;
            let b = compute_pod(&s, PodCriterion::Energy(tol)).unwrap();
            let sig = b.singular_values();
            let total: f64 = sig.iter().map(|v| v * v).sum();
            let captured = |p: usize| sig[..p].iter().map(|v| v * v).sum::<f64>() / total;
            prop_assert!(captured(b.p()) > tol);
            prop_assert!(b.p() == 0 || captured(b.p() - 1) <= tol);
        }
    }
}
