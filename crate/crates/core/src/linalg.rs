//! Small dense/banded linear-algebra helpers shared by the solver, POD and
//! RBF code. Dense factorizations come from `nalgebra`; the banded LU used
//! by the time stepper and the scalar minimizer live here.

use nalgebra::{DMatrix, DVector, LU};

use crate::error::{Error, Result};

/// LU factorization of a square banded matrix without pivoting.
///
/// Intended for strictly diagonally dominant systems (the implicit
/// fractional time-step matrix), where elimination without pivoting is
/// stable and preserves the band.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    bw: usize,
    // row i holds columns i-bw ..= i+bw
    band: Vec<f64>,
}

impl BandedLu {
    /// Starts an all-zero band matrix of order `n` and half-bandwidth `bw`.
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandedLu {
            n,
            bw,
            band: vec![0.0; n * (2 * bw + 1)],
        }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.bw >= i && j <= i + self.bw);
        i * (2 * self.bw + 1) + (j + self.bw - i)
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.band[s] += v;
    }

    pub fn order(&self) -> usize {
        self.n
    }

    /// Factors in place. Fails on a (numerically) zero pivot, reporting its row.
    pub fn factor(mut self) -> Result<Self> {
        let (n, bw) = (self.n, self.bw);
        let width = 2 * bw + 1;
        for k in 0..n {
            let piv = self.band[self.slot(k, k)];
            if !piv.is_finite() || piv.abs() < 1e-300 {
                return Err(Error::numerical(format!("zero pivot in row {k}")));
            }
            let last = (k + bw).min(n - 1);
            for i in k + 1..=last {
                let sik = self.slot(i, k);
                let l = self.band[sik] / piv;
                self.band[sik] = l;
                if l == 0.0 {
                    continue;
                }
                let (row_k, row_i) = (k * width, i * width);
                for j in k + 1..=last {
                    let kj = row_k + (j + bw - k);
                    let ij = row_i + (j + bw - i);
                    self.band[ij] -= l * self.band[kj];
                }
            }
        }
        Ok(self)
    }

    /// Solves `A x = b` in place using the stored factors.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        let width = 2 * bw + 1;
        for i in 0..n {
            let row = i * width;
            let mut s = x[i];
            for j in i.saturating_sub(bw)..i {
                s -= self.band[row + (j + bw - i)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let row = i * width;
            let mut s = x[i];
            for j in i + 1..=(i + bw).min(n - 1) {
                s -= self.band[row + (j + bw - i)] * x[j];
            }
            x[i] = s / self.band[row + bw];
        }
    }
}

/// Bounded golden-section minimization of a scalar function on `[lo, hi]`.
///
/// Stops when the bracket is narrower than `tol`. Returns the best abscissa
/// seen and its value. Any non-finite objective value aborts the search.
pub fn golden_section<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(lo < hi) {
        return Err(Error::domain(format!("empty bracket [{lo}, {hi}]")));
    }
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut eval = |x: f64| -> Result<f64> {
        let v = f(x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::numerical(format!("non-finite objective at {x}")))
        }
    };
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    while (b - a) > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d)?;
        }
    }
    Ok(if fc <= fd { (c, fc) } else { (d, fd) })
}

/// Smallest `p` with `sum_{i<=p} s_i^2 / sum_i s_i^2 > tol`.
///
/// Returns 0 when every value is zero.
pub fn energy_rank(singular_values: &[f64], tol: f64) -> usize {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 0;
    }
    let mut acc = 0.0;
    for (i, s) in singular_values.iter().enumerate() {
        acc += s * s;
        if acc / total > tol {
            return i + 1;
        }
    }
    singular_values.len()
}

/// Numerical rank of a non-increasing spectrum.
pub fn numerical_rank(singular_values: &[f64], dims: (usize, usize)) -> usize {
    let smax = singular_values.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return 0;
    }
    let cut = smax * (dims.0.max(dims.1) as f64) * f64::EPSILON;
    singular_values.iter().take_while(|&&s| s > cut).count()
}

/// Flips `col` so that its entry of largest magnitude is positive.
/// Returns `true` when a flip happened.
pub fn fix_sign(col: &mut [f64]) -> bool {
    let mut best = 0usize;
    for (i, v) in col.iter().enumerate() {
        if v.abs() > col[best].abs() {
            best = i;
        }
    }
    if col.get(best).is_some_and(|&v| v < 0.0) {
        col.iter_mut().for_each(|v| *v = -*v);
        true
    } else {
        false
    }
}

/// Thin SVD with singular values sorted in non-increasing order.
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v: DMatrix<f64>,
}

pub fn sorted_svd(m: &DMatrix<f64>) -> Result<SortedSvd> {
    let svd = m.clone().svd(true, true);
    let u = svd
        .u
        .ok_or_else(|| Error::numerical("SVD did not produce left vectors"))?;
    let vt = svd
        .v_t
        .ok_or_else(|| Error::numerical("SVD did not produce right vectors"))?;
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let mut su = DMatrix::zeros(u.nrows(), order.len());
    let mut sv = DMatrix::zeros(vt.ncols(), order.len());
    for (dst, &src) in order.iter().enumerate() {
        su.set_column(dst, &u.column(src));
        sv.set_column(dst, &vt.row(src).transpose());
    }
    Ok(SortedSvd {
        u: su,
        singular_values: order.iter().map(|&i| s[i]).collect(),
        v: sv,
    })
}

/// Solves `V x = b` in the least-squares sense with singular values below
/// `rtol * sigma_max` discarded, i.e. returns `V^+ b`.
pub fn pinv_solve(v: &DMatrix<f64>, b: &DMatrix<f64>, rtol: f64) -> Result<DMatrix<f64>> {
    let svd = v.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = (rtol * smax).max(f64::MIN_POSITIVE);
    svd.solve(b, eps).map_err(|e| Error::numerical(e.to_string()))
}

pub fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Hager's estimate of `||A^{-1}||_1` from an existing LU factorization.
pub fn inverse_norm1_estimate(lu: &LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> Result<f64> {
    let n = lu.l().nrows();
    let l = lu.l();
    let u = lu.u();
    let p = lu.p();
    let solve = |b: &DVector<f64>| -> Result<DVector<f64>> {
        lu.solve(b)
            .ok_or_else(|| Error::numerical("singular LU factor"))
    };
    let solve_t = |b: &DVector<f64>| -> Result<DVector<f64>> {
        let z = u
            .tr_solve_upper_triangular(b)
            .ok_or_else(|| Error::numerical("singular LU factor"))?;
        let mut w = l
            .tr_solve_lower_triangular(&z)
            .ok_or_else(|| Error::numerical("singular LU factor"))?;
        p.inv_permute_rows(&mut w);
        Ok(w)
    };
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut est = 0.0;
    let mut last_j = usize::MAX;
    for _ in 0..5 {
        let y = solve(&x)?;
        est = y.iter().map(|v| v.abs()).sum::<f64>();
        if !est.is_finite() {
            return Ok(f64::INFINITY);
        }
        let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let z = solve_t(&xi)?;
        let (j, zmax) = z
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v.abs()))
            .fold((0, 0.0), |acc, it| if it.1 > acc.1 { it } else { acc });
        if zmax <= z.dot(&x) || j == last_j {
            break;
        }
        last_j = j;
        x.fill(0.0);
        x[j] = 1.0;
    }
    // Higham's alternating-sign lower bound guards against the rare case where
    // the power-style iteration stalls on a poor vertex.
    let alt = DVector::from_fn(n, |i, _| {
        let s = if i % 2 == 0 { 1.0 } else { -1.0 };
        s * (1.0 + i as f64 / (n.max(2) - 1) as f64)
    });
    let ya = solve(&alt)?;
    let alt_est = 2.0 * ya.iter().map(|v| v.abs()).sum::<f64>() / (3.0 * n as f64);
    Ok(est.max(alt_est))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn banded_lu_matches_dense_solve() {
        let n = 12;
        let bw = 3;
        let mut band = BandedLu::zeros(n, bw);
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(bw)..=(i + bw).min(n - 1) {
                let v = if i == j {
                    10.0 + i as f64
                } else {
                    ((i * 7 + j * 3) % 5) as f64 * 0.3 - 0.6
                };
                band.add(i, j, v);
                dense[(i, j)] = v;
            }
        }
        let b = DVector::from_fn(n, |i, _| (i as f64).sin());
        let lu = band.factor().unwrap();
        let mut x = b.as_slice().to_vec();
        lu.solve_in_place(&mut x);
        let expect = dense.lu().solve(&b).unwrap();
        for i in 0..n {
            assert_relative_eq!(x[i], expect[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let (x, fx) = golden_section(|x| Ok((x - 1.3).powi(2) + 2.0), -4.0, 5.0, 1e-9).unwrap();
        assert_relative_eq!(x, 1.3, epsilon = 1e-6);
        assert_relative_eq!(fx, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn golden_section_rejects_non_finite() {
        assert!(golden_section(|_| Ok(f64::NAN), 0.0, 1.0, 1e-3).is_err());
    }

    #[test]
    fn energy_rank_is_minimal() {
        let s = [3.0, 2.0, 1.0, 0.0];
        // energies 9, 4, 1 of total 14
        assert_eq!(energy_rank(&s, 0.5), 1);
        assert_eq!(energy_rank(&s, 9.0 / 14.0), 2);
        assert_eq!(energy_rank(&s, 0.9), 2);
        assert_eq!(energy_rank(&s, 0.95), 3);
        assert_eq!(energy_rank(&[0.0, 0.0], 0.9), 0);
    }

    #[test]
    fn sign_convention() {
        let mut c = vec![0.1, -0.9, 0.3];
        assert!(fix_sign(&mut c));
        assert_eq!(c, vec![-0.1, 0.9, -0.3]);
        assert!(!fix_sign(&mut c));
    }

    #[test]
    fn hager_estimate_is_close_to_exact() {
        let n = 30;
        let a = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                2.0
            } else {
                1.0 / (1.0 + (i as f64 - j as f64).abs())
            }
        });
        let exact = norm1(&a.clone().try_inverse().unwrap());
        let est = inverse_norm1_estimate(&a.lu()).unwrap();
        assert!(est <= exact * (1.0 + 1e-12));
        assert!(est >= exact / 3.0, "est {est} exact {exact}");
    }

    #[test]
    fn sorted_svd_is_ordered() {
        let m = DMatrix::from_fn(6, 4, |i, j| ((i + 2 * j) as f64).cos());
        let s = sorted_svd(&m).unwrap();
        for w in s.singular_values.windows(2) {
            assert!(w[0] >= w[1]);
        }
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(s.singular_values.clone()));
        let back = &s.u * sigma * s.v.transpose();
        assert!((back - m).norm() < 1e-12);
    }
}
