use std::io::Write;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::config::NoiseLevelMode;
use super::problem::FullForward;
use crate::eki::{ForwardMap, InversionResult, NoiseCovariance};
use crate::error::{Error, Result};

/// Noisy observations of a known truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub truth: DVector<f64>,
    pub y_clean: DVector<f64>,
    pub y_obs: DVector<f64>,
    /// Realized noise `xi = y_obs - y_clean`.
    pub noise: DVector<f64>,
    /// Relative level `delta`.
    pub delta: f64,
    /// `sigma = delta * max |y_clean|` (zero when `delta = 0`).
    pub noise_std: f64,
    /// `||Gamma^{-1/2} xi||` (zero when `delta = 0`).
    pub noise_level: f64,
}

impl SyntheticData {
    /// `sigma^2 I`. Fails for noise-free data.
    pub fn covariance(&self) -> Result<NoiseCovariance> {
        NoiseCovariance::isotropic(self.noise_std, self.y_obs.len())
    }

    /// Right-hand side of the discrepancy principle.
    pub fn stop_level(&self, mode: NoiseLevelMode) -> f64 {
        match mode {
            NoiseLevelMode::Truth => self.noise_level,
            NoiseLevelMode::SqrtM => (self.y_obs.len() as f64).sqrt(),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,y_clean,noise,y_obs")?;
        for i in 0..self.y_obs.len() {
            writeln!(w, "{i},{:e},{:e},{:e}", self.y_clean[i], self.noise[i], self.y_obs[i])?;
        }
        Ok(())
    }
}

/// Standard-normal draw of length `m`, shared by all noise levels of a run
/// so the realizations differ only in scale.
pub fn draw_standard_noise<R: Rng + ?Sized>(m: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(m, |_, _| rng.sample(StandardNormal))
}

/// Adds `xi = sigma z` with `sigma = delta * max |y_clean|`.
pub fn add_noise(truth: DVector<f64>, y_clean: DVector<f64>, delta: f64, z: &DVector<f64>) -> Result<SyntheticData> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::domain(format!("noise level must be nonnegative, got {delta}")));
    }
    if z.len() != y_clean.len() {
        return Err(Error::structure("noise draw and observations differ in length"));
    }
    let noise_std = delta * y_clean.amax();
    let noise = z * noise_std;
    Ok(SyntheticData {
        y_obs: &y_clean + &noise,
        noise_level: if noise_std > 0.0 { z.norm() } else { 0.0 },
        truth,
        y_clean,
        noise,
        delta,
        noise_std,
    })
}

/// Solves the data-generating (fine) model at the truth and adds noise.
pub fn generate_synthetic_data(
    fine: &FullForward,
    truth: &[f64],
    delta: f64,
    z: &DVector<f64>,
) -> Result<SyntheticData> {
    let y_clean = fine.evaluate(truth)?.value;
    add_noise(DVector::from_column_slice(truth), y_clean, delta, z)
}

/// `||theta_bar - theta_true|| / ||theta_true||`.
pub fn relative_error(theta_bar: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
    let n = truth.norm();
    if n == 0.0 {
        return Err(Error::domain("relative error undefined for a zero truth"));
    }
    Ok((theta_bar - truth).norm() / n)
}

/// Per-iteration `e_theta` and `E_theta` of a run, the misfit evaluated
/// with a reference model (the coarse full-order model) at each mean.
/// The values are also stored in the run's records.
pub fn compute_metrics<F: ForwardMap + ?Sized>(
    result: &mut InversionResult,
    truth: &DVector<f64>,
    reference: &F,
    y_obs: &DVector<f64>,
    noise: &NoiseCovariance,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let errors = result
        .records
        .iter()
        .map(|r| relative_error(&r.theta_mean, truth))
        .collect::<Result<Vec<_>>>()?;
    let misfits = result
        .records
        .par_iter()
        .map(|r| {
            let w = reference.evaluate(r.theta_mean.as_slice())?.value;
            Ok(noise.whitened_norm(&(y_obs - w)))
        })
        .collect::<Result<Vec<_>>>()?;
    for ((r, e), m) in result.records.iter_mut().zip(&errors).zip(&misfits) {
        r.rel_error = Some(*e);
        r.reference_misfit = Some(*m);
    }
    Ok((errors, misfits))
}

/// Pearson correlation of two equally long samples.
pub fn correlation(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::structure("correlation needs two samples of equal length >= 2"));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::domain("correlation undefined for a constant sample"));
    }
    Ok(sab / (saa * sbb).sqrt())
}
