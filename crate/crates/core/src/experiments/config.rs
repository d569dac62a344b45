use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dsrbf::KernelKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    /// Source location `(theta1, theta2)` with known order.
    Source2d,
    /// Source location and fractional order `(theta1, theta2, alpha)`.
    Source2dAlpha,
    /// KL coefficients of the log-diffusivity.
    DiffusivityKl,
}

impl ProblemKind {
    pub fn tag(self) -> &'static str {
        match self {
            ProblemKind::Source2d => "source2d",
            ProblemKind::Source2dAlpha => "source2d-alpha",
            ProblemKind::DiffusivityKl => "diffusivity-kl",
        }
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source2d" => Ok(ProblemKind::Source2d),
            "source2d-alpha" => Ok(ProblemKind::Source2dAlpha),
            "diffusivity-kl" => Ok(ProblemKind::DiffusivityKl),
            other => Err(Error::parse(format!("unknown problem '{other}'"))),
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Noise level used on the right-hand side of the discrepancy principle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseLevelMode {
    /// Realized `||Gamma^{-1/2} xi||`.
    Truth,
    /// `sqrt(m)`, its expectation proxy.
    SqrtM,
}

impl FromStr for NoiseLevelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truth" => Ok(NoiseLevelMode::Truth),
            "sqrt-m" => Ok(NoiseLevelMode::SqrtM),
            other => Err(Error::parse(format!("unknown noise level mode '{other}'"))),
        }
    }
}

/// Every setting of an experiment run. Loaded from a flat TOML file; keys
/// not given take the defaults of the selected problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub seed: u64,
    pub output_dir: PathBuf,

    pub t_final: f64,
    /// Nodes per axis of the inversion grid.
    pub coarse_n: usize,
    pub coarse_steps: usize,
    /// Nodes per axis of the data-generating grid.
    pub fine_n: usize,
    pub fine_steps: usize,
    /// Fractional order when it is not inferred.
    pub alpha: f64,
    /// Bounds applied to an inferred order before solving.
    pub alpha_clamp: [f64; 2],

    pub sensors_per_axis: usize,
    pub sensor_margin: f64,
    pub sensor_times: Vec<f64>,
    /// Relative noise levels `delta`; `sigma = delta * max |y|`.
    pub noise_levels: Vec<f64>,
    pub noise_level_mode: NoiseLevelMode,
    /// Truth; drawn from the prior when absent.
    pub truth: Option<Vec<f64>>,

    pub n_e: usize,
    pub rho: f64,
    pub tau: f64,
    pub gamma0: f64,
    pub max_iters: usize,
    pub direct_eki: bool,
    /// Keep iterating past the discrepancy stop (to twice its iteration).
    pub run_past_stop: bool,

    /// Training parameters (also the snapshot parameters).
    pub n_train: usize,
    /// Every `train_time_stride`-th coarse step forms the training times.
    pub train_time_stride: usize,
    pub pod_energy: f64,
    /// Fixed basis size; overrides `pod_energy`.
    pub pod_modes: Option<usize>,
    pub mode_energy: f64,
    /// Fixed number of mode pairs per coefficient; overrides `mode_energy`.
    pub mode_count: Option<usize>,
    pub kernel: KernelKind,
    pub n_rv: usize,
    pub n_obs: usize,
    pub shape_lo: f64,
    pub shape_hi: f64,

    pub kl_variance: f64,
    pub kl_length: f64,
    pub kl_modes: usize,

    pub n_validation: usize,
    pub validation_p: Vec<usize>,
    pub validation_n: Vec<usize>,
    /// Iterations of the equal-length timing runs (0 disables them).
    pub timing_iters: usize,
}

impl ExperimentConfig {
    pub fn defaults(problem: ProblemKind) -> Self {
        let base = ExperimentConfig {
            problem,
            seed: 2024,
            output_dir: PathBuf::from("results"),
            t_final: 1.0,
            coarse_n: 21,
            coarse_steps: 100,
            fine_n: 41,
            fine_steps: 200,
            alpha: 0.5,
            alpha_clamp: [0.01, 0.99],
            sensors_per_axis: 3,
            sensor_margin: 0.25,
            sensor_times: vec![0.25, 0.75, 1.0],
            noise_levels: vec![0.01, 0.03, 0.05],
            noise_level_mode: NoiseLevelMode::Truth,
            truth: Some(vec![0.2, 0.7]),
            n_e: 100,
            rho: 0.7,
            tau: 1.0 / 0.7,
            gamma0: 1.0,
            max_iters: 200,
            direct_eki: false,
            run_past_stop: false,
            n_train: 100,
            train_time_stride: 2,
            pod_energy: 0.9999,
            pod_modes: None,
            mode_energy: 0.9999,
            mode_count: None,
            kernel: KernelKind::Multiquadric,
            n_rv: 15,
            n_obs: 10,
            shape_lo: 0.1,
            shape_hi: 30.0,
            kl_variance: 1.0,
            kl_length: 0.2,
            kl_modes: 9,
            n_validation: 400,
            validation_p: vec![2, 4, 6, 8, 10],
            validation_n: vec![50, 100, 200],
            timing_iters: 10,
        };
        match problem {
            ProblemKind::Source2d => base,
            ProblemKind::Source2dAlpha => ExperimentConfig {
                truth: Some(vec![0.25, 0.75, 0.8]),
                sensors_per_axis: 5,
                sensor_margin: 0.1,
                noise_levels: vec![0.05],
                n_train: 200,
                pod_modes: Some(10),
                mode_count: Some(10),
                timing_iters: 0,
                ..base
            },
            ProblemKind::DiffusivityKl => ExperimentConfig {
                truth: None,
                sensors_per_axis: 7,
                sensor_margin: 0.05,
                n_e: 200,
                n_train: 500,
                timing_iters: 0,
                ..base
            },
        }
    }

    /// Parses TOML text; `problem` selects the defaults (source2d if absent).
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::parse(format!("config: {e}")))?;
        let problem = match user.get("problem") {
            Some(v) => v
                .as_str()
                .ok_or_else(|| Error::parse("config: 'problem' must be a string"))?
                .parse()?,
            None => ProblemKind::Source2d,
        };
        let mut merged = toml::Table::try_from(ExperimentConfig::defaults(problem))
            .map_err(|e| Error::parse(format!("config: {e}")))?;
        // a user `truth` replaces the default; absent optional keys keep it
        for (k, v) in user {
            merged.insert(k, v);
        }
        let cfg: ExperimentConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::parse(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn param_dim(&self) -> usize {
        match self.problem {
            ProblemKind::Source2d => 2,
            ProblemKind::Source2dAlpha => 3,
            ProblemKind::DiffusivityKl => self.kl_modes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::domain(format!("config: {msg}")));
        if !(self.t_final > 0.0) {
            return bad(format!("t_final must be positive, got {}", self.t_final));
        }
        if self.coarse_n < 3 || self.fine_n < 3 || self.coarse_steps == 0 || self.fine_steps == 0 {
            return bad("grids need at least 3 nodes per axis and one step".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        let [lo, hi] = self.alpha_clamp;
        if !(lo > 0.0 && lo < hi && hi < 1.0) {
            return bad(format!("alpha_clamp must satisfy 0 < lo < hi < 1, got {lo}, {hi}"));
        }
        if self.sensors_per_axis == 0 || !(0.0..0.5).contains(&self.sensor_margin) {
            return bad("need at least one sensor per axis and a margin in [0, 0.5)".into());
        }
        if self.sensor_times.is_empty() || self.sensor_times.iter().any(|&t| !(t > 0.0 && t <= self.t_final)) {
            return bad("sensor times must lie in (0, t_final]".into());
        }
        if self.noise_levels.is_empty() || self.noise_levels.iter().any(|&d| !(d > 0.0)) {
            return bad("noise levels must be positive".into());
        }
        if let Some(t) = &self.truth {
            if t.len() != self.param_dim() {
                return bad(format!("truth has {} entries, problem needs {}", t.len(), self.param_dim()));
            }
        }
        if self.n_e < 2 || !(self.rho > 0.0 && self.rho < 1.0) || self.tau * self.rho < 1.0 - 1e-12 {
            return bad("need n_e >= 2, 0 < rho < 1 and tau >= 1/rho".into());
        }
        if self.n_train < 3 || self.train_time_stride == 0 {
            return bad("need n_train >= 3 and a positive train_time_stride".into());
        }
        if !(self.pod_energy > 0.0 && self.pod_energy < 1.0) || !(self.mode_energy > 0.0 && self.mode_energy < 1.0) {
            return bad("energy tolerances must lie in (0, 1)".into());
        }
        if self.n_rv == 0 || self.n_obs == 0 || !(self.shape_lo > 0.0 && self.shape_lo < self.shape_hi) {
            return bad("need n_rv, n_obs >= 1 and 0 < shape_lo < shape_hi".into());
        }
        if !(self.kl_variance > 0.0 && self.kl_length > 0.0) || self.kl_modes == 0 {
            return bad("KL variance, length and mode count must be positive".into());
        }
        if self.n_validation == 0 {
            return bad("n_validation must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_example1_defaults() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c, ExperimentConfig::defaults(ProblemKind::Source2d));
        assert_eq!((c.n_e, c.n_rv, c.n_obs), (100, 15, 10));
        assert_eq!(c.truth, Some(vec![0.2, 0.7]));
    }

    #[test]
    fn problem_selects_defaults_and_keys_override() {
        let c = ExperimentConfig::from_toml("problem = \"diffusivity-kl\"\nn_e = 50\nkernel = \"gaussian\"").unwrap();
        assert_eq!(c.n_e, 50);
        assert_eq!(c.n_train, 500);
        assert_eq!(c.kernel, KernelKind::Gaussian);
        assert_eq!(c.truth, None);
        let a = ExperimentConfig::from_toml("problem = \"source2d-alpha\"").unwrap();
        assert_eq!(a.truth, Some(vec![0.25, 0.75, 0.8]));
        assert_eq!(a.sensors_per_axis * a.sensors_per_axis * a.sensor_times.len(), 75);
    }

    #[test]
    fn round_trip_and_rejections() {
        let c = ExperimentConfig::defaults(ProblemKind::Source2dAlpha);
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert!(ExperimentConfig::from_toml("typo_key = 1").is_err());
        assert!(ExperimentConfig::from_toml("alpha = 1.0").is_err());
        assert!(ExperimentConfig::from_toml("noise_levels = [0.0]").is_err());
        assert!(ExperimentConfig::from_toml("truth = [0.1]").is_err());
        assert!(ExperimentConfig::from_toml("problem = \"heat\"").is_err());
    }
}
