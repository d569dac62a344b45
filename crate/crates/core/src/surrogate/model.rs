use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::tensor::{tensor_decompose, CoefficientTensor, ModeTruncation};
use crate::dsrbf::{
    build_shape_distribution, fit, fit_with_shapes, select_rippa_shape, DsrbfModel, KernelKind,
    ShapeBounds, TrainingSet,
};
use crate::eki::{Evaluation, ForwardMap};
use crate::error::{Error, Result};
use crate::pod::PodBasis;
use crate::rng::SeedTree;
use crate::textio::{TextReader, TextWriter};
use crate::tfpde::ObservationSetup;

const FORMAT: &str = "rbeki-surrogate-v1";

/// How shape parameters of the mode models are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeStrategy {
    /// Per-center chi-squared shapes from stochastic LOOCV observations.
    Stochastic,
    /// One constant shape minimizing the exact (Rippa) LOOCV cost.
    RippaConstant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub kernel: KernelKind,
    pub n_rv: usize,
    pub n_obs: usize,
    pub bounds: ShapeBounds,
    pub truncation: ModeTruncation,
    pub strategy: ShapeStrategy,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            kernel: KernelKind::Multiquadric,
            n_rv: 15,
            n_obs: 10,
            bounds: ShapeBounds::default(),
            truncation: ModeTruncation::default(),
            strategy: ShapeStrategy::Stochastic,
        }
    }
}

/// One separable term `lambda * psi(t) * phi(theta)` of a coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeModel {
    pub lambda: f64,
    pub time: DsrbfModel,
    pub param: DsrbfModel,
}

#[derive(Debug, Clone, PartialEq)]
struct ObservedForm {
    setup: ObservationSetup,
    /// Rows of `U_p` at the sensor nodes (`m_x x p`).
    sensor_modes: DMatrix<f64>,
    /// `psi[k][l][j]`: time mode `(k, l)` at sensor time `j`.
    psi: Vec<Vec<Vec<f64>>>,
}

/// POD-DSRBF reduced model `u(t, theta) ~ U_p a(t, theta)` with
/// `a_k = sum_l lambda_l^k psi_l^k(t) phi_l^k(theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    basis: PodBasis,
    modes: Vec<Vec<ModeModel>>,
    time_range: (f64, f64),
    param_lo: Vec<f64>,
    param_hi: Vec<f64>,
    kernel: KernelKind,
    seed: u64,
    n_train: usize,
    observed: Option<ObservedForm>,
}

fn train_one(ts: &TrainingSet, opts: &TrainOptions, seeds: SeedTree) -> Result<DsrbfModel> {
    match opts.strategy {
        ShapeStrategy::Stochastic => {
            let n_rv = opts.n_rv.min(ts.len() - 1);
            let dist = build_shape_distribution(ts, opts.kernel, opts.n_obs, n_rv, opts.bounds, &seeds.named("shape"))?;
            fit(ts, opts.kernel, &dist, &mut seeds.named("fit").rng())
        }
        ShapeStrategy::RippaConstant => {
            let eps = select_rippa_shape(ts, opts.kernel, opts.bounds)?;
            fit_with_shapes(ts, opts.kernel, &vec![eps; ts.len()])
        }
    }
}

/// Offline stage: decomposes every coefficient slice and fits a time-mode
/// and a parameter-mode model for each retained pair. Pairs are trained in
/// parallel; pair `(k, l)` draws from `seeds.child(k).child(l)`.
pub fn train(
    tensor: &CoefficientTensor,
    basis: &PodBasis,
    opts: &TrainOptions,
    seeds: &SeedTree,
) -> Result<Surrogate> {
    let p = basis.p();
    if tensor.p() != p {
        return Err(Error::structure(format!(
            "tensor has {} coefficient slices, basis has {p} modes",
            tensor.p()
        )));
    }
    let decomps = tensor
        .slices()
        .iter()
        .map(|q| tensor_decompose(q, opts.truncation))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = decomps
        .iter()
        .enumerate()
        .flat_map(|(k, d)| (0..d.q().min(p.max(1))).map(move |l| (k, l)))
        .collect();
    let times = tensor.times();
    let params = tensor.params();
    let trained = jobs
        .par_iter()
        .map(|&(k, l)| {
            let d = &decomps[k];
            let node = seeds.child(k as u64).child(l as u64);
            let tag = |part: &'static str| {
                move |e: Error| Error::ModeFit {
                    k,
                    l,
                    part,
                    source: Box::new(e),
                }
            };
            let ts_time = TrainingSet::scalar(times, d.psi.column(l).as_slice()).map_err(tag("time"))?;
            let time = train_one(&ts_time, opts, node.named("time")).map_err(tag("time"))?;
            let ts_param = TrainingSet::new(params.clone(), DMatrix::from_column_slice(params.nrows(), 1, d.phi.column(l).as_slice()))
                .map_err(tag("param"))?;
            let param = train_one(&ts_param, opts, node.named("param")).map_err(tag("param"))?;
            Ok(ModeModel {
                lambda: d.lambda[l],
                time,
                param,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut modes: Vec<Vec<ModeModel>> = vec![Vec::new(); p];
    for ((k, _), m) in jobs.into_iter().zip(trained) {
        modes[k].push(m);
    }
    let param_lo = params.column_iter().map(|c| c.min()).collect();
    let param_hi = params.column_iter().map(|c| c.max()).collect();
    Ok(Surrogate {
        basis: basis.clone(),
        modes,
        time_range: (times[0], times[times.len() - 1]),
        param_lo,
        param_hi,
        kernel: opts.kernel,
        seed: seeds.seed(),
        n_train: params.nrows(),
        observed: None,
    })
}

impl Surrogate {
    pub fn basis(&self) -> &PodBasis {
        &self.basis
    }

    pub fn modes(&self) -> &[Vec<ModeModel>] {
        &self.modes
    }

    /// `q_k` for every coefficient.
    pub fn mode_counts(&self) -> Vec<usize> {
        self.modes.iter().map(Vec::len).collect()
    }

    /// Number of trained scalar models (two per mode pair).
    pub fn n_models(&self) -> usize {
        2 * self.modes.iter().map(Vec::len).sum::<usize>()
    }

    pub fn time_range(&self) -> (f64, f64) {
        self.time_range
    }

    pub fn param_box(&self) -> (&[f64], &[f64]) {
        (&self.param_lo, &self.param_hi)
    }

    pub fn param_dim(&self) -> usize {
        self.param_lo.len()
    }

    pub fn kernel(&self) -> KernelKind {
        self.kernel
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn observation(&self) -> Option<&ObservationSetup> {
        self.observed.as_ref().map(|o| &o.setup)
    }

    /// Copy with every `lambda` multiplied by `factor`.
    pub fn with_scaled_singular_values(&self, factor: f64) -> Surrogate {
        let mut s = self.clone();
        for m in s.modes.iter_mut().flatten() {
            m.lambda *= factor;
        }
        if let Some(o) = s.observed.take() {
            s = s.with_observation(&o.setup).expect("setup was valid before");
        }
        s
    }

    fn clamp_theta(&self, theta: &[f64]) -> Result<(Vec<f64>, bool)> {
        if theta.len() != self.param_dim() {
            return Err(Error::structure(format!(
                "parameter has {} components, surrogate expects {}",
                theta.len(),
                self.param_dim()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite parameter"));
        }
        let mut clamped = false;
        let out = theta
            .iter()
            .zip(self.param_lo.iter().zip(&self.param_hi))
            .map(|(&v, (&lo, &hi))| {
                let c = v.clamp(lo, hi);
                clamped |= c != v;
                c
            })
            .collect();
        Ok((out, clamped))
    }

    /// `a~(t, theta)`; `t` and `theta` are clamped to the training domain
    /// and the flag reports whether any clamping happened.
    pub fn eval_coefficients(&self, t: f64, theta: &[f64]) -> Result<(DVector<f64>, bool)> {
        let (th, mut clamped) = self.clamp_theta(theta)?;
        let tc = t.clamp(self.time_range.0, self.time_range.1);
        clamped |= tc != t;
        let mut a = DVector::zeros(self.basis.p());
        for (k, ms) in self.modes.iter().enumerate() {
            for m in ms {
                a[k] += m.lambda * m.time.predict_scalar(&[tc])? * m.param.predict_scalar(&th)?;
            }
        }
        Ok((a, clamped))
    }

    /// `u~_p = U_p a~(t, theta)`.
    pub fn reduced_solution(&self, t: f64, theta: &[f64]) -> Result<(DVector<f64>, bool)> {
        let (a, clamped) = self.eval_coefficients(t, theta)?;
        Ok((self.basis.reconstruct(&a)?, clamped))
    }

    /// Attaches sensors: precomputes the sensor rows of `U_p` and the time
    /// modes at the sensor times, which must lie in the training time range.
    pub fn with_observation(&self, setup: &ObservationSetup) -> Result<Surrogate> {
        if setup.grid().n_nodes() != self.basis.n_h() {
            return Err(Error::structure(format!(
                "sensor grid has {} nodes, basis has {}",
                setup.grid().n_nodes(),
                self.basis.n_h()
            )));
        }
        let (lo, hi) = self.time_range;
        if let Some(t) = setup.sensor_times().iter().find(|&&t| t < lo - 1e-12 || t > hi + 1e-12) {
            return Err(Error::domain(format!(
                "sensor time {t} outside the training range [{lo}, {hi}]"
            )));
        }
        let modes = self.basis.modes();
        let sensor_modes = DMatrix::from_fn(setup.n_sensors(), self.basis.p(), |i, k| {
            modes[(setup.sensor_nodes()[i], k)]
        });
        let psi = self
            .modes
            .iter()
            .map(|ms| {
                ms.iter()
                    .map(|m| {
                        setup
                            .sensor_times()
                            .iter()
                            .map(|&t| m.time.predict_scalar(&[t.clamp(lo, hi)]))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Surrogate {
            observed: Some(ObservedForm {
                setup: setup.clone(),
                sensor_modes,
                psi,
            }),
            ..self.clone()
        })
    }

    /// Reduced forward map `theta -> y_p` (time-major, like
    /// [`ObservationSetup::observe`]).
    pub fn reduced_observe(&self, theta: &[f64]) -> Result<(DVector<f64>, bool)> {
        let obs = self
            .observed
            .as_ref()
            .ok_or_else(|| Error::structure("surrogate has no observation setup attached"))?;
        let (th, clamped) = self.clamp_theta(theta)?;
        let n_times = obs.setup.sensor_times().len();
        let mut a = DMatrix::zeros(self.basis.p(), n_times);
        for (k, ms) in self.modes.iter().enumerate() {
            for (l, m) in ms.iter().enumerate() {
                let w = m.lambda * m.param.predict_scalar(&th)?;
                for (j, psi) in obs.psi[k][l].iter().enumerate() {
                    a[(k, j)] += w * psi;
                }
            }
        }
        let y = &obs.sensor_modes * a;
        // column j of y holds the sensors at time j: column-major storage
        // is exactly the time-major observation ordering
        Ok((DVector::from_column_slice(y.as_slice()), clamped))
    }

    pub fn to_text(&self) -> String {
        let mut w = TextWriter::new();
        w.word("format", FORMAT);
        w.word("kernel", self.kernel.tag());
        w.word("seed", &self.seed.to_string());
        w.int("n_train", self.n_train);
        w.floats("time_range", &[self.time_range.0, self.time_range.1]);
        w.floats("param_lo", &self.param_lo);
        w.floats("param_hi", &self.param_hi);
        w.matrix("pod_modes", self.basis.modes());
        w.floats("pod_singular_values", self.basis.singular_values());
        w.float("pod_energy_tol", self.basis.energy_tol().unwrap_or(f64::NAN));
        w.int("coefficients", self.modes.len());
        for ms in &self.modes {
            w.int("mode_count", ms.len());
            for m in ms {
                w.float("lambda", m.lambda);
                m.time.write_into(&mut w);
                m.param.write_into(&mut w);
            }
        }
        w.finish()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = TextReader::new(text);
        let format = r.word("format")?;
        if format != FORMAT {
            return Err(Error::parse(format!("unsupported surrogate format `{format}`")));
        }
        let kernel = r.word("kernel")?.parse()?;
        let seed = r
            .word("seed")?
            .parse()
            .map_err(|_| Error::parse("bad seed"))?;
        let n_train = r.int("n_train")?;
        let tr = r.floats("time_range")?;
        if tr.len() != 2 {
            return Err(Error::parse("time_range needs two values"));
        }
        let param_lo = r.floats("param_lo")?;
        let param_hi = r.floats("param_hi")?;
        let modes_m = r.matrix("pod_modes")?;
        let sv = r.floats("pod_singular_values")?;
        let tol = r.float("pod_energy_tol")?;
        let basis = PodBasis::from_parts(modes_m, sv, (!tol.is_nan()).then_some(tol))?;
        let p = r.int("coefficients")?;
        if p != basis.p() {
            return Err(Error::parse(format!("{p} coefficient blocks for {} modes", basis.p())));
        }
        let mut modes = Vec::with_capacity(p);
        for _ in 0..p {
            let q = r.int("mode_count")?;
            let mut ms = Vec::with_capacity(q);
            for _ in 0..q {
                let lambda = r.float("lambda")?;
                let time = DsrbfModel::read_from(&mut r)?;
                let param = DsrbfModel::read_from(&mut r)?;
                ms.push(ModeModel { lambda, time, param });
            }
            modes.push(ms);
        }
        if param_lo.len() != param_hi.len() {
            return Err(Error::parse("parameter box bounds differ in length"));
        }
        Ok(Surrogate {
            basis,
            modes,
            time_range: (tr[0], tr[1]),
            param_lo,
            param_hi,
            kernel,
            seed,
            n_train,
            observed: None,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Loads a surrogate; sensors must be reattached with
    /// [`Surrogate::with_observation`].
    pub fn load(path: &Path) -> Result<Self> {
        Surrogate::from_text(&std::fs::read_to_string(path)?)
    }
}

impl ForwardMap for Surrogate {
    fn output_dim(&self) -> usize {
        self.observed.as_ref().map_or(0, |o| o.setup.m())
    }

    fn evaluate(&self, theta: &[f64]) -> Result<Evaluation> {
        let (value, clamped) = self.reduced_observe(theta)?;
        Ok(Evaluation { value, clamped })
    }
}
