use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;

use super::config::{ExperimentConfig, ProblemKind};
use super::data::{compute_metrics, correlation, draw_standard_noise, generate_synthetic_data, SyntheticData};
use super::offline::{build_offline, OfflineStage};
use super::problem::{FullForward, Problem};
use crate::eki::{run_eki, EkiOptions, ForwardMap, InversionResult, NoiseCovariance};
use crate::error::{Error, Result};
use crate::rng::SeedTree;

pub const RB_EKI: &str = "rb-eki";
pub const DIRECT_EKI: &str = "direct-eki";

/// One inversion at one noise level.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: &'static str,
    pub delta: f64,
    pub result: InversionResult,
    /// `e_theta` and `E_theta` at the estimate.
    pub rel_error: f64,
    pub misfit: f64,
    pub data: SyntheticData,
}

impl MethodRun {
    pub fn estimate(&self) -> &DVector<f64> {
        self.result.estimate()
    }

    pub fn iterations(&self) -> usize {
        self.result.iterations()
    }
}

/// Online wall time of RB-EKI and direct EKI over the same number of
/// iterations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingComparison {
    pub delta: f64,
    pub iterations: usize,
    pub rb_time: f64,
    pub direct_time: f64,
}

impl TimingComparison {
    pub fn speedup(&self) -> f64 {
        self.direct_time / self.rb_time
    }
}

#[derive(Debug, Clone)]
pub struct StudyReport {
    pub config: ExperimentConfig,
    pub truth: DVector<f64>,
    pub p: usize,
    pub mode_counts: Vec<usize>,
    pub offline: OfflineStage,
    pub runs: Vec<MethodRun>,
    pub timing: Option<TimingComparison>,
    /// Correlation of the recovered and true log-diffusivity at the coarse
    /// nodes, per run (diffusivity problem only).
    pub field_correlations: Vec<f64>,
}

impl StudyReport {
    pub fn run(&self, method: &str, delta: f64) -> Option<&MethodRun> {
        self.runs
            .iter()
            .find(|r| r.method == method && (r.delta - delta).abs() < 1e-12)
    }
}

fn eki_options(cfg: &ExperimentConfig, noise_level: f64, seeds: &SeedTree) -> EkiOptions {
    EkiOptions {
        n_e: cfg.n_e,
        rho: cfg.rho,
        tau: cfg.tau,
        gamma0: cfg.gamma0,
        max_iters: cfg.max_iters,
        noise_level,
        seed: seeds.named("eki").seed(),
        run_past_stop: cfg.run_past_stop,
    }
}

fn delta_tag(delta: f64) -> String {
    format!("{delta:.3}")
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Drives offline construction, data generation and the inversions at every
/// noise level. The truth (if not configured), the noise draw, the
/// ensemble and the surrogate use separate streams of `cfg.seed`, and the
/// same noise direction and initial ensemble serve every noise level and
/// both methods.
pub fn run_study(cfg: &ExperimentConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let seeds = SeedTree::new(cfg.seed);
    let out = cfg.output_dir.as_path();
    fs::create_dir_all(out)?;

    let problem = Problem::from_config(cfg)?;
    let coarse = FullForward::from_config(problem.clone(), cfg, cfg.coarse_n, cfg.coarse_steps)?;
    let fine = FullForward::from_config(problem.clone(), cfg, cfg.fine_n, cfg.fine_steps)?;

    let offline = build_offline(cfg, &coarse, &seeds)?;
    offline.surrogate.save(&out.join("surrogate.txt"))?;
    offline.basis.write_spectrum_csv(create(out, "pod_spectrum.csv")?)?;

    let truth = match &cfg.truth {
        Some(t) => DVector::from_column_slice(t),
        None => DVector::from_column_slice(
            problem
                .sample_parameters(1, &mut seeds.named("truth").rng())
                .row(0)
                .transpose()
                .as_slice(),
        ),
    };
    let z = draw_standard_noise(coarse.output_dim(), &mut seeds.named("noise").rng());

    let mut runs = Vec::new();
    for &delta in &cfg.noise_levels {
        let data = generate_synthetic_data(&fine, truth.as_slice(), delta, &z).map_err(|e| e.in_stage("data"))?;
        data.write_csv(create(out, &format!("data_delta{}.csv", delta_tag(delta)))?)?;
        let noise = data.covariance()?;
        let opts = eki_options(cfg, data.stop_level(cfg.noise_level_mode), &seeds);
        runs.push(invert(RB_EKI, &offline.surrogate, &problem, &coarse, &data, &noise, &opts)?);
        if cfg.direct_eki {
            runs.push(invert(DIRECT_EKI, &coarse, &problem, &coarse, &data, &noise, &opts)?);
        }
    }
    for r in &runs {
        let tag = format!("{}_delta{}", r.method, delta_tag(r.delta));
        r.result.write_diagnostics_csv(create(out, &format!("diagnostics_{tag}.csv"))?)?;
        write_mean_path(&r.result, create(out, &format!("path_{tag}.csv"))?)?;
    }

    let timing = if cfg.direct_eki && cfg.timing_iters > 0 {
        Some(timing_comparison(cfg, &offline, &coarse, &fine, &truth, &z, &seeds)?)
    } else {
        None
    };

    let mut field_correlations = Vec::new();
    if let Problem::DiffusivityKl { field, .. } = &problem {
        let grid = coarse.grid();
        let true_field = field.log_kappa_nodal(truth.as_slice())?;
        let mut w = create(out, "field_truth.csv")?;
        write_field(&mut w, grid, &true_field)?;
        for r in &runs {
            let est = field.log_kappa_nodal(r.estimate().as_slice())?;
            field_correlations.push(correlation(&est, &true_field)?);
            let mut w = create(out, &format!("field_{}_delta{}.csv", r.method, delta_tag(r.delta)))?;
            write_field(&mut w, grid, &est)?;
        }
    }

    let report = StudyReport {
        config: cfg.clone(),
        truth,
        p: offline.basis.p(),
        mode_counts: offline.surrogate.mode_counts(),
        offline,
        runs,
        timing,
        field_correlations,
    };
    write_table(&report, create(out, "table.csv")?)?;
    write_timings(&report, create(out, "timings.csv")?)?;
    write_manifest(&report, &seeds, out)?;
    Ok(report)
}

fn invert<F: ForwardMap>(
    method: &'static str,
    forward: &F,
    problem: &Problem,
    reference: &FullForward,
    data: &SyntheticData,
    noise: &NoiseCovariance,
    opts: &EkiOptions,
) -> Result<MethodRun> {
    let mut result = run_eki(forward, &problem.prior(), &data.y_obs, noise, opts, Some(&data.truth))
        .map_err(|e| e.in_stage("inversion"))?;
    compute_metrics(&mut result, &data.truth, reference, &data.y_obs, noise)?;
    let at = result.iterations();
    let rec = &result.records[at];
    log::info!(
        "{method} delta = {}: {} iterations, e_theta = {:.4}, stop {:?}",
        data.delta,
        at,
        rec.rel_error.unwrap_or(f64::NAN),
        result.stop_reason
    );
    Ok(MethodRun {
        method,
        delta: data.delta,
        rel_error: rec.rel_error.unwrap_or(f64::NAN),
        misfit: rec.reference_misfit.unwrap_or(rec.misfit),
        data: data.clone(),
        result,
    })
}

/// Both methods run `timing_iters` iterations at the noise level closest to
/// 3% (the discrepancy rule is disabled by a zero noise level).
fn timing_comparison(
    cfg: &ExperimentConfig,
    offline: &OfflineStage,
    coarse: &FullForward,
    fine: &FullForward,
    truth: &DVector<f64>,
    z: &DVector<f64>,
    seeds: &SeedTree,
) -> Result<TimingComparison> {
    let delta = cfg
        .noise_levels
        .iter()
        .copied()
        .min_by(|a, b| (a - 0.03).abs().total_cmp(&(b - 0.03).abs()))
        .expect("validated non-empty");
    let data = generate_synthetic_data(fine, truth.as_slice(), delta, z)?;
    let noise = data.covariance()?;
    let opts = EkiOptions {
        max_iters: cfg.timing_iters,
        run_past_stop: false,
        ..eki_options(cfg, 0.0, seeds)
    };
    let prior = coarse.problem().prior();
    let rb = run_eki(&offline.surrogate, &prior, &data.y_obs, &noise, &opts, None)?;
    let direct = run_eki(coarse, &prior, &data.y_obs, &noise, &opts, None)?;
    if rb.records.len() != direct.records.len() {
        return Err(Error::numerical("timing runs performed different iteration counts"));
    }
    Ok(TimingComparison {
        delta,
        iterations: rb.records.len() - 1,
        rb_time: rb.wall_time,
        direct_time: direct.wall_time,
    })
}

fn write_mean_path<W: Write>(result: &InversionResult, mut w: W) -> Result<()> {
    let d = result.records[0].theta_mean.len();
    let head: Vec<String> = (1..=d).map(|i| format!("theta_{i}")).collect();
    writeln!(w, "n,{}", head.join(","))?;
    for r in &result.records {
        let vals: Vec<String> = r.theta_mean.iter().map(|v| format!("{v:.6}")).collect();
        writeln!(w, "{},{}", r.iteration, vals.join(","))?;
    }
    Ok(())
}

fn write_field<W: Write>(w: &mut W, grid: &crate::tfpde::SpatialGrid, values: &[f64]) -> Result<()> {
    writeln!(w, "x,y,log_kappa")?;
    for (p, v) in values.iter().enumerate() {
        let [x, y] = grid.coords(p);
        writeln!(w, "{x:.4},{y:.4},{v:.6e}")?;
    }
    Ok(())
}

/// Deterministic results; wall times go to `timings.csv`.
fn write_table<W: Write>(report: &StudyReport, mut w: W) -> Result<()> {
    let d = report.truth.len();
    let head: Vec<String> = (1..=d).map(|i| format!("theta_{i}")).collect();
    writeln!(w, "method,delta,{},iterations,stop,e_theta,E_theta,clamps", head.join(","))?;
    for r in &report.runs {
        let vals: Vec<String> = r.estimate().iter().map(|v| format!("{v:.4}")).collect();
        writeln!(
            w,
            "{},{},{},{},{},{:.4e},{:.4e},{}",
            r.method,
            r.delta,
            vals.join(","),
            r.iterations(),
            r.result.stop_reason.as_str(),
            r.rel_error,
            r.misfit,
            r.result.total_clamps()
        )?;
    }
    Ok(())
}

fn write_timings<W: Write>(report: &StudyReport, mut w: W) -> Result<()> {
    let t = &report.offline.timings;
    writeln!(w, "stage,delta,iterations,seconds")?;
    writeln!(w, "offline-snapshots,,,{:.3}", t.snapshots)?;
    writeln!(w, "offline-pod,,,{:.3}", t.pod)?;
    writeln!(w, "offline-training,,,{:.3}", t.training)?;
    for r in &report.runs {
        writeln!(w, "online-{},{},{},{:.3}", r.method, r.delta, r.iterations(), r.result.wall_time)?;
    }
    if let Some(c) = &report.timing {
        writeln!(w, "timing-{RB_EKI},{},{},{:.3}", c.delta, c.iterations, c.rb_time)?;
        writeln!(w, "timing-{DIRECT_EKI},{},{},{:.3}", c.delta, c.iterations, c.direct_time)?;
    }
    Ok(())
}

/// Configuration, seed streams, versions and headline numbers.
fn write_manifest(report: &StudyReport, seeds: &SeedTree, out: &Path) -> Result<()> {
    let mut run = toml::Table::new();
    run.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    run.insert("seed".into(), (seeds.seed() as i64).into());
    let mut streams = toml::Table::new();
    for name in ["train-params", "surrogate", "truth", "noise", "eki"] {
        streams.insert(name.into(), format!("{:#018x}", seeds.named(name).seed()).into());
    }
    run.insert("streams".into(), streams.into());
    run.insert("p".into(), (report.p as i64).into());
    run.insert(
        "mode_counts".into(),
        report.mode_counts.iter().map(|&q| toml::Value::from(q as i64)).collect::<Vec<_>>().into(),
    );
    run.insert(
        "truth".into(),
        report.truth.iter().map(|&v| toml::Value::from(v)).collect::<Vec<_>>().into(),
    );
    let mut doc = toml::Table::new();
    doc.insert("run".into(), run.into());
    doc.insert(
        "config".into(),
        toml::Table::try_from(&report.config)
            .map_err(|e| Error::parse(e.to_string()))?
            .into(),
    );
    fs::write(out.join("manifest.toml"), toml::to_string(&doc).map_err(|e| Error::parse(e.to_string()))?)?;
    Ok(())
}

fn expect_problem(cfg: &ExperimentConfig, kind: ProblemKind) -> Result<()> {
    if cfg.problem != kind {
        return Err(Error::domain(format!(
            "this driver runs the {kind} problem, config selects {}",
            cfg.problem
        )));
    }
    Ok(())
}

/// Source localization with known order.
pub fn run_example1(cfg: &ExperimentConfig) -> Result<StudyReport> {
    expect_problem(cfg, ProblemKind::Source2d)?;
    run_study(cfg)
}

/// Source localization with unknown order.
pub fn run_example1_alpha(cfg: &ExperimentConfig) -> Result<StudyReport> {
    expect_problem(cfg, ProblemKind::Source2dAlpha)?;
    run_study(cfg)
}

/// Diffusivity identification.
pub fn run_example2(cfg: &ExperimentConfig) -> Result<StudyReport> {
    expect_problem(cfg, ProblemKind::DiffusivityKl)?;
    run_study(cfg)
}
