use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rbeki::experiments::{
    forward_convergence, run_example1, run_example1_alpha, run_example2, validate_surrogate,
    ExperimentConfig, NoiseLevelMode, ProblemKind, Refinement, StudyReport,
};

#[derive(Parser)]
#[command(name = "rbeki", version, about = "Reduced-basis ensemble Kalman inversion for time-fractional diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Source localization with known fractional order.
    Example1(RunArgs),
    /// Source localization together with the fractional order.
    Example1Alpha(RunArgs),
    /// Diffusivity identification with a KL-parameterized log-field.
    Example2(RunArgs),
    /// Surrogate error sweep over basis size and training size.
    ValidateSurrogate(RunArgs),
    /// Manufactured-solution refinement study of the forward solver.
    ForwardConvergence {
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.3, 0.5, 0.8])]
        alphas: Vec<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseLevelArg {
    Truth,
    SqrtM,
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration; problem defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also run EKI on the full-order model.
    #[arg(long)]
    direct_eki: bool,
    /// Right-hand side of the discrepancy principle.
    #[arg(long, value_enum)]
    noise_level: Option<NoiseLevelArg>,
}

impl RunArgs {
    fn load(&self, problem: ProblemKind) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => ExperimentConfig::defaults(problem),
        };
        if self.config.is_some() && cfg.problem != problem {
            anyhow::bail!("config selects problem {}, command runs {problem}", cfg.problem);
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.direct_eki |= self.direct_eki;
        if let Some(n) = self.noise_level {
            cfg.noise_level_mode = match n {
                NoiseLevelArg::Truth => NoiseLevelMode::Truth,
                NoiseLevelArg::SqrtM => NoiseLevelMode::SqrtM,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn summarize(report: &StudyReport) {
    let t = &report.offline.timings;
    println!(
        "offline: p = {}, mode counts {:?}, {:.3} s (snapshots {:.3}, pod {:.3}, training {:.3})",
        report.p,
        report.mode_counts,
        t.total(),
        t.snapshots,
        t.pod,
        t.training
    );
    println!("truth: {:?}", report.truth.as_slice());
    for r in &report.runs {
        let est: Vec<String> = r.estimate().iter().map(|v| format!("{v:.4}")).collect();
        println!(
            "{:>10} delta={:<5} theta=[{}] iterations={} e_theta={:.4} E_theta={:.3} online={:.3} s",
            r.method,
            r.delta,
            est.join(", "),
            r.iterations(),
            r.rel_error,
            r.misfit,
            r.result.wall_time
        );
    }
    if let Some(c) = &report.timing {
        println!(
            "timing over {} iterations: rb-eki {:.3} s, direct {:.3} s, speedup {:.1}x",
            c.iterations,
            c.rb_time,
            c.direct_time,
            c.speedup()
        );
    }
    for (r, c) in report.runs.iter().zip(&report.field_correlations) {
        println!("{} delta={} log-kappa correlation {:.3}", r.method, r.delta, c);
    }
    println!("results written to {}", report.config.output_dir.display());
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Example1(a) => summarize(&run_example1(&a.load(ProblemKind::Source2d)?)?),
        Command::Example1Alpha(a) => summarize(&run_example1_alpha(&a.load(ProblemKind::Source2dAlpha)?)?),
        Command::Example2(a) => summarize(&run_example2(&a.load(ProblemKind::DiffusivityKl)?)?),
        Command::ValidateSurrogate(a) => {
            let cfg = a.load(ProblemKind::Source2d)?;
            for e in validate_surrogate(&cfg)? {
                let r = e.row;
                println!(
                    "{:>5} p={:<2} N={:<4} eps_a={:.3e} eps_p={:.3e} eps_c={:.3e} ({:.1} s)",
                    r.method, r.p, r.n_train, r.eps_a, r.eps_p, r.eps_c, r.wall_time
                );
            }
        }
        Command::ForwardConvergence { out, alphas } => {
            let study = forward_convergence(&alphas)?;
            fs::create_dir_all(&out)?;
            study.write_csv(BufWriter::new(File::create(out.join("convergence.csv"))?))?;
            for &a in &alphas {
                println!(
                    "alpha = {a}: temporal order {:.3} (expected {:.2}), spatial order {:.3} (expected 2)",
                    study.order(Refinement::Time, a),
                    2.0 - a,
                    study.order(Refinement::Space, a)
                );
            }
        }
    }
    Ok(())
}
