use std::fs;
use std::process::Command;

use rbeki::eki::ForwardMap;
use rbeki::experiments::{run_example1, ExperimentConfig, ProblemKind, DIRECT_EKI, RB_EKI};
use rbeki::surrogate::Surrogate;

fn small_config(dir: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(ProblemKind::Source2d);
    cfg.output_dir = dir.to_path_buf();
    cfg.coarse_steps = 20;
    cfg.fine_steps = 40;
    cfg.n_train = 30;
    cfg.n_e = 30;
    cfg.max_iters = 8;
    cfg.noise_levels = vec![0.03];
    cfg.timing_iters = 2;
    cfg.direct_eki = true;
    cfg
}

#[test]
fn example1_pipeline_writes_reproducible_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_example1(&small_config(a.path())).unwrap();
    let rb = run_example1(&small_config(b.path())).unwrap();

    for name in [
        "table.csv",
        "timings.csv",
        "manifest.toml",
        "surrogate.txt",
        "pod_spectrum.csv",
        "data_delta0.030.csv",
        "diagnostics_rb-eki_delta0.030.csv",
        "path_direct-eki_delta0.030.csv",
    ] {
        assert!(a.path().join(name).is_file(), "missing {name}");
    }
    let table = |d: &tempfile::TempDir| fs::read_to_string(d.path().join("table.csv")).unwrap();
    assert_eq!(table(&a), table(&b));
    assert_eq!(ra.truth, rb.truth);

    let run = ra.run(RB_EKI, 0.03).unwrap();
    assert!(run.iterations() <= 8);
    assert!(ra.run(DIRECT_EKI, 0.03).is_some());
    let t = ra.timing.unwrap();
    assert_eq!(t.iterations, 2);

    // the saved surrogate reproduces the in-memory reduced map
    let setup = ra.offline.surrogate.observation().unwrap().clone();
    let loaded = Surrogate::load(&a.path().join("surrogate.txt"))
        .unwrap()
        .with_observation(&setup)
        .unwrap();
    let th = [0.3, 0.6];
    let y0 = ra.offline.surrogate.evaluate(&th).unwrap().value;
    let y1 = loaded.evaluate(&th).unwrap().value;
    assert!((y0 - y1).norm() <= 1e-12);
}

#[test]
fn config_file_round_trips_through_the_defaults() {
    let cfg = ExperimentConfig::from_toml("problem = \"source2d\"\nn_e = 40\n").unwrap();
    assert_eq!(cfg.n_e, 40);
    let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back.n_e, 40);
    assert_eq!(back.sensor_times, cfg.sensor_times);
    assert!(ExperimentConfig::from_toml("problem = \"source2d\"\nunknown_key = 1\n").is_err());
}

#[test]
fn cli_forward_convergence_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_rbeki"))
        .args(["forward-convergence", "--alphas", "0.5", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("temporal order"));
    let csv = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert!(csv.starts_with("kind,alpha,step,error"));
    assert_eq!(csv.lines().count(), 1 + 4 + 3);
}

#[test]
fn cli_rejects_mismatched_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    fs::write(&path, "problem = \"diffusivity-kl\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_rbeki"))
        .args(["example1", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(!out.status.success());
}
