use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ventctl::bench::GridSpec;
use ventctl::config::RunConfig;
use ventctl::io::{read_curve_csv, read_json, read_trace_csv, PolicyCheckpoint, SimCheckpoint};
use ventctl::lung::LungParams;
use ventctl::pipeline::Scoreboard;

fn tiny() -> RunConfig {
    let mut cfg = RunConfig {
        seed: 3,
        settings: vec![LungParams::with_rc(20.0, 20.0), LungParams::with_rc(5.0, 50.0)],
        ..Default::default()
    };
    cfg.dataset.n_breaths = 12;
    cfg.sim.hidden = vec![8];
    cfg.sim.epochs = 2;
    cfg.eval.n_samples = 3;
    cfg.ctrl.hidden = vec![4];
    cfg.ctrl.epochs = 2;
    cfg.ctrl.lambdas = vec![0.2];
    cfg.bench.pid_grid = GridSpec {
        p: vec![1.0, 2.0],
        i: vec![0.5],
        d: vec![0.0],
    };
    cfg.bench.n_breaths = 1;
    cfg
}

fn ventctl(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ventctl"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, cfg: &RunConfig) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string(cfg).unwrap()).unwrap();
    path
}

#[test]
fn stages_write_plot_ready_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &tiny());
    let out = dir.path().join("run");
    for stage in ["collect", "train-sim", "eval-sim", "grid-pid", "train-ctrl", "score", "compare"] {
        let o = ventctl(&[stage], &cfg, &out);
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let (u, p) = read_trace_csv(&out.join("r20_c20/collect.csv")).unwrap();
    assert_eq!((u.len(), p.len()), (1200, 1200));
    assert!(fs::read_to_string(out.join("r20_c20/collect.csv")).unwrap().starts_with("t,u,p\n"));

    let sim: SimCheckpoint = read_json(&out.join("r5_c50/sim.json")).unwrap();
    assert_eq!(sim.sizes, vec![22, 8, 1]);
    assert_eq!(sim.schema_version, 1);
    sim.into_model().unwrap();
    assert_eq!(read_curve_csv(&out.join("r5_c50/sim_curve.csv")).unwrap().len(), 2);

    let policy: PolicyCheckpoint = read_json(&out.join("multi/policy.json")).unwrap();
    assert_eq!(policy.lambda, 0.2);
    policy.into_policy().unwrap();
    let curve = read_curve_csv(&out.join("r20_c20/policy_curve.csv")).unwrap();
    assert_eq!(curve.first().map(|r| r.epoch), Some(0));

    let sb: Scoreboard = read_json(&out.join("scoreboard.json")).unwrap();
    assert_eq!(sb.settings.len(), 2);
    for s in sb.settings.values() {
        assert!(s.sim.open_loop_per_step.is_some() && s.sim.one_step_rmse.is_some());
        assert!(s.pid.as_ref().unwrap().score.is_some());
        assert!(s.residual.as_ref().unwrap().score.is_some());
    }
    assert!(sb.multi.pid_mean.is_some() && sb.multi.residual_mean.is_some());
    let report: serde_json::Value = read_json(&out.join("multi/compare_r5_c50.json")).unwrap();
    assert!(report["policy_traces"].as_array().unwrap().len() == 6);
    let saved: RunConfig = read_json(&out.join("config.json")).unwrap();
    assert_eq!(saved, tiny());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &tiny());
    let out = dir.path().join("run");
    let o = Command::new(env!("CARGO_BIN_EXE_ventctl"))
        .args(["collect", "--seed", "77", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success());
    let saved: RunConfig = read_json(&out.join("config.json")).unwrap();
    assert_eq!(saved.seed, 77);
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let missing = ventctl(&["collect"], &dir.path().join("nope.json"), &out);
    assert_eq!(missing.status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(ventctl(&["collect"], &bad, &out).status.code(), Some(2));

    let mut cfg = tiny();
    cfg.dataset.train_frac = 1.5;
    let path = write_config(dir.path(), &cfg);
    assert_eq!(ventctl(&["collect"], &path, &out).status.code(), Some(2));

    let unknown = Command::new(env!("CARGO_BIN_EXE_ventctl")).arg("fly").output().unwrap();
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn diverging_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.sim.lr = 1e300;
    let path = write_config(dir.path(), &cfg);
    let out = dir.path().join("run");
    assert!(ventctl(&["collect"], &path, &out).status.success());
    let o = ventctl(&["train-sim"], &path, &out);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_artifacts_fail() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &tiny());
    let o = ventctl(&["train-sim"], &cfg, &dir.path().join("empty"));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing artifact"));
}
