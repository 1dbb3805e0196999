//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.
//!
//! Criteria 1, 2, 3 and 5 read the artifacts of two full `run-all`
//! invocations of the release CLI with the same seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng as _;
use ventctl::controller::{pid_control, residual_control, ControllerState, PidCoeffs, Policy};
use ventctl::io::{read_json, PolicyCheckpoint};
use ventctl::lung::{alveolar_pressure, benchmark_settings, reset, rollout, step, LungParams, Oracle};
use ventctl::nn::{grad, Bound, Eval, Mlp, Ops};
use ventctl::pipeline::{Run, Scoreboard};
use ventctl::policy::{objective_gradient, objective_loss, FeatureSpec};
use ventctl::rng::SeedStream;
use ventctl::sim::{open_loop_distance, ConstantPlant, ExplorationControls, FixedControls, SimModel, SimPlant};
use ventctl::types::{TimeGrid, U_MAX};
use ventctl::waveform::{benchmark_suite, TargetWaveform};

const SEED: u64 = 20240601;
const TIME_LIMIT: Duration = Duration::from_secs(30 * 60);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn run_all(out: &Path) -> Result<Duration, String> {
    let t0 = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_ventctl"))
        .args(["run-all", "--seed", &SEED.to_string(), "--out"])
        .arg(out)
        .status()
        .map_err(|e| format!("cannot launch ventctl: {e}"))?;
    if !status.success() {
        return Err(format!("run-all exited with {status}"));
    }
    Ok(t0.elapsed())
}

fn overall(s: &Option<ventctl::bench::Score>) -> f64 {
    s.as_ref().map_or(f64::NAN, |s| s.overall)
}

fn c1_per_setting(sb: &Scoreboard, elapsed: Duration) -> Outcome {
    let mut wins = 0;
    let mut parts = Vec::new();
    for (tag, s) in &sb.settings {
        let pid = overall(&s.pid.as_ref().and_then(|p| p.score.clone()));
        let res = overall(&s.residual.as_ref().and_then(|r| r.score.clone()));
        if res < pid {
            wins += 1;
        }
        parts.push(format!("{tag} {res:.3}<{pid:.3}"));
    }
    let fast = elapsed < TIME_LIMIT;
    outcome(
        wins >= 5 && sb.settings.len() == 6 && fast,
        format!("{wins}/6 settings beat grid PID [{}]; run-all {:.0}s", parts.join(", "), elapsed.as_secs_f64()),
    )
}

fn c2_multi_setting(sb: &Scoreboard) -> Outcome {
    let (pid, res) = (sb.multi.pid_mean.unwrap_or(f64::NAN), sb.multi.residual_mean.unwrap_or(f64::NAN));
    let n = sb.multi.pid_scores.len().min(sb.multi.residual_scores.len());
    outcome(
        n == 6 && pid - res > 0.0,
        format!("shared controller mean {res:.4} vs best-over-all PID mean {pid:.4}, margin {:.4}", pid - res),
    )
}

fn c3_fidelity(sb: &Scoreboard) -> Outcome {
    let d: BTreeMap<_, _> = sb
        .settings
        .iter()
        .map(|(t, s)| (t.clone(), s.sim.open_loop_per_step.unwrap_or(f64::INFINITY)))
        .collect();
    let worst = d.values().copied().fold(0.0, f64::max);
    let ok = d.len() == 6 && sb.protocol.eval_samples == 200 && sb.protocol.eval_horizon == 40 && worst < 1.0;
    outcome(ok, format!("worst per-step open-loop distance {worst:.4} cmH2O over {} settings", d.len()))
}

fn relative(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Smooth losses on a single-output network.
fn net_loss<'n, O: Ops<'n>>(o: &mut O, net: Bound<'n>, x: &[f64], kind: usize) -> ventctl::Result<O::S> {
    let xs: Vec<O::S> = x.iter().map(|v| o.constant(*v)).collect();
    let y = o.mlp(net, &xs)?;
    Ok(match kind {
        0 => o.mul(y, y),
        1 => {
            let t = o.tanh(y);
            o.affine(t, 3.0, 0.5)
        }
        _ => {
            let d = o.affine(y, 1.0, -0.7);
            let sq = o.mul(d, d);
            o.mul(sq, y)
        }
    })
}

fn c4a_net_gradients() -> (bool, String) {
    let seeds = SeedStream::new(SEED).child("gradcheck/net");
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for draw in 0..100 {
        let mut rng = seeds.rng(&format!("draw/{draw}"));
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(1..=6)];
        for _ in 0..depth {
            sizes.push(rng.random_range(1..=8));
        }
        sizes.push(1);
        let net = Mlp::init(&sizes, &mut rng).unwrap();
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
        let kind = draw % 3;
        let g = grad(&net, |tape, b| net_loss(tape, b, &x, kind)).unwrap();
        for i in 0..net.params().len() {
            let eval = |delta: f64| {
                let mut n = net.clone();
                n.params_mut()[i] += delta;
                net_loss(&mut Eval, Bound::frozen(&n), &x, kind).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            worst = worst.max(relative(g[i], fd, 1e-2));
        }
    }
    (worst <= 1e-5, format!("nets: worst relative error {worst:.2e} over 100 draws"))
}

fn c4b_unroll_gradients(sim: &SimModel) -> (bool, String) {
    let seeds = SeedStream::new(SEED).child("gradcheck/unroll");
    let grid = TimeGrid::default();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let (mut checked, mut kinks, mut draw) = (0, 0, 0);
    while checked < 20 && draw < 200 {
        let mut rng = seeds.rng(&format!("draw/{draw}"));
        draw += 1;
        let spec = FeatureSpec { history: 5 };
        let mut net = Mlp::init(&[spec.len(), 32, 32, 1], &mut rng).unwrap();
        net.params_mut().iter_mut().for_each(|p| *p *= 0.5);
        let policy = Policy {
            pid: PidCoeffs::new(rng.random_range(0.5..4.0), rng.random_range(0.0..1.0), rng.random_range(0.0..0.5), 40).unwrap(),
            correction: Some(net),
            lambda: rng.random_range(0.05..0.5),
            feature_history: 5,
        };
        let waveform = TargetWaveform::new(rng.random_range(10.0..35.0), 5.0, 5, grid).unwrap();
        let sims = std::slice::from_ref(sim);
        let (_, g) = objective_gradient(&policy, sims, &[waveform]).unwrap();
        let n = policy.correction.as_ref().unwrap().params().len();
        let coords: Vec<usize> = (0..25).map(|_| rng.random_range(0..n)).collect();
        let eval = |i: usize, delta: f64| {
            let mut p = policy.clone();
            p.correction.as_mut().unwrap().params_mut()[i] += delta;
            objective_loss(&p, sims, &[waveform]).unwrap()
        };
        let mut draw_worst: f64 = 0.0;
        let mut kinked = false;
        for &i in &coords {
            let (up, mid, down) = (eval(i, h), eval(i, 0.0), eval(i, -h));
            let (fwd, bwd) = ((up - mid) / h, (mid - down) / h);
            // a kink of |.| or a clamp inside the stencil: one-sided slopes disagree
            if relative(fwd, bwd, 1e-2) > 1e-3 {
                kinked = true;
                break;
            }
            draw_worst = draw_worst.max(relative(g[i], (up - down) / (2.0 * h), 1e-2));
        }
        if kinked {
            kinks += 1;
            continue;
        }
        worst = worst.max(draw_worst);
        checked += 1;
    }
    (
        checked == 20 && worst <= 1e-4,
        format!("unroll: worst relative error {worst:.2e} over {checked} draws ({kinks} kink draws resampled)"),
    )
}

fn c6_residual_bound() -> Outcome {
    let seeds = SeedStream::new(SEED).child("bound");
    let mut rng = seeds.rng("draws");
    let spec = FeatureSpec { history: 5 };
    let mut violations = 0;
    let mut worst_ratio: f64 = 0.0;
    let draws = 100_000;
    let mut policy = Policy::pid_only(PidCoeffs::new(1.0, 0.0, 0.0, 40).unwrap());
    for d in 0..draws {
        if d % 1000 == 0 {
            let mut net = Mlp::init(&[spec.len(), 16, 1], &mut rng).unwrap();
            let gain = rng.random_range(0.1..20.0);
            net.params_mut().iter_mut().for_each(|p| *p *= gain);
            policy = Policy {
                pid: PidCoeffs::new(rng.random_range(0.0..10.0), rng.random_range(0.0..3.0), rng.random_range(0.0..2.0), 40).unwrap(),
                correction: Some(net),
                lambda: rng.random_range(0.0..1.0),
                feature_history: 5,
            };
        }
        let mut state = ControllerState::new(40, 0.0);
        for _ in 0..rng.random_range(0..10) {
            pid_control(&mut Eval, &mut state, rng.random_range(0.0..40.0), rng.random_range(5.0..35.0), &policy.pid);
        }
        let features: Vec<f64> = (0..spec.len()).map(|_| rng.random_range(-5.0..5.0)).collect();
        let (p, target) = (rng.random_range(0.0..40.0), rng.random_range(5.0..35.0));
        let mut s2 = state.clone();
        let u_pid = pid_control(&mut Eval, &mut s2, p, target, &policy.pid);
        let corr = policy.correction.as_ref().map(Bound::frozen);
        let u = residual_control(&mut Eval, &mut state, p, target, &features, &policy, corr).unwrap();
        let bound = policy.lambda * U_MAX / 2.0;
        let gap = (u - u_pid).abs();
        if gap > bound {
            violations += 1;
        }
        if bound > 0.0 {
            worst_ratio = worst_ratio.max(gap / bound);
        }
    }
    outcome(
        violations == 0,
        format!("{violations} violations over {draws} draws; max |u_res - u_pid| / bound = {worst_ratio:.6}"),
    )
}

fn c7_oracle_sanity() -> Outcome {
    let grid = TimeGrid::default();
    let settings = benchmark_settings(&LungParams::default());
    let seeds = SeedStream::new(SEED).child("oracle");
    let mut zero_ok = true;
    for lung in &settings {
        let mut o = Oracle::new(lung.noise_free(), grid.dt, seeds.rng("zero"));
        for _ in 0..300 {
            zero_ok &= o.step(0.0).unwrap() == lung.peep;
        }
    }
    let mut mono_ok = true;
    let mut worst_gap = f64::NEG_INFINITY;
    for k in 0..50 {
        let mut rng = seeds.rng(&format!("mono/{k}"));
        let base = settings[rng.random_range(0..settings.len())].noise_free();
        let doubled = LungParams { c: base.c * 2.0, ..base };
        let controls: Vec<f64> = (0..grid.insp_steps).map(|_| rng.random_range(0.0..U_MAX)).collect();
        let (mut a, mut b) = (reset(&base), reset(&doubled));
        for &u in &controls {
            a = step(&a, u, &base, grid.dt, &mut rng).unwrap().0;
            b = step(&b, u, &doubled, grid.dt, &mut rng).unwrap().0;
            let gap = alveolar_pressure(&b, &doubled) - alveolar_pressure(&a, &base);
            worst_gap = worst_gap.max(gap);
            mono_ok &= gap <= 0.0;
        }
    }
    let suite = benchmark_suite(5.0, grid).unwrap();
    let mut worst_return: f64 = 0.0;
    for lung in &settings {
        let (p, _) = rollout(&mut FullOpen, &lung.noise_free(), grid, &suite, &mut seeds.rng("return")).unwrap();
        for b in 0..suite.len() {
            let last = p.values()[(b + 1) * grid.steps_per_breath - 1];
            worst_return = worst_return.max((last - lung.peep).abs());
        }
    }
    let ok = zero_ok && mono_ok && worst_return <= 0.5;
    outcome(
        ok,
        format!(
            "zero-control at PEEP: {zero_ok}; C-monotone over 50 sequences: {mono_ok} (max gap {worst_gap:.3}); \
             worst end-of-breath |p - PEEP| after full-open breaths {worst_return:.3}"
        ),
    )
}

/// Valve fully open for the whole inspiration.
struct FullOpen;

impl ventctl::controller::Controller for FullOpen {
    fn reset(&mut self) {}
    fn control(&mut self, _t: usize, _p: f64, _target: f64) -> ventctl::Result<f64> {
        Ok(U_MAX)
    }
}

fn c8_distance_axioms(sim: &SimModel) -> Outcome {
    let grid = TimeGrid::default();
    let seeds = SeedStream::new(SEED).child("distance");
    let mut fixed = FixedControls::new(vec![vec![50.0; 10]]);
    let stub = open_loop_distance(&mut ConstantPlant(5.0), &mut ConstantPlant(7.0), &mut fixed, 4, 10, &mut seeds.rng("stub"))
        .unwrap();
    let lung = LungParams::default();
    let dist = || ExplorationControls {
        lung,
        cfg: ventctl::explore::ExploreConfig::default_for(grid),
        suite: benchmark_suite(5.0, grid).unwrap(),
        grid,
    };
    let oracle = |label: &str| Oracle::new(lung.noise_free(), grid.dt, seeds.rng(label));
    let same = open_loop_distance(&mut oracle("a"), &mut oracle("b"), &mut dist(), 20, 40, &mut seeds.rng("same")).unwrap();
    let fwd = open_loop_distance(&mut SimPlant::new(sim), &mut oracle("c"), &mut dist(), 20, 40, &mut seeds.rng("sym")).unwrap();
    let bwd = open_loop_distance(&mut oracle("c"), &mut SimPlant::new(sim), &mut dist(), 20, 40, &mut seeds.rng("sym")).unwrap();
    outcome(
        same == 0.0 && fwd == bwd && fwd >= 0.0 && stub == 20.0,
        format!("identical oracles {same}; d(sim,oracle) {fwd:.6} = d(oracle,sim) {bwd:.6}; constant stubs {stub}"),
    )
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn c5_determinism(a: &Path, b: &Path) -> Outcome {
    let (fa, fb) = (files(a), files(b));
    if fa != fb {
        return outcome(false, "runs produced different artifact sets");
    }
    let differing: Vec<String> = fa
        .iter()
        .filter(|f| fs::read(a.join(f)).unwrap() != fs::read(b.join(f)).unwrap())
        .map(|f| f.display().to_string())
        .collect();
    let checkpoints = fa.iter().filter(|f| f.extension().is_some_and(|e| e == "json")).count();
    outcome(
        differing.is_empty() && fa.iter().any(|f| f.ends_with("scoreboard.json")) && checkpoints > 0,
        if differing.is_empty() {
            format!("{} artifacts byte-identical across two runs", fa.len())
        } else {
            format!("differing artifacts: {}", differing.join(", "))
        },
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let (out_a, out_b) = (tmp.path().join("a"), tmp.path().join("b"));
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();

    let first = run_all(&out_a);
    let scoreboard = first
        .as_ref()
        .ok()
        .and_then(|_| read_json::<Scoreboard>(&out_a.join("scoreboard.json")).ok());
    let sim = Run::new(ventctl::config::RunConfig { seed: SEED, ..Default::default() }, &out_a)
        .ok()
        .and_then(|r| r.load_sim("r20_c50").ok());

    match (&first, &scoreboard) {
        (Ok(elapsed), Some(sb)) => {
            results.push((1, "per-setting controller beats grid PID", c1_per_setting(sb, *elapsed)));
            results.push((2, "multi-setting controller beats best-over-all PID", c2_multi_setting(sb)));
            results.push((3, "simulator open-loop fidelity", c3_fidelity(sb)));
        }
        _ => {
            let why = first.as_ref().err().cloned().unwrap_or_else(|| "no scoreboard".into());
            for (n, name) in [(1, "per-setting controller beats grid PID"), (2, "multi-setting controller beats best-over-all PID"), (3, "simulator open-loop fidelity")] {
                results.push((n, name, outcome(false, why.clone())));
            }
        }
    }

    match &sim {
        Some(sim) => {
            let (a_ok, a) = c4a_net_gradients();
            let (b_ok, b) = c4b_unroll_gradients(sim);
            results.push((4, "gradient integrity", outcome(a_ok && b_ok, format!("{a}; {b}"))));
        }
        None => results.push((4, "gradient integrity", outcome(false, "no simulator checkpoint"))),
    }

    let second = run_all(&out_b);
    results.push((
        5,
        "determinism",
        match second {
            Ok(_) if first.is_ok() => c5_determinism(&out_a, &out_b),
            Ok(_) => outcome(false, "first run failed"),
            Err(e) => outcome(false, e),
        },
    ));
    results.push((6, "residual bound", c6_residual_bound()));
    results.push((7, "oracle sanity", c7_oracle_sanity()));
    match &sim {
        Some(sim) => results.push((8, "open-loop distance axioms", c8_distance_axioms(sim))),
        None => results.push((8, "open-loop distance axioms", outcome(false, "no simulator checkpoint"))),
    }

    if let Ok(p) = read_json::<PolicyCheckpoint>(&out_a.join("multi/policy.json")) {
        println!("multi-setting policy: lambda {} with PID {:?}", p.lambda, p.pid);
    }
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (n, name, o) in &results {
        println!("[{}] criterion {n} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
