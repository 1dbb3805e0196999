//! Pipeline stages over an output directory. Each stage reads the artifacts
//! of the previous ones, writes its own, and merges its numbers into
//! `scoreboard.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{best_over_all, compare as compare_policies, grid_search_pid, score, GridResult, GridSpec, Score};
use crate::config::RunConfig;
use crate::controller::{PidCoeffs, Policy};
use crate::dataset::{build_windows, split};
use crate::error::{Error, Result};
use crate::explore::collect as collect_breaths;
use crate::io::{
    read_json, read_trace_csv, write_curve_csv, write_json, write_trace_csv, PolicyCheckpoint, SimCheckpoint,
    SCHEMA_VERSION,
};
use crate::lung::{LungParams, Oracle};
use crate::policy::{train_policy_sweep, SweepEntry, TrainObjective};
use crate::rng::SeedStream;
use crate::sim::{one_step_error, open_loop_distance, train_sim, ExplorationControls, SimModel, SimPlant};
use crate::types::{split_breath, ControlTrace, PressureTrace};

pub const MULTI: &str = "multi";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub one_step_rmse: Option<f64>,
    /// Mean open-loop distance to the noise-free oracle, per step.
    pub open_loop_per_step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PidReport {
    pub coeffs: PidCoeffs,
    pub grid_score: f64,
    pub score: Option<Score>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub lambda: f64,
    pub sweep: Vec<SweepEntry>,
    pub score: Option<Score>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SettingReport {
    pub sim: SimReport,
    pub pid: Option<PidReport>,
    pub residual: Option<ResidualReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MultiReport {
    pub pid: Option<PidReport>,
    pub residual: Option<ResidualReport>,
    /// Overall scores per setting of the shared PID and the shared residual policy.
    pub pid_scores: BTreeMap<String, f64>,
    pub residual_scores: BTreeMap<String, f64>,
    pub pid_mean: Option<f64>,
    pub residual_mean: Option<f64>,
}

/// Evaluation protocol recorded next to the numbers it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub n_breaths: usize,
    pub pid_grid: GridSpec,
    pub eval_samples: usize,
    pub eval_horizon: usize,
    pub bench_seed: u64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scoreboard {
    pub schema_version: u32,
    pub seed: u64,
    pub protocol: Protocol,
    pub settings: BTreeMap<String, SettingReport>,
    pub multi: MultiReport,
}

/// A configured run rooted at an output directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub cfg: RunConfig,
    pub out: PathBuf,
    seeds: SeedStream,
}

impl Run {
    pub fn new(cfg: RunConfig, out: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        let seeds = SeedStream::new(cfg.seed);
        Ok(Self {
            cfg,
            out: out.into(),
            seeds,
        })
    }

    pub fn path(&self, scope: &str, file: &str) -> PathBuf {
        self.out.join(scope).join(file)
    }

    pub fn scoreboard_path(&self) -> PathBuf {
        self.out.join("scoreboard.json")
    }

    /// Seed shared by every oracle score of the run.
    pub fn bench_seed(&self) -> u64 {
        self.seeds.child("bench").seed()
    }

    fn tags(&self) -> Vec<String> {
        self.cfg.settings.iter().map(LungParams::tag).collect()
    }

    pub fn scoreboard(&self) -> Result<Scoreboard> {
        let path = self.scoreboard_path();
        if path.exists() {
            let sb: Scoreboard = read_json(&path)?;
            if sb.seed == self.cfg.seed && sb.schema_version == SCHEMA_VERSION {
                return Ok(sb);
            }
        }
        Ok(Scoreboard {
            schema_version: SCHEMA_VERSION,
            seed: self.cfg.seed,
            protocol: Protocol {
                n_breaths: self.cfg.bench.n_breaths,
                pid_grid: self.cfg.bench.pid_grid.clone(),
                eval_samples: self.cfg.eval.n_samples,
                eval_horizon: self.cfg.eval.horizon,
                bench_seed: self.bench_seed(),
                note: "PID grid, breath counts and lung settings are configurable stand-ins".into(),
            },
            settings: BTreeMap::new(),
            multi: MultiReport::default(),
        })
    }

    fn update(&self, f: impl FnOnce(&mut Scoreboard)) -> Result<()> {
        let mut sb = self.scoreboard()?;
        f(&mut sb);
        write_json(&self.scoreboard_path(), &sb)
    }

    fn write_config(&self) -> Result<()> {
        write_json(&self.out.join("config.json"), &self.cfg)
    }

    /// Exploration data per setting, `<tag>/collect.csv`.
    pub fn collect(&self) -> Result<()> {
        self.write_config()?;
        let suite = self.cfg.suite()?;
        for lung in &self.cfg.settings {
            let tag = lung.tag();
            log(&format!("collect {tag}"));
            let mut rng = self.seeds.rng(&format!("collect/{tag}"));
            let c = collect_breaths(lung, &self.cfg.explore, &suite, self.cfg.dataset.n_breaths, self.cfg.grid, &mut rng)?;
            write_trace_csv(&self.path(&tag, "collect.csv"), c.controls.values(), c.pressures.values())?;
        }
        Ok(())
    }

    /// One simulator per setting, `<tag>/sim.json` and `<tag>/sim_curve.csv`.
    pub fn train_sim(&self) -> Result<()> {
        for lung in &self.cfg.settings {
            let tag = lung.tag();
            log(&format!("train-sim {tag}"));
            let (u, p) = read_trace_csv(&self.path(&tag, "collect.csv"))?;
            let grid = self.cfg.grid;
            let episodes = split_breath(&PressureTrace::new(p, grid)?, &ControlTrace::new(u, grid)?, grid)?;
            let set = build_windows(&episodes, self.cfg.dataset.window);
            let (train, val) = split(&set, self.cfg.dataset.train_frac, &mut self.seeds.rng(&format!("split/{tag}")))?;
            let seeds = self.seeds.child(&format!("sim/{tag}"));
            let (model, curve) = train_sim(&train, &val, &self.cfg.sim, lung.peep, &mut seeds.rng("train"))?;
            let (_, rmse) = one_step_error(&model, &val)?;
            write_json(&self.path(&tag, "sim.json"), &SimCheckpoint::new(&model, seeds.seed()))?;
            write_curve_csv(&self.path(&tag, "sim_curve.csv"), &curve)?;
            self.update(|sb| sb.settings.entry(tag).or_default().sim.one_step_rmse = Some(rmse))?;
        }
        Ok(())
    }

    pub fn load_sim(&self, tag: &str) -> Result<SimModel> {
        read_json::<SimCheckpoint>(&self.path(tag, "sim.json"))?.into_model()
    }

    /// Open-loop distance of each simulator to its noise-free oracle under
    /// held-out exploration controls.
    pub fn eval_sim(&self) -> Result<()> {
        let suite = self.cfg.suite()?;
        for lung in &self.cfg.settings {
            let tag = lung.tag();
            log(&format!("eval-sim {tag}"));
            let model = self.load_sim(&tag)?;
            let seeds = self.seeds.child(&format!("eval/{tag}"));
            let mut dist = ExplorationControls {
                lung: *lung,
                cfg: self.cfg.explore,
                suite: suite.clone(),
                grid: self.cfg.grid,
            };
            let mut oracle = Oracle::new(lung.noise_free(), self.cfg.grid.dt, seeds.rng("oracle"));
            let mut sim = SimPlant::new(&model);
            let e = &self.cfg.eval;
            let d = open_loop_distance(&mut sim, &mut oracle, &mut dist, e.n_samples, e.horizon, &mut seeds.rng("controls"))?;
            let per_step = d / e.horizon as f64;
            self.update(|sb| sb.settings.entry(tag).or_default().sim.open_loop_per_step = Some(per_step))?;
        }
        Ok(())
    }

    /// PID grid search per setting, plus the single best triple over all settings.
    pub fn grid_pid(&self) -> Result<()> {
        let suite = self.cfg.suite()?;
        let k = self.cfg.grid.insp_steps;
        let b = &self.cfg.bench;
        let mut boards = Vec::with_capacity(self.cfg.settings.len());
        for lung in &self.cfg.settings {
            let tag = lung.tag();
            log(&format!("grid-pid {tag}"));
            let res = grid_search_pid(lung, &suite, &b.pid_grid, k, b.n_breaths, self.bench_seed())?;
            write_json(&self.path(&tag, "pid_grid.json"), &res)?;
            let report = PidReport {
                coeffs: res.winner,
                grid_score: res.score,
                score: None,
            };
            self.update(|sb| sb.settings.entry(tag).or_default().pid = Some(report))?;
            boards.push(res.leaderboard);
        }
        let multi = best_over_all(&boards, k)?;
        write_json(&self.path(MULTI, "pid_grid.json"), &multi)?;
        self.update(|sb| {
            sb.multi.pid = Some(PidReport {
                coeffs: multi.winner,
                grid_score: multi.score,
                score: None,
            })
        })
    }

    fn grid_winner(&self, scope: &str) -> Result<PidCoeffs> {
        Ok(read_json::<GridResult>(&self.path(scope, "pid_grid.json"))?.winner)
    }

    pub fn load_policy(&self, scope: &str) -> Result<Policy> {
        read_json::<PolicyCheckpoint>(&self.path(scope, "policy.json"))?.into_policy()
    }

    fn train_scope(&self, scope: &str, sims: Vec<SimModel>) -> Result<()> {
        log(&format!("train-ctrl {scope}"));
        let pid = self.grid_winner(scope)?;
        let objective = TrainObjective {
            sims,
            waveforms: self.cfg.suite()?,
        };
        let seeds = self.seeds.child(&format!("ctrl/{scope}"));
        let lambdas = self.cfg.ctrl.lambdas.clone();
        let (policy, curve, sweep) = train_policy_sweep(&objective, pid, &self.cfg.ctrl, |lambda| {
            let i = lambdas.iter().position(|l| *l == lambda).unwrap_or(0);
            seeds.rng(&format!("lambda/{i}"))
        })?;
        write_json(&self.path(scope, "policy.json"), &PolicyCheckpoint::new(&policy, seeds.seed()))?;
        write_curve_csv(&self.path(scope, "policy_curve.csv"), &curve)?;
        let report = ResidualReport {
            lambda: policy.lambda,
            sweep,
            score: None,
        };
        self.update(|sb| {
            if scope == MULTI {
                sb.multi.residual = Some(report);
            } else {
                sb.settings.entry(scope.to_string()).or_default().residual = Some(report);
            }
        })
    }

    /// Residual controllers: one per setting and one shared by all settings.
    pub fn train_ctrl(&self) -> Result<()> {
        let mut sims = Vec::with_capacity(self.cfg.settings.len());
        for tag in self.tags() {
            let sim = self.load_sim(&tag)?;
            self.train_scope(&tag, vec![sim.clone()])?;
            sims.push(sim);
        }
        self.train_scope(MULTI, sims)
    }

    /// Oracle scores of every grid winner and residual policy.
    pub fn score(&self) -> Result<()> {
        let suite = self.cfg.suite()?;
        let (n, seed) = (self.cfg.bench.n_breaths, self.bench_seed());
        let multi_pid = Policy::pid_only(self.grid_winner(MULTI)?);
        let multi_policy = self.load_policy(MULTI)?;
        for lung in &self.cfg.settings {
            let tag = lung.tag();
            log(&format!("score {tag}"));
            let pid = score(&Policy::pid_only(self.grid_winner(&tag)?), lung, &suite, n, seed)?;
            let residual = score(&self.load_policy(&tag)?, lung, &suite, n, seed)?;
            let shared_pid = score(&multi_pid, lung, &suite, n, seed)?.overall;
            let shared = score(&multi_policy, lung, &suite, n, seed)?.overall;
            self.update(|sb| {
                let e = sb.settings.entry(tag.clone()).or_default();
                if let Some(p) = e.pid.as_mut() {
                    p.score = Some(pid);
                }
                if let Some(r) = e.residual.as_mut() {
                    r.score = Some(residual);
                }
                sb.multi.pid_scores.insert(tag.clone(), shared_pid);
                sb.multi.residual_scores.insert(tag, shared);
            })?;
        }
        self.update(|sb| {
            let mean = |m: &BTreeMap<String, f64>| m.values().sum::<f64>() / m.len() as f64;
            sb.multi.pid_mean = Some(mean(&sb.multi.pid_scores));
            sb.multi.residual_mean = Some(mean(&sb.multi.residual_scores));
        })
    }

    /// Head-to-head reports with traces: `<tag>/compare.json` and
    /// `multi/compare_<tag>.json`.
    pub fn compare(&self) -> Result<()> {
        let suite = self.cfg.suite()?;
        let (n, seed) = (self.cfg.bench.n_breaths, self.bench_seed());
        let multi_pid = self.grid_winner(MULTI).ok();
        let multi_policy = self.load_policy(MULTI)?;
        for lung in &self.cfg.settings {
            let tag = lung.tag();
            log(&format!("compare {tag}"));
            let baseline = self.grid_winner(&tag).ok();
            let report = compare_policies(&self.load_policy(&tag)?, baseline.as_ref(), lung, &suite, n, seed)?;
            write_json(&self.path(&tag, "compare.json"), &report)?;
            let report = compare_policies(&multi_policy, multi_pid.as_ref(), lung, &suite, n, seed)?;
            write_json(&self.path(MULTI, &format!("compare_{tag}.json")), &report)?;
        }
        Ok(())
    }

    pub fn run_all(&self) -> Result<Scoreboard> {
        let path = self.scoreboard_path();
        if path.exists() {
            std::fs::remove_file(&path)?;
        }
        self.collect()?;
        self.train_sim()?;
        self.eval_sim()?;
        self.grid_pid()?;
        self.train_ctrl()?;
        self.score()?;
        self.compare()?;
        self.scoreboard()
    }
}

fn log(msg: &str) {
    eprintln!("[ventctl] {msg}");
}

/// Loads the config at `path` (defaults when absent) with an optional seed override.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::MissingArtifact(m) => Error::config(format!("config file not found: {m}")),
            other => other,
        })?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}
