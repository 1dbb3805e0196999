//! L1 tracking score on the oracle, exhaustive PID grid search, and
//! head-to-head comparison reports.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{Controller, PidCoeffs, Policy};
use crate::error::{Error, Result};
use crate::lung::{rollout, LungParams};
use crate::policy::PolicyController;
use crate::rng::SeedStream;
use crate::waveform::TargetWaveform;

/// Mean inspiratory L1 error per waveform, cmH2O, and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub per_waveform: Vec<f64>,
    pub overall: f64,
    pub n_breaths: usize,
}

impl Score {
    pub fn from_per_waveform(per_waveform: Vec<f64>, n_breaths: usize) -> Result<Self> {
        if per_waveform.is_empty() {
            return Err(Error::structural("score over an empty suite"));
        }
        let overall = per_waveform.iter().sum::<f64>() / per_waveform.len() as f64;
        Ok(Self {
            per_waveform,
            overall,
            n_breaths,
        })
    }
}

/// Closed-loop oracle traces behind one waveform's score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformTrace {
    pub pip: f64,
    pub target: Vec<f64>,
    pub pressures: Vec<f64>,
    pub controls: Vec<f64>,
}

/// Mean over breaths of the per-breath mean inspiratory `|p - p*|`.
pub fn breath_l1(pressures: &[f64], waveform: &TargetWaveform) -> Result<f64> {
    let g = waveform.grid;
    if pressures.is_empty() || !pressures.len().is_multiple_of(g.steps_per_breath) {
        return Err(Error::structural(format!(
            "trace of {} samples is not whole breaths of {}",
            pressures.len(),
            g.steps_per_breath
        )));
    }
    let target = waveform.inspiratory();
    let per_breath: Vec<f64> = pressures
        .chunks(g.steps_per_breath)
        .map(|b| b.iter().zip(&target).map(|(p, s)| (p - s).abs()).sum::<f64>() / g.insp_steps as f64)
        .collect();
    Ok(per_breath.iter().sum::<f64>() / per_breath.len() as f64)
}

/// Recomputes a score from stored traces.
pub fn score_traces(traces: &[WaveformTrace], suite: &[TargetWaveform], n_breaths: usize) -> Result<Score> {
    if traces.len() != suite.len() {
        return Err(Error::structural(format!("{} traces for {} waveforms", traces.len(), suite.len())));
    }
    let per = traces
        .iter()
        .zip(suite)
        .map(|(tr, w)| breath_l1(&tr.pressures, w))
        .collect::<Result<Vec<_>>>()?;
    Score::from_per_waveform(per, n_breaths)
}

/// Runs `n_breaths` consecutive breaths of each waveform on the oracle with
/// a fresh controller from `make`. Waveform `i` draws noise from stream
/// `score/{i}` of `seed`.
pub fn evaluate<C, F>(
    make: F,
    lung: &LungParams,
    suite: &[TargetWaveform],
    n_breaths: usize,
    seed: u64,
) -> Result<(Score, Vec<WaveformTrace>)>
where
    C: Controller,
    F: Fn() -> C + Sync,
{
    if n_breaths == 0 {
        return Err(Error::config("n_breaths must be >= 1"));
    }
    lung.validate()?;
    let seeds = SeedStream::new(seed);
    let traces = suite
        .par_iter()
        .enumerate()
        .map(|(i, w)| {
            let mut rng = seeds.rng(&format!("score/{i}"));
            let mut ctrl = make();
            let targets = vec![*w; n_breaths];
            let (p, u) = rollout(&mut ctrl, lung, w.grid, &targets, &mut rng)?;
            Ok(WaveformTrace {
                pip: w.pip,
                target: w.inspiratory(),
                pressures: p.values().to_vec(),
                controls: u.values().to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let score = score_traces(&traces, suite, n_breaths)?;
    Ok((score, traces))
}

pub fn score_policy(
    policy: &Policy,
    lung: &LungParams,
    suite: &[TargetWaveform],
    n_breaths: usize,
    seed: u64,
) -> Result<(Score, Vec<WaveformTrace>)> {
    policy.validate()?;
    let insp = suite.first().map_or(1, |w| w.grid.insp_steps);
    evaluate(|| PolicyController::new(policy.clone(), insp), lung, suite, n_breaths, seed)
}

pub fn score(policy: &Policy, lung: &LungParams, suite: &[TargetWaveform], n_breaths: usize, seed: u64) -> Result<Score> {
    Ok(score_policy(policy, lung, suite, n_breaths, seed)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub p: Vec<f64>,
    pub i: Vec<f64>,
    pub d: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            p: vec![0.0, 0.5, 1.0, 2.0, 4.0, 8.0],
            i: vec![0.0, 0.25, 0.5, 1.0, 2.0],
            d: vec![0.0, 0.1, 0.5, 1.0],
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p.is_empty() || self.i.is_empty() || self.d.is_empty() {
            return Err(Error::config("PID grid lists must be nonempty"));
        }
        if self.p.iter().chain(&self.i).chain(&self.d).any(|v| !v.is_finite()) {
            return Err(Error::config("PID grid values must be finite"));
        }
        Ok(())
    }

    /// Every (P, I, D) triple in lexicographic list order.
    pub fn triples(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.p.len() * self.i.len() * self.d.len());
        for &p in &self.p {
            for &i in &self.i {
                for &d in &self.d {
                    out.push((p, i, d));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub p: f64,
    pub i: f64,
    pub d: f64,
    pub score: f64,
}

fn entry_order(a: &GridEntry, b: &GridEntry) -> Ordering {
    a.score
        .total_cmp(&b.score)
        .then(a.p.total_cmp(&b.p))
        .then(a.i.total_cmp(&b.i))
        .then(a.d.total_cmp(&b.d))
}

/// Lowest score, ties broken by (P, I, D). Independent of entry order.
pub fn argmin_grid(entries: &[GridEntry]) -> Option<GridEntry> {
    entries.iter().copied().min_by(entry_order)
}

/// Scores every triple with `eval` and returns the leaderboard in
/// enumeration order.
pub fn grid_scores<F>(grid: &GridSpec, eval: F) -> Result<Vec<GridEntry>>
where
    F: Fn(f64, f64, f64) -> Result<f64> + Sync,
{
    grid.validate()?;
    grid.triples()
        .into_par_iter()
        .map(|(p, i, d)| Ok(GridEntry { p, i, d, score: eval(p, i, d)? }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub winner: PidCoeffs,
    pub score: f64,
    pub leaderboard: Vec<GridEntry>,
}

fn winner_of(leaderboard: Vec<GridEntry>, k: usize) -> Result<GridResult> {
    let best = argmin_grid(&leaderboard).ok_or_else(|| Error::config("empty PID grid"))?;
    Ok(GridResult {
        winner: PidCoeffs::new(best.p, best.i, best.d, k)?,
        score: best.score,
        leaderboard,
    })
}

/// Exhaustive PID search on the oracle. `k` is the integral window.
pub fn grid_search_pid(
    lung: &LungParams,
    suite: &[TargetWaveform],
    grid: &GridSpec,
    k: usize,
    n_breaths: usize,
    seed: u64,
) -> Result<GridResult> {
    let board = grid_scores(grid, |p, i, d| {
        let policy = Policy::pid_only(PidCoeffs::new(p, i, d, k)?);
        Ok(score(&policy, lung, suite, n_breaths, seed)?.overall)
    })?;
    winner_of(board, k)
}

/// The single triple with the lowest mean score over several leaderboards
/// computed on the same grid.
pub fn best_over_all(leaderboards: &[Vec<GridEntry>], k: usize) -> Result<GridResult> {
    let first = leaderboards.first().ok_or_else(|| Error::config("no leaderboards"))?;
    let mut mean = first.clone();
    for board in &leaderboards[1..] {
        if board.len() != first.len() {
            return Err(Error::structural("leaderboards from different grids"));
        }
        for (m, e) in mean.iter_mut().zip(board) {
            if (m.p, m.i, m.d) != (e.p, e.i, e.d) {
                return Err(Error::structural("leaderboards from different grids"));
            }
            m.score += e.score;
        }
    }
    let n = leaderboards.len() as f64;
    mean.iter_mut().for_each(|m| m.score /= n);
    winner_of(mean, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub lung: String,
    pub seed: u64,
    pub n_breaths: usize,
    pub baseline: PidCoeffs,
    pub baseline_score: Score,
    pub policy_score: Score,
    /// `(baseline - policy) / baseline` on the overall scores.
    pub relative_improvement: f64,
    pub baseline_traces: Vec<WaveformTrace>,
    pub policy_traces: Vec<WaveformTrace>,
}

/// Scores `policy` against the grid-search PID `baseline` on identical noise.
pub fn compare(
    policy: &Policy,
    baseline: Option<&PidCoeffs>,
    lung: &LungParams,
    suite: &[TargetWaveform],
    n_breaths: usize,
    seed: u64,
) -> Result<CompareReport> {
    let baseline = *baseline.ok_or_else(|| Error::structural(format!("no grid-search baseline for {}", lung.tag())))?;
    let (baseline_score, baseline_traces) = score_policy(&Policy::pid_only(baseline), lung, suite, n_breaths, seed)?;
    let (policy_score, policy_traces) = score_policy(policy, lung, suite, n_breaths, seed)?;
    let relative_improvement = if baseline_score.overall > 0.0 {
        (baseline_score.overall - policy_score.overall) / baseline_score.overall
    } else {
        0.0
    };
    Ok(CompareReport {
        lung: lung.tag(),
        seed,
        n_breaths,
        baseline,
        baseline_score,
        policy_score,
        relative_improvement,
        baseline_traces,
        policy_traces,
    })
}
