//! Safe exploration around a known-good PID.
//!
//! Each breath adds one of two perturbation shapes to the PID output:
//! a boundary kick at inhalation start decaying linearly to zero, or a
//! triangular bump inside the inhalation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::controller::{Controller, Pid, PidCoeffs};
use crate::error::{Error, Result};
use crate::lung::{self, LungParams};
use crate::rng::Rng;
use crate::types::{ControlTrace, PressureTrace, TimeGrid, U_MAX};
use crate::waveform::TargetWaveform;

/// Closed interval `[min, max]` a parameter is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..self.max)
        } else {
            self.min
        }
    }

    fn valid(&self) -> bool {
        self.min.is_finite() && self.max.is_finite() && 0.0 <= self.min && self.min <= self.max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExploreConfig {
    pub base_pid: PidCoeffs,
    /// Boundary kick amplitude.
    pub c_a: Range,
    /// Boundary decay duration, steps.
    pub t_a: Range,
    /// Triangle peak amplitude.
    pub c_b: Range,
    /// Triangle interval endpoints, step indices.
    pub t_b: Range,
    /// Probability of the boundary policy.
    pub p_a: f64,
}

impl ExploreConfig {
    pub fn default_for(grid: TimeGrid) -> Self {
        Self {
            base_pid: PidCoeffs {
                alpha: 2.0,
                beta: 0.5,
                gamma: 0.0,
                k: grid.insp_steps,
            },
            c_a: Range::new(0.0, 40.0),
            t_a: Range::new(5.0, 20.0),
            c_b: Range::new(0.0, 30.0),
            t_b: Range::new(5.0, 35.0),
            p_a: 0.5,
        }
    }

    pub fn validate(&self, grid: TimeGrid) -> Result<()> {
        self.base_pid.validate()?;
        for (name, r) in [("c_a", self.c_a), ("t_a", self.t_a), ("c_b", self.c_b), ("t_b", self.t_b)] {
            if !r.valid() {
                return Err(Error::config(format!("{name} range {r:?} is not a nonnegative interval")));
            }
        }
        let horizon = grid.insp_steps as f64;
        if self.t_a.max > horizon || self.t_b.max > horizon {
            return Err(Error::config("exploration time ranges exceed the inspiratory phase"));
        }
        if self.t_a.min <= 0.0 {
            return Err(Error::config("boundary decay duration must be positive"));
        }
        if !(0.0..=1.0).contains(&self.p_a) {
            return Err(Error::config(format!("p_a must lie in [0, 1], got {}", self.p_a)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PerturbationKind {
    Boundary,
    Triangular,
}

/// `c * max(0, 1 - t/d)` over `n` steps.
pub fn boundary_shape(c: f64, d: f64, n: usize) -> Vec<f64> {
    (0..n).map(|t| c * (1.0 - t as f64 / d).max(0.0)).collect()
}

/// Triangle rising from 0 at `s` to `c` at the midpoint, back to 0 at `e`.
pub fn triangle_shape(c: f64, s: f64, e: f64, n: usize) -> Vec<f64> {
    let mid = 0.5 * (s + e);
    (0..n)
        .map(|t| {
            let t = t as f64;
            if t <= s || t >= e {
                0.0
            } else if t <= mid {
                c * (t - s) / (mid - s)
            } else {
                c * (e - t) / (e - mid)
            }
        })
        .collect()
}

pub fn boundary_perturbation(cfg: &ExploreConfig, n: usize, rng: &mut Rng) -> Vec<f64> {
    let c = cfg.c_a.sample(rng);
    let d = cfg.t_a.sample(rng);
    boundary_shape(c, d, n)
}

pub fn triangular_perturbation(cfg: &ExploreConfig, n: usize, rng: &mut Rng) -> Vec<f64> {
    let c = cfg.c_b.sample(rng);
    let (s, e) = loop {
        let a = cfg.t_b.sample(rng);
        let b = cfg.t_b.sample(rng);
        if a != b || cfg.t_b.max <= cfg.t_b.min {
            break (a.min(b), a.max(b));
        }
    };
    if e <= s {
        return vec![0.0; n];
    }
    triangle_shape(c, s, e, n)
}

/// Output of a data-collection run.
#[derive(Debug, Clone)]
pub struct Collection {
    pub pressures: PressureTrace,
    pub controls: ControlTrace,
    pub kinds: Vec<PerturbationKind>,
    pub targets: Vec<TargetWaveform>,
}

impl Collection {
    pub fn boundary_count(&self) -> usize {
        self.kinds.iter().filter(|k| **k == PerturbationKind::Boundary).count()
    }
}

/// Draws one perturbation per breath.
pub fn sample_perturbations(
    cfg: &ExploreConfig,
    n_breaths: usize,
    grid: TimeGrid,
    rng: &mut Rng,
) -> Vec<(PerturbationKind, Vec<f64>)> {
    (0..n_breaths)
        .map(|_| {
            if rng.random_bool(cfg.p_a) {
                (PerturbationKind::Boundary, boundary_perturbation(cfg, grid.insp_steps, rng))
            } else {
                (PerturbationKind::Triangular, triangular_perturbation(cfg, grid.insp_steps, rng))
            }
        })
        .collect()
}

/// PID with a per-breath additive perturbation, clamped to the valve range.
pub struct Perturbed<'a> {
    pid: Pid,
    perturbations: &'a [(PerturbationKind, Vec<f64>)],
    breath: Option<usize>,
}

impl<'a> Perturbed<'a> {
    pub fn new(base: PidCoeffs, perturbations: &'a [(PerturbationKind, Vec<f64>)]) -> Self {
        Self {
            pid: Pid::new(base),
            perturbations,
            breath: None,
        }
    }
}

impl Controller for Perturbed<'_> {
    fn reset(&mut self) {
        self.pid.reset();
        self.breath = Some(self.breath.map_or(0, |b| b + 1));
    }

    fn control(&mut self, t: usize, pressure: f64, target: f64) -> Result<f64> {
        let u = self.pid.control(t, pressure, target)?;
        let b = self.breath.unwrap_or(0);
        let extra = self
            .perturbations
            .get(b)
            .and_then(|(_, v)| v.get(t))
            .copied()
            .unwrap_or(0.0);
        Ok((u + extra).clamp(0.0, U_MAX))
    }
}

/// Runs the perturbed PID on the oracle for `n_breaths`, cycling through
/// `suite` for the per-breath target.
pub fn collect(
    lung: &LungParams,
    cfg: &ExploreConfig,
    suite: &[TargetWaveform],
    n_breaths: usize,
    grid: TimeGrid,
    rng: &mut Rng,
) -> Result<Collection> {
    if n_breaths == 0 {
        return Err(Error::config("collect needs at least one breath"));
    }
    if suite.is_empty() {
        return Err(Error::config("collect needs at least one target waveform"));
    }
    cfg.validate(grid)?;
    lung.validate()?;
    let perturbations = sample_perturbations(cfg, n_breaths, grid, rng);
    let targets: Vec<TargetWaveform> = (0..n_breaths).map(|b| suite[b % suite.len()]).collect();
    let mut ctrl = Perturbed::new(cfg.base_pid, &perturbations);
    let (pressures, controls) = lung::rollout(&mut ctrl, lung, grid, &targets, rng)?;
    Ok(Collection {
        pressures,
        controls,
        kinds: perturbations.into_iter().map(|(k, _)| k).collect(),
        targets,
    })
}
