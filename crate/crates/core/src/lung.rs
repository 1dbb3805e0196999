//! Synthetic single-compartment lung behind a first-order inlet valve.
//!
//! Alveolar pressure is `volume / C + peep`. Inflow through the valve is
//! proportional to its opening and to the remaining supply head; a small
//! leak drains the lung during inspiration and a large dump valve drains it
//! during expiration. The sensor reads alveolar pressure plus the resistive
//! drop `R * flow` of the inspiratory flow, plus Gaussian noise.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::controller::Controller;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::types::{ControlTrace, PressureTrace, TimeGrid, U_MAX};
use crate::waveform::TargetWaveform;

/// Plant parameters. Units: R in cmH2O/(L/s), C in mL/cmH2O, pressures in
/// cmH2O, flows in L/s, leak coefficients in L/(s·cmH2O).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LungParams {
    pub r: f64,
    pub c: f64,
    pub peep: f64,
    pub p_supply: f64,
    pub q_max: f64,
    pub tau_valve: f64,
    pub k_leak: f64,
    /// Dump-valve coefficient used during expiration.
    pub k_exp: f64,
    pub noise_sigma: f64,
    /// Explicit-Euler sub-steps per control step.
    pub substeps: usize,
}

impl Default for LungParams {
    fn default() -> Self {
        Self {
            r: 5.0,
            c: 50.0,
            peep: 5.0,
            p_supply: 60.0,
            q_max: 2.0,
            tau_valve: 0.08,
            k_leak: 0.005,
            k_exp: 0.4,
            noise_sigma: 0.1,
            substeps: 40,
        }
    }
}

impl LungParams {
    pub fn with_rc(r: f64, c: f64) -> Self {
        Self {
            r,
            c,
            ..Self::default()
        }
    }

    pub fn noise_free(&self) -> Self {
        Self {
            noise_sigma: 0.0,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.r,
            self.c,
            self.peep,
            self.p_supply,
            self.q_max,
            self.tau_valve,
            self.k_leak,
            self.k_exp,
            self.noise_sigma,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("lung parameters must be finite"));
        }
        if self.r <= 0.0 || self.c <= 0.0 || self.q_max <= 0.0 || self.tau_valve <= 0.0 {
            return Err(Error::config("R, C, q_max and tau_valve must be positive"));
        }
        if !(self.p_supply > self.peep && self.peep >= 0.0) {
            return Err(Error::config("need p_supply > peep >= 0"));
        }
        if self.substeps == 0 {
            return Err(Error::config("substeps must be at least 1"));
        }
        if self.k_leak < 0.0 || self.k_exp < 0.0 || self.noise_sigma < 0.0 {
            return Err(Error::config("leak coefficients and noise must be non-negative"));
        }
        Ok(())
    }

    /// Short tag used for artifact directories, e.g. `r5_c50`.
    pub fn tag(&self) -> String {
        format!("r{}_c{}", self.r, self.c)
    }

    /// Upper bound on measured pressure (without noise).
    pub fn pressure_ceiling(&self) -> f64 {
        self.p_supply + self.r * self.q_max
    }
}

/// The six benchmark settings: R in {5, 20, 50} x C in {20, 50}.
pub fn benchmark_settings(base: &LungParams) -> Vec<LungParams> {
    let mut out = Vec::with_capacity(6);
    for r in [5.0, 20.0, 50.0] {
        for c in [20.0, 50.0] {
            out.push(LungParams { r, c, ..*base });
        }
    }
    out
}

/// Hidden plant state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LungState {
    /// mL above functional residual volume.
    pub volume: f64,
    /// Actual valve opening in [0, 1].
    pub valve_pos: f64,
    /// Net flow through the airway resistance, L/s.
    pub last_flow: f64,
}

/// Equilibrium at PEEP with the valve shut.
pub fn reset(_params: &LungParams) -> LungState {
    LungState {
        volume: 0.0,
        valve_pos: 0.0,
        last_flow: 0.0,
    }
}

pub fn alveolar_pressure(state: &LungState, params: &LungParams) -> f64 {
    state.volume / params.c + params.peep
}

/// Sensor reading of `state`.
pub fn observe(state: &LungState, params: &LungParams, rng: &mut Rng) -> f64 {
    alveolar_pressure(state, params) + params.r * state.last_flow + noise(params, rng)
}

fn noise(params: &LungParams, rng: &mut Rng) -> f64 {
    if params.noise_sigma > 0.0 {
        Normal::new(0.0, params.noise_sigma)
            .expect("validated sigma")
            .sample(rng)
    } else {
        0.0
    }
}

/// Inspiratory step under valve command `u`.
pub fn step(
    state: &LungState,
    u: f64,
    params: &LungParams,
    dt: f64,
    rng: &mut Rng,
) -> Result<(LungState, f64)> {
    advance(state, u, params, dt, false, rng)
}

/// Expiratory step: valve commanded shut, dump valve open.
pub fn step_expiratory(
    state: &LungState,
    params: &LungParams,
    dt: f64,
    rng: &mut Rng,
) -> Result<(LungState, f64)> {
    advance(state, 0.0, params, dt, true, rng)
}

fn advance(
    state: &LungState,
    u: f64,
    params: &LungParams,
    dt: f64,
    expiratory: bool,
    rng: &mut Rng,
) -> Result<(LungState, f64)> {
    if !(0.0..=U_MAX).contains(&u) {
        return Err(Error::structural(format!("control {u} outside [0, {U_MAX}]")));
    }
    let h = dt / params.substeps as f64;
    let mut next = *state;
    for _ in 0..params.substeps {
        next = euler(&next, u, params, h, expiratory);
    }
    if !(next.volume.is_finite() && next.last_flow.is_finite()) {
        return Err(Error::numerical(format!(
            "non-finite lung state {next:?}; check lung parameters"
        )));
    }
    let p_meas = observe(&next, params, rng);
    Ok((next, p_meas))
}

fn euler(state: &LungState, u: f64, params: &LungParams, h: f64, expiratory: bool) -> LungState {
    let valve_pos =
        (state.valve_pos + h * (u / U_MAX - state.valve_pos) / params.tau_valve).clamp(0.0, 1.0);
    let p_alv = alveolar_pressure(state, params);
    let q_in = valve_pos * params.q_max * (params.p_supply - p_alv).max(0.0) / params.p_supply;
    let excess = (p_alv - params.peep).max(0.0);
    let q_leak = params.k_leak * excess;
    let q_dump = if expiratory { params.k_exp * excess } else { 0.0 };
    LungState {
        volume: (state.volume + h * 1000.0 * (q_in - q_leak - q_dump)).max(0.0),
        valve_pos,
        last_flow: q_in - q_leak,
    }
}

/// Closed-loop run over one breath per entry of `targets`.
///
/// Sample `t` of the returned traces holds the pressure measured before the
/// control `u_t` is applied. Expiratory controls are forced to zero.
pub fn rollout<C: Controller + ?Sized>(
    controller: &mut C,
    params: &LungParams,
    grid: TimeGrid,
    targets: &[TargetWaveform],
    rng: &mut Rng,
) -> Result<(PressureTrace, ControlTrace)> {
    let n = targets.len() * grid.steps_per_breath;
    let mut pressures = Vec::with_capacity(n);
    let mut controls = Vec::with_capacity(n);
    let mut state = reset(params);
    let mut p = observe(&state, params, rng);
    for target in targets {
        controller.reset();
        for t in 0..grid.steps_per_breath {
            pressures.push(p);
            let (next, p_next) = if t < grid.insp_steps {
                let u = controller.control(t, p, target.value(t))?;
                if !u.is_finite() {
                    return Err(Error::numerical(format!("controller returned {u}")));
                }
                let u = u.clamp(0.0, U_MAX);
                controls.push(u);
                step(&state, u, params, grid.dt, rng)?
            } else {
                controls.push(0.0);
                step_expiratory(&state, params, grid.dt, rng)?
            };
            state = next;
            p = p_next;
        }
    }
    Ok((PressureTrace::new(pressures, grid)?, ControlTrace::new(controls, grid)?))
}

/// Replays a fixed control trace; expiratory entries are ignored.
pub fn replay(
    controls: &ControlTrace,
    params: &LungParams,
    rng: &mut Rng,
) -> Result<(PressureTrace, ControlTrace)> {
    let grid = controls.grid();
    if !controls.len().is_multiple_of(grid.steps_per_breath) {
        return Err(Error::structural("control trace is not a whole number of breaths"));
    }
    let mut player = Replay {
        values: controls.values(),
        grid,
        breath: None,
    };
    let n_breaths = controls.len() / grid.steps_per_breath;
    // targets are unused by the replay controller
    let dummy = TargetWaveform {
        pip: params.peep + 1.0,
        peep: params.peep,
        rise_steps: 1,
        grid,
    };
    rollout(&mut player, params, grid, &vec![dummy; n_breaths], rng)
}

struct Replay<'a> {
    values: &'a [f64],
    grid: TimeGrid,
    breath: Option<usize>,
}

impl Controller for Replay<'_> {
    fn reset(&mut self) {
        self.breath = Some(self.breath.map_or(0, |b| b + 1));
    }

    fn control(&mut self, t: usize, _pressure: f64, _target: f64) -> Result<f64> {
        let b = self.breath.unwrap_or(0);
        Ok(self.values[b * self.grid.steps_per_breath + t])
    }
}

/// Open-loop view of the oracle for one inspiratory phase at a time.
#[derive(Debug, Clone)]
pub struct Oracle {
    pub params: LungParams,
    pub dt: f64,
    state: LungState,
    rng: Rng,
}

impl Oracle {
    pub fn new(params: LungParams, dt: f64, rng: Rng) -> Self {
        Self {
            params,
            dt,
            state: reset(&params),
            rng,
        }
    }

    pub fn reset(&mut self) {
        self.state = reset(&self.params);
    }

    pub fn state(&self) -> &LungState {
        &self.state
    }

    /// Applies `u` and returns the next measured pressure.
    pub fn step(&mut self, u: f64) -> Result<f64> {
        let (s, p) = step(&self.state, u, &self.params, self.dt, &mut self.rng)?;
        self.state = s;
        Ok(p)
    }
}
