//! PID, generic linear error feedback, and the residual PID + network policy.
//!
//! Errors are `target - measured`, so positive gains open the valve when
//! pressure is below target.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Bound, Eval, Mlp, Ops};
use crate::types::U_MAX;

/// Closed-loop valve controller driven one inspiratory step at a time.
pub trait Controller {
    /// Start of a new breath.
    fn reset(&mut self);
    /// Valve command for inspiratory step `t`, given the pressure just measured.
    fn control(&mut self, t: usize, pressure: f64, target: f64) -> Result<f64>;
}

/// PID gains. `k` is the number of past errors in the integral window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidCoeffs {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub k: usize,
}

impl PidCoeffs {
    pub fn new(alpha: f64, beta: f64, gamma: f64, k: usize) -> Result<Self> {
        let c = Self {
            alpha,
            beta,
            gamma,
            k,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.beta.is_finite() && self.gamma.is_finite()) {
            return Err(Error::config("PID gains must be finite"));
        }
        if self.k == 0 {
            return Err(Error::config("PID integral window k must be at least 1"));
        }
        Ok(())
    }

    /// Equivalent per-lag coefficients of the linear error-feedback form.
    pub fn as_linear(&self) -> LinearFeedback {
        let mut coeffs = vec![self.beta; self.k + 1];
        coeffs[0] += self.alpha + self.gamma;
        coeffs[1] -= self.gamma;
        LinearFeedback { coeffs }
    }
}

/// Error history of one breath: the `k` most recent past errors, newest first.
#[derive(Debug, Clone)]
pub struct ControllerState<S> {
    past: VecDeque<S>,
    step: usize,
}

impl<S: Copy> ControllerState<S> {
    pub fn new(k: usize, zero: S) -> Self {
        Self {
            past: std::iter::repeat_n(zero, k).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn buffer_len(&self) -> usize {
        self.past.len()
    }

    fn push(&mut self, err: S) {
        self.past.pop_back();
        self.past.push_front(err);
        self.step += 1;
    }
}

/// PID output before clamping; advances the error history.
pub fn pid_raw<'n, O: Ops<'n>>(
    o: &mut O,
    state: &mut ControllerState<O::S>,
    pressure: O::S,
    target: f64,
    c: &PidCoeffs,
) -> O::S {
    let err = o.affine(pressure, -1.0, target);
    let prev = state.past[0];
    let mut window = Vec::with_capacity(state.past.len() + 1);
    window.push(err);
    window.extend(state.past.iter().copied());
    let integral = o.sum(&window);
    let diff = o.sub(err, prev);
    let p = o.affine(err, c.alpha, 0.0);
    let i = o.affine(integral, c.beta, 0.0);
    let d = o.affine(diff, c.gamma, 0.0);
    let pi = o.add(p, i);
    let u = o.add(pi, d);
    state.push(err);
    u
}

/// PID output clamped to the valve range.
pub fn pid_control<'n, O: Ops<'n>>(
    o: &mut O,
    state: &mut ControllerState<O::S>,
    pressure: O::S,
    target: f64,
    c: &PidCoeffs,
) -> O::S {
    let u = pid_raw(o, state, pressure, target, c);
    o.clamp(u, 0.0, U_MAX)
}

/// Residual policy: PID plus a bounded, lambda-scaled network correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub pid: PidCoeffs,
    pub correction: Option<Mlp>,
    pub lambda: f64,
    /// Length of the error and pressure histories fed to the correction.
    pub feature_history: usize,
}

impl Policy {
    pub fn pid_only(pid: PidCoeffs) -> Self {
        Self {
            pid,
            correction: None,
            lambda: 0.0,
            feature_history: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pid.validate()?;
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if let Some(net) = &self.correction {
            if net.input_size() != 2 * self.feature_history + 2 || net.output_size() != 1 {
                return Err(Error::config(format!(
                    "correction network {:?} does not match feature history {}",
                    net.sizes(),
                    self.feature_history
                )));
            }
        }
        Ok(())
    }
}

/// One residual control step. `correction` is the bound correction network
/// (absent for a pure PID policy).
pub fn residual_control<'n, O: Ops<'n>>(
    o: &mut O,
    state: &mut ControllerState<O::S>,
    pressure: O::S,
    target: f64,
    features: &[O::S],
    policy: &Policy,
    correction: Option<Bound<'n>>,
) -> Result<O::S> {
    let u_pid = pid_control(o, state, pressure, target, &policy.pid);
    let net = match correction {
        Some(net) if policy.lambda > 0.0 => net,
        Some(net) => {
            net.net.check_input(features.len())?;
            return Ok(u_pid);
        }
        None => return Ok(u_pid),
    };
    let y = o.mlp(net, features)?;
    let bounded = o.tanh(y);
    let bound = policy.lambda * U_MAX / 2.0;
    let delta = o.affine(bounded, bound, 0.0);
    let u = o.add(u_pid, delta);
    let (lo, hi) = within(o.value(u_pid), bound);
    Ok(o.clamp(u, lo.max(0.0), hi.min(U_MAX)))
}

/// Widest interval of floats `x` around `a` with `|x - a| <= d` as computed
/// in floating point; `a + d` alone can round half an ulp past the bound.
fn within(a: f64, d: f64) -> (f64, f64) {
    let mut hi = a + d;
    while hi - a > d {
        hi = hi.next_down();
    }
    let mut lo = a - d;
    while a - lo > d {
        lo = lo.next_up();
    }
    (lo, hi)
}

/// Pure PID controller on `f64`.
#[derive(Debug, Clone)]
pub struct Pid {
    coeffs: PidCoeffs,
    state: ControllerState<f64>,
}

impl Pid {
    pub fn new(coeffs: PidCoeffs) -> Self {
        Self {
            coeffs,
            state: ControllerState::new(coeffs.k, 0.0),
        }
    }

    pub fn coeffs(&self) -> &PidCoeffs {
        &self.coeffs
    }
}

impl Controller for Pid {
    fn reset(&mut self) {
        self.state = ControllerState::new(self.coeffs.k, 0.0);
    }

    fn control(&mut self, _t: usize, pressure: f64, target: f64) -> Result<f64> {
        Ok(pid_control(&mut Eval, &mut self.state, pressure, target, &self.coeffs))
    }
}

/// `u_t = sum_i coeffs[i] * err_{t-i}`, clamped to the valve range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFeedback {
    pub coeffs: Vec<f64>,
}

impl LinearFeedback {
    /// Control from an error history given newest first; missing lags count as zero.
    pub fn control(&self, errors_newest_first: &[f64]) -> f64 {
        let u: f64 = self
            .coeffs
            .iter()
            .zip(errors_newest_first)
            .map(|(a, e)| a * e)
            .sum();
        u.clamp(0.0, U_MAX)
    }
}

/// Controller that always commands zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct Closed;

impl Controller for Closed {
    fn reset(&mut self) {}

    fn control(&mut self, _t: usize, _pressure: f64, _target: f64) -> Result<f64> {
        Ok(0.0)
    }
}
