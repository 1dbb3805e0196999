//! Residual controller training by unrolling through learned simulators.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::controller::{residual_control, Controller, ControllerState, PidCoeffs, Policy};
use crate::dataset::padded_history;
use crate::error::{Error, Result};
use crate::nn::{Adam, Bound, Eval, Mlp, Ops, Tape};
use crate::rng::Rng;
use crate::sim::{CurveRow, SimHistory, SimModel};
use crate::waveform::TargetWaveform;

/// Pressures and errors enter the correction network in units of this many cmH2O.
pub const PRESSURE_SCALE: f64 = 10.0;

/// Correction-network inputs: last `history` errors, last `history`
/// pressures, the current target and the phase `t / insp_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub history: usize,
}

impl FeatureSpec {
    pub fn len(&self) -> usize {
        2 * self.history + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Per-breath error and pressure histories feeding the correction network.
#[derive(Debug, Clone)]
pub struct FeatureHistory<S> {
    errors: Vec<S>,
    pressures: Vec<S>,
}

impl<S: Copy> Default for FeatureHistory<S> {
    fn default() -> Self {
        Self {
            errors: Vec::new(),
            pressures: Vec::new(),
        }
    }
}

impl<S: Copy> FeatureHistory<S> {
    /// Records step `t` and returns the feature vector, histories
    /// left-padded with the breath's first sample.
    pub fn features<'n, O: Ops<'n, S = S>>(
        &mut self,
        o: &mut O,
        spec: FeatureSpec,
        pressure: S,
        target: f64,
        phase: f64,
    ) -> Vec<S> {
        let err = o.affine(pressure, -1.0, target);
        self.errors.push(err);
        self.pressures.push(pressure);
        if spec.history == 0 {
            return vec![o.constant(target / PRESSURE_SCALE), o.constant(phase)];
        }
        let t = self.errors.len() - 1;
        let scale = 1.0 / PRESSURE_SCALE;
        let mut out = Vec::with_capacity(spec.len());
        for e in padded_history(&self.errors, t, spec.history - 1) {
            out.push(o.affine(e, scale, 0.0));
        }
        for p in padded_history(&self.pressures, t, spec.history - 1) {
            out.push(o.affine(p, scale, 0.0));
        }
        out.push(o.constant(target / PRESSURE_SCALE));
        out.push(o.constant(phase));
        out
    }
}

/// One closed-loop step of a policy.
#[allow(clippy::too_many_arguments)]
pub fn policy_step<'n, O: Ops<'n>>(
    o: &mut O,
    policy: &Policy,
    correction: Option<Bound<'n>>,
    state: &mut ControllerState<O::S>,
    history: &mut FeatureHistory<O::S>,
    t: usize,
    insp_steps: usize,
    pressure: O::S,
    target: f64,
) -> Result<O::S> {
    let spec = FeatureSpec {
        history: policy.feature_history,
    };
    let phase = t as f64 / insp_steps as f64;
    let feats = history.features(o, spec, pressure, target, phase);
    residual_control(o, state, pressure, target, &feats, policy, correction)
}

/// A [`Policy`] driving a plant step by step.
#[derive(Debug, Clone)]
pub struct PolicyController {
    policy: Policy,
    insp_steps: usize,
    state: ControllerState<f64>,
    history: FeatureHistory<f64>,
}

impl PolicyController {
    pub fn new(policy: Policy, insp_steps: usize) -> Self {
        let state = ControllerState::new(policy.pid.k, 0.0);
        Self {
            policy,
            insp_steps,
            state,
            history: FeatureHistory::default(),
        }
    }
}

impl Controller for PolicyController {
    fn reset(&mut self) {
        self.state = ControllerState::new(self.policy.pid.k, 0.0);
        self.history = FeatureHistory::default();
    }

    fn control(&mut self, t: usize, pressure: f64, target: f64) -> Result<f64> {
        let corr = self.policy.correction.as_ref().map(Bound::frozen);
        policy_step(
            &mut Eval,
            &self.policy,
            corr,
            &mut self.state,
            &mut self.history,
            t,
            self.insp_steps,
            pressure,
            target,
        )
    }
}

/// Result of a simulator unroll.
#[derive(Debug, Clone)]
pub struct Unrolled<S> {
    /// Mean `|p_t - p*_t|` over the inspiratory steps.
    pub loss: S,
    pub pressures: Vec<f64>,
    pub controls: Vec<f64>,
}

/// Closed-loop rollout of `policy` entirely inside `sim`.
pub fn unroll<'n, O: Ops<'n>>(
    o: &mut O,
    policy: &Policy,
    correction: Option<Bound<'n>>,
    sim: &'n SimModel,
    waveform: &TargetWaveform,
    insp_steps: usize,
) -> Result<Unrolled<O::S>> {
    let boot = o.constant(sim.boot);
    let mut plant = SimHistory::new(boot);
    let zero = o.constant(0.0);
    let mut state = ControllerState::new(policy.pid.k, zero);
    let mut history = FeatureHistory::default();
    let mut costs = Vec::with_capacity(insp_steps);
    let mut pressures = Vec::with_capacity(insp_steps);
    let mut controls = Vec::with_capacity(insp_steps);
    for t in 0..insp_steps {
        let p = plant.current_pressure();
        let target = waveform.value(t);
        let err = o.affine(p, 1.0, -target);
        costs.push(o.abs(err));
        pressures.push(o.value(p));
        let u = policy_step(o, policy, correction, &mut state, &mut history, t, insp_steps, p, target)?;
        controls.push(o.value(u));
        if t + 1 < insp_steps {
            let next = plant.advance(o, sim, u)?;
            if !o.value(next).is_finite() {
                return Err(Error::numerical(format!("simulator unroll produced {} at step {}", o.value(next), t + 1)));
            }
        }
    }
    let total = o.sum(&costs);
    let loss = o.affine(total, 1.0 / insp_steps as f64, 0.0);
    Ok(Unrolled {
        loss,
        pressures,
        controls,
    })
}

/// What the controller is trained to track, and on which simulators.
#[derive(Debug, Clone)]
pub struct TrainObjective {
    pub sims: Vec<SimModel>,
    pub waveforms: Vec<TargetWaveform>,
}

impl TrainObjective {
    pub fn validate(&self) -> Result<()> {
        if self.sims.is_empty() || self.waveforms.is_empty() {
            return Err(Error::config("objective needs at least one simulator and one waveform"));
        }
        for s in &self.sims {
            s.validate()?;
        }
        Ok(())
    }

    fn insp_steps(&self) -> usize {
        self.waveforms[0].grid.insp_steps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtrlTrainConfig {
    pub hidden: Vec<usize>,
    pub feature_history: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Candidate correction scales; the one with the best validation loss wins.
    pub lambdas: Vec<f64>,
    /// Half-width of the uniform PIP jitter of the validation waveforms, cmH2O.
    pub val_jitter: f64,
}

impl Default for CtrlTrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            feature_history: 5,
            epochs: 300,
            lr: 1e-3,
            lambdas: vec![0.05, 0.1, 0.2, 0.5],
            val_jitter: 1.0,
        }
    }
}

/// Mean unroll loss of `policy` over every (simulator, waveform) pair.
pub fn objective_loss(policy: &Policy, sims: &[SimModel], waveforms: &[TargetWaveform]) -> Result<f64> {
    let corr = policy.correction.as_ref().map(Bound::frozen);
    let mut total = 0.0;
    for sim in sims {
        for w in waveforms {
            total += unroll(&mut Eval, policy, corr, sim, w, w.grid.insp_steps)?.loss;
        }
    }
    Ok(total / (sims.len() * waveforms.len()) as f64)
}

/// Loss and correction-parameter gradient of the mean objective.
pub fn objective_gradient(
    policy: &Policy,
    sims: &[SimModel],
    waveforms: &[TargetWaveform],
) -> Result<(f64, Vec<f64>)> {
    let net = policy
        .correction
        .as_ref()
        .ok_or_else(|| Error::structural("policy has no correction network to train"))?;
    let mut tape = Tape::new();
    let bound = tape.bind(net);
    let mut terms = Vec::with_capacity(sims.len() * waveforms.len());
    for sim in sims {
        for w in waveforms {
            terms.push(unroll(&mut tape, policy, Some(bound), sim, w, w.grid.insp_steps)?.loss);
        }
    }
    let total = tape.sum(&terms);
    let loss = tape.affine(total, 1.0 / terms.len() as f64, 0.0);
    let value = tape.value(loss);
    if !value.is_finite() {
        return Err(Error::numerical(format!("policy loss is {value}")));
    }
    let grads = tape.backward(loss);
    Ok((value, grads.block(bound.params.unwrap()).to_vec()))
}

/// Validation waveforms: each training waveform with its PIP jittered.
pub fn jittered(waveforms: &[TargetWaveform], jitter: f64, rng: &mut Rng) -> Vec<TargetWaveform> {
    waveforms
        .iter()
        .map(|w| {
            let d = if jitter > 0.0 { rng.random_range(-jitter..jitter) } else { 0.0 };
            w.with_pip((w.pip + d).max(w.peep + 0.5))
        })
        .collect()
}

/// Fresh correction network whose output layer starts at zero, so the
/// untrained policy is exactly its PID.
pub fn init_correction(cfg: &CtrlTrainConfig, rng: &mut Rng) -> Result<Mlp> {
    let mut sizes = vec![FeatureSpec { history: cfg.feature_history }.len()];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    let mut net = Mlp::init(&sizes, rng)?;
    let out = net.output_layer();
    net.params_mut()[out].iter_mut().for_each(|p| *p = 0.0);
    Ok(net)
}

/// Trains the correction with frozen PID `pid` at scale `lambda`. Row 0 of
/// the curve is the untrained policy; the returned policy is the best
/// checkpoint by validation loss.
pub fn train_policy(
    objective: &TrainObjective,
    pid: PidCoeffs,
    cfg: &CtrlTrainConfig,
    lambda: f64,
    rng: &mut Rng,
) -> Result<(Policy, Vec<CurveRow>)> {
    objective.validate()?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::config(format!("lambda must be >= 0, got {lambda}")));
    }
    let mut policy = Policy {
        pid,
        correction: Some(init_correction(cfg, rng)?),
        lambda,
        feature_history: cfg.feature_history,
    };
    policy.validate()?;
    let val_waveforms = jittered(&objective.waveforms, cfg.val_jitter, rng);
    let n_params = policy.correction.as_ref().unwrap().params().len();
    let mut opt = Adam::new(n_params, cfg.lr);
    let mut best = (f64::INFINITY, policy.clone());
    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..=cfg.epochs {
        let (train_loss, grads) = objective_gradient(&policy, &objective.sims, &objective.waveforms)?;
        let val_loss = objective_loss(&policy, &objective.sims, &val_waveforms)?;
        if !val_loss.is_finite() {
            return Err(Error::numerical(format!("policy validation loss diverged at epoch {epoch}")));
        }
        curve.push(CurveRow {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, policy.clone());
        }
        if epoch < cfg.epochs {
            opt.step(policy.correction.as_mut().unwrap().params_mut(), &grads);
        }
    }
    let _ = objective.insp_steps();
    Ok((best.1, curve))
}

/// Outcome of one lambda in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub lambda: f64,
    pub best_val_loss: f64,
}

/// Trains one policy per lambda and keeps the best by validation loss.
pub fn train_policy_sweep(
    objective: &TrainObjective,
    pid: PidCoeffs,
    cfg: &CtrlTrainConfig,
    rng_for: impl Fn(f64) -> Rng,
) -> Result<(Policy, Vec<CurveRow>, Vec<SweepEntry>)> {
    if cfg.lambdas.is_empty() {
        return Err(Error::config("lambda sweep is empty"));
    }
    let mut best: Option<(f64, Policy, Vec<CurveRow>)> = None;
    let mut entries = Vec::with_capacity(cfg.lambdas.len());
    for &lambda in &cfg.lambdas {
        let (policy, curve) = train_policy(objective, pid, cfg, lambda, &mut rng_for(lambda))?;
        let v = curve.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
        entries.push(SweepEntry {
            lambda,
            best_val_loss: v,
        });
        if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
            best = Some((v, policy, curve));
        }
    }
    let (_, policy, curve) = best.unwrap();
    Ok((policy, curve, entries))
}
