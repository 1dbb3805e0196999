//! Learned one-step pressure simulator and the open-loop distance between plants.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::controller::PidCoeffs;
use crate::dataset::{padded_history, target_of, Norm, RegressionSet, WindowSpec};
use crate::error::{Error, Result};
use crate::explore::{sample_perturbations, ExploreConfig, Perturbed};
use crate::lung::{self, LungParams, Oracle};
use crate::nn::{Adam, Bound, Eval, Mlp, Ops, Tape};
use crate::rng::Rng;
use crate::types::TimeGrid;
use crate::waveform::TargetWaveform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    /// Minibatch size; 0 means full batch.
    pub batch_size: usize,
    /// Learning rate decays on a cosine schedule from `lr` to `lr * final_lr_frac`.
    pub final_lr_frac: f64,
}

impl Default for SimTrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            epochs: 40,
            lr: 1e-3,
            batch_size: 256,
            final_lr_frac: 0.01,
        }
    }
}

/// Trained simulator: network, window layout, normalization and the
/// pressure used to seed histories at reset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimModel {
    pub net: Mlp,
    pub spec: WindowSpec,
    pub norm: Norm,
    pub boot: f64,
}

impl SimModel {
    pub fn validate(&self) -> Result<()> {
        let n = self.spec.n_features();
        if self.net.input_size() != n || self.net.output_size() != 1 {
            return Err(Error::structural(format!(
                "simulator network {:?} does not take {n} features",
                self.net.sizes()
            )));
        }
        if self.norm.feature_mean.len() != n || self.norm.feature_scale.len() != n {
            return Err(Error::structural("normalization does not match feature count"));
        }
        Ok(())
    }
}

/// Next pressure from `controls = u_{t-h_c..=t}` and `pressures = p_{t-h_p..=t}`.
pub fn sim_step<'n, O: Ops<'n>>(
    o: &mut O,
    model: &'n SimModel,
    controls: &[O::S],
    pressures: &[O::S],
) -> Result<O::S> {
    let spec = &model.spec;
    if controls.len() != spec.h_c + 1 || pressures.len() != spec.h_p + 1 {
        return Err(Error::structural(format!(
            "simulator expects {} controls and {} pressures, got {} and {}",
            spec.h_c + 1,
            spec.h_p + 1,
            controls.len(),
            pressures.len()
        )));
    }
    let norm = &model.norm;
    let x: Vec<O::S> = controls
        .iter()
        .chain(pressures)
        .zip(norm.feature_mean.iter().zip(&norm.feature_scale))
        .map(|(&v, (m, s))| o.affine(v, 1.0 / s, -m / s))
        .collect();
    let z = o.mlp(Bound::frozen(&model.net), &x)?;
    let y = o.affine(z, norm.target_scale, norm.target_mean);
    Ok(if spec.delta {
        o.add(pressures[spec.h_p], y)
    } else {
        y
    })
}

/// Control and pressure histories of a simulator rollout, padded like the
/// training windows.
#[derive(Debug, Clone)]
pub struct SimHistory<S> {
    pub controls: Vec<S>,
    pub pressures: Vec<S>,
}

impl<S: Copy> SimHistory<S> {
    pub fn new(boot: S) -> Self {
        Self {
            controls: Vec::new(),
            pressures: vec![boot],
        }
    }

    pub fn current_pressure(&self) -> S {
        *self.pressures.last().unwrap()
    }

    /// Records `u_t` for the newest pressure and predicts `p_{t+1}`.
    pub fn advance<'n, O: Ops<'n, S = S>>(
        &mut self,
        o: &mut O,
        model: &'n SimModel,
        u: S,
    ) -> Result<S> {
        self.controls.push(u);
        let t = self.pressures.len() - 1;
        let uc = padded_history(&self.controls, t, model.spec.h_c);
        let pc = padded_history(&self.pressures, t, model.spec.h_p);
        let next = sim_step(o, model, &uc, &pc)?;
        self.pressures.push(next);
        Ok(next)
    }
}

/// Row of a training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Fits the simulator by minibatch Adam on mean squared error of the
/// normalized targets; keeps the epoch with the lowest validation loss.
/// Reported losses are mean squared errors in cmH2O².
pub fn train_sim(
    train: &RegressionSet,
    val: &RegressionSet,
    cfg: &SimTrainConfig,
    boot: f64,
    rng: &mut Rng,
) -> Result<(SimModel, Vec<CurveRow>)> {
    if train.is_empty() {
        return Err(Error::structural("empty training split"));
    }
    if cfg.epochs == 0 || !(cfg.lr.is_finite() && cfg.lr > 0.0) {
        return Err(Error::config("simulator training needs epochs >= 1 and lr > 0"));
    }
    let spec = train.spec;
    let mut sizes = vec![spec.n_features()];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    let mut net = Mlp::init(&sizes, rng)?;
    let (xs, ys) = train.normalized();
    let val_x: Vec<Vec<f64>> = val
        .windows
        .iter()
        .map(|w| train.norm.normalize_features(&w.features().collect::<Vec<_>>()))
        .collect();
    let val_y: Vec<f64> = val
        .windows
        .iter()
        .map(|w| train.norm.normalize_target(target_of(w, &spec)))
        .collect();
    let to_cm2 = train.norm.target_scale * train.norm.target_scale;
    let batch = if cfg.batch_size == 0 { xs.len() } else { cfg.batch_size.min(xs.len()) };
    let mut opt = Adam::new(net.params().len(), cfg.lr);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut best: Option<(f64, Mlp)> = None;
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        opt.lr = cosine_lr(cfg.lr, cfg.final_lr_frac, epoch - 1, cfg.epochs);
        order.shuffle(rng);
        let mut sse = 0.0;
        for chunk in order.chunks(batch) {
            let (loss, grads) = batch_gradient(&net, chunk, &xs, &ys)?;
            sse += loss * chunk.len() as f64;
            opt.step(net.params_mut(), &grads);
        }
        let train_loss = sse / xs.len() as f64 * to_cm2;
        let val_loss = if val_x.is_empty() {
            train_loss
        } else {
            mse(&net, &val_x, &val_y)? * to_cm2
        };
        if !(train_loss.is_finite() && val_loss.is_finite()) {
            return Err(Error::numerical(format!(
                "simulator training diverged at epoch {epoch}: train {train_loss}, val {val_loss}"
            )));
        }
        curve.push(CurveRow {
            epoch,
            train_loss,
            val_loss,
        });
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, net.clone()));
        }
    }
    let (_, net) = best.expect("at least one epoch");
    Ok((
        SimModel {
            net,
            spec,
            norm: train.norm.clone(),
            boot,
        },
        curve,
    ))
}

/// Cosine interpolation from `lr` at epoch 0 to `lr * final_frac` at the last epoch.
pub fn cosine_lr(lr: f64, final_frac: f64, epoch: usize, epochs: usize) -> f64 {
    if epochs <= 1 {
        return lr;
    }
    let progress = epoch as f64 / (epochs - 1) as f64;
    let lo = lr * final_frac;
    lo + 0.5 * (lr - lo) * (1.0 + (std::f64::consts::PI * progress).cos())
}

fn batch_gradient(
    net: &Mlp,
    idx: &[usize],
    xs: &[Vec<f64>],
    ys: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let bound = tape.bind(net);
    let mut terms = Vec::with_capacity(idx.len());
    for &i in idx {
        let x: Vec<_> = xs[i].iter().map(|&v| tape.var(v)).collect();
        let y = tape.mlp(bound, &x)?;
        let r = tape.affine(y, 1.0, -ys[i]);
        terms.push(tape.mul(r, r));
    }
    let total = tape.sum(&terms);
    let loss = tape.affine(total, 1.0 / idx.len() as f64, 0.0);
    let value = tape.value(loss);
    if !value.is_finite() {
        return Err(Error::numerical(format!("simulator batch loss is {value}")));
    }
    let grads = tape.backward(loss);
    Ok((value, grads.block(bound.params.unwrap()).to_vec()))
}

fn mse(net: &Mlp, xs: &[Vec<f64>], ys: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let d = net.forward_scalar(x)? - y;
        s += d * d;
    }
    Ok(s / xs.len() as f64)
}

/// Validation error of a model in cmH2O: `(mse, rmse)` of one-step predictions.
pub fn one_step_error(model: &SimModel, set: &RegressionSet) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(Error::structural("empty regression set"));
    }
    let mut s = 0.0;
    for w in &set.windows {
        let p = sim_step(&mut Eval, model, &w.controls, &w.pressures)?;
        s += (p - w.label) * (p - w.label);
    }
    let mse = s / set.len() as f64;
    Ok((mse, mse.sqrt()))
}

/// Single-input single-output plant driven open loop.
pub trait Plant {
    fn reset(&mut self);
    /// Applies `u` and returns the next pressure.
    fn step(&mut self, u: f64) -> Result<f64>;
}

impl Plant for Oracle {
    fn reset(&mut self) {
        Oracle::reset(self)
    }

    fn step(&mut self, u: f64) -> Result<f64> {
        Oracle::step(self, u)
    }
}

/// [`SimModel`] as a stateful plant.
#[derive(Debug, Clone)]
pub struct SimPlant<'a> {
    model: &'a SimModel,
    history: SimHistory<f64>,
}

impl<'a> SimPlant<'a> {
    pub fn new(model: &'a SimModel) -> Self {
        Self {
            model,
            history: SimHistory::new(model.boot),
        }
    }
}

impl Plant for SimPlant<'_> {
    fn reset(&mut self) {
        self.history = SimHistory::new(self.model.boot);
    }

    fn step(&mut self, u: f64) -> Result<f64> {
        self.history.advance(&mut Eval, self.model, u)
    }
}

/// Plant whose output never changes.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPlant(pub f64);

impl Plant for ConstantPlant {
    fn reset(&mut self) {}

    fn step(&mut self, _u: f64) -> Result<f64> {
        Ok(self.0)
    }
}

/// Distribution over open-loop control sequences.
pub trait ControlDistribution {
    fn sample(&mut self, horizon: usize, rng: &mut Rng) -> Result<Vec<f64>>;
}

/// Control sequences the exploration policy produces on a noise-free
/// oracle: perturbed base PID tracking a random suite waveform.
#[derive(Debug, Clone)]
pub struct ExplorationControls {
    pub lung: LungParams,
    pub cfg: ExploreConfig,
    pub suite: Vec<TargetWaveform>,
    pub grid: TimeGrid,
}

impl ControlDistribution for ExplorationControls {
    fn sample(&mut self, horizon: usize, rng: &mut Rng) -> Result<Vec<f64>> {
        if horizon > self.grid.insp_steps {
            return Err(Error::config("horizon exceeds the inspiratory phase"));
        }
        let perturbation = sample_perturbations(&self.cfg, 1, self.grid, rng);
        let target = self.suite[rng.random_range(0..self.suite.len())];
        let mut ctrl = Perturbed::new(self.cfg.base_pid, &perturbation);
        let lung = self.lung.noise_free();
        let (_, controls) = lung::rollout(&mut ctrl, &lung, self.grid, &[target], rng)?;
        Ok(controls.values()[..horizon].to_vec())
    }
}

/// Fixed list of sequences, cycled.
#[derive(Debug, Clone)]
pub struct FixedControls {
    pub sequences: Vec<Vec<f64>>,
    next: usize,
}

impl FixedControls {
    pub fn new(sequences: Vec<Vec<f64>>) -> Self {
        Self { sequences, next: 0 }
    }
}

impl ControlDistribution for FixedControls {
    fn sample(&mut self, horizon: usize, _rng: &mut Rng) -> Result<Vec<f64>> {
        let s = &self.sequences[self.next % self.sequences.len()];
        self.next += 1;
        if s.len() < horizon {
            return Err(Error::structural("fixed control sequence shorter than horizon"));
        }
        Ok(s[..horizon].to_vec())
    }
}

/// Monte-Carlo estimate of `E_u sum_{t=1..T} |p_t^1 - p_t^2|`, both plants
/// evolving from reset under the same control sequence.
pub fn open_loop_distance(
    f1: &mut dyn Plant,
    f2: &mut dyn Plant,
    dist: &mut dyn ControlDistribution,
    n_samples: usize,
    horizon: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::config("open-loop distance needs at least one sample"));
    }
    let mut total = 0.0;
    for _ in 0..n_samples {
        let us = dist.sample(horizon, rng)?;
        f1.reset();
        f2.reset();
        for &u in &us {
            total += (f1.step(u)? - f2.step(u)?).abs();
        }
    }
    Ok(total / n_samples as f64)
}

/// Default base PID used when none is configured.
pub fn default_explorer(grid: TimeGrid) -> PidCoeffs {
    ExploreConfig::default_for(grid).base_pid
}
