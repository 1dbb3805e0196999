//! Supervised one-step-ahead regression windows cut from inspiratory episodes.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::types::Episode;

/// History lengths and target encoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub h_c: usize,
    pub h_p: usize,
    /// Left-pad histories with the episode's first value so windows start at t = 0.
    pub pad: bool,
    /// Predict `p_{t+1} - p_t` rather than `p_{t+1}`.
    pub delta: bool,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            h_c: 10,
            h_p: 10,
            pad: true,
            delta: true,
        }
    }
}

impl WindowSpec {
    pub fn n_features(&self) -> usize {
        self.h_c + 1 + self.h_p + 1
    }

    fn horizon(&self) -> usize {
        self.h_c.max(self.h_p)
    }
}

/// `controls` is `u_{t-h_c}..=u_t`, `pressures` is `p_{t-h_p}..=p_t`, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryWindow {
    pub controls: Vec<f64>,
    pub pressures: Vec<f64>,
    /// `p_{t+1}`
    pub label: f64,
}

impl HistoryWindow {
    pub fn features(&self) -> impl Iterator<Item = f64> + '_ {
        self.controls.iter().chain(&self.pressures).copied()
    }

    pub fn current_pressure(&self) -> f64 {
        *self.pressures.last().unwrap()
    }
}

/// Last `n + 1` entries of `history[..=t]`, left-padded with `history[0]`.
pub fn padded_history<T: Copy>(history: &[T], t: usize, n: usize) -> Vec<T> {
    (0..=n)
        .map(|k| {
            let back = n - k;
            history[t.saturating_sub(back)]
        })
        .collect()
}

/// Per-coordinate standardization of features and regression target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Norm {
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub target_mean: f64,
    pub target_scale: f64,
}

impl Norm {
    pub fn identity(n: usize) -> Self {
        Self {
            feature_mean: vec![0.0; n],
            feature_scale: vec![1.0; n],
            target_mean: 0.0,
            target_scale: 1.0,
        }
    }

    fn fit(windows: &[&HistoryWindow], spec: &WindowSpec) -> Self {
        let n = spec.n_features();
        if windows.is_empty() {
            return Self::identity(n);
        }
        let count = windows.len() as f64;
        let mut mean = vec![0.0; n];
        let mut target_mean = 0.0;
        for w in windows {
            for (m, x) in mean.iter_mut().zip(w.features()) {
                *m += x;
            }
            target_mean += target_of(w, spec);
        }
        mean.iter_mut().for_each(|m| *m /= count);
        target_mean /= count;
        let mut var = vec![0.0; n];
        let mut target_var = 0.0;
        for w in windows {
            for ((v, x), m) in var.iter_mut().zip(w.features()).zip(&mean) {
                *v += (x - m) * (x - m);
            }
            let d = target_of(w, spec) - target_mean;
            target_var += d * d;
        }
        Self {
            feature_mean: mean,
            feature_scale: var.iter().map(|v| scale_of(v / count)).collect(),
            target_mean,
            target_scale: scale_of(target_var / count),
        }
    }

    pub fn normalize_features(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn denormalize_features(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_scale)
            .map(|((z, m), s)| z * s + m)
            .collect()
    }

    pub fn normalize_target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_scale
    }

    pub fn denormalize_target(&self, z: f64) -> f64 {
        z * self.target_scale + self.target_mean
    }
}

fn scale_of(variance: f64) -> f64 {
    let s = variance.sqrt();
    if s > 1e-12 {
        s
    } else {
        1.0
    }
}

/// Regression target of a window under `spec`.
pub fn target_of(w: &HistoryWindow, spec: &WindowSpec) -> f64 {
    if spec.delta {
        w.label - w.current_pressure()
    } else {
        w.label
    }
}

/// Windows with the episode each came from.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionSet {
    pub spec: WindowSpec,
    pub windows: Vec<HistoryWindow>,
    /// Source episode index of each window.
    pub episode_of: Vec<usize>,
    pub n_episodes: usize,
    /// Episodes dropped for being too short.
    pub skipped: usize,
    pub norm: Norm,
}

impl RegressionSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Normalized feature rows and targets under this set's norm.
    pub fn normalized(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        let xs = self
            .windows
            .iter()
            .map(|w| self.norm.normalize_features(&w.features().collect::<Vec<_>>()))
            .collect();
        let ys = self
            .windows
            .iter()
            .map(|w| self.norm.normalize_target(target_of(w, &self.spec)))
            .collect();
        (xs, ys)
    }

    fn subset(&self, episodes: &[usize], norm: Norm) -> RegressionSet {
        let mut keep = vec![None; self.n_episodes];
        for (new, &old) in episodes.iter().enumerate() {
            keep[old] = Some(new);
        }
        let mut windows = Vec::new();
        let mut episode_of = Vec::new();
        for (w, &e) in self.windows.iter().zip(&self.episode_of) {
            if let Some(new) = keep[e] {
                windows.push(w.clone());
                episode_of.push(new);
            }
        }
        RegressionSet {
            spec: self.spec,
            windows,
            episode_of,
            n_episodes: episodes.len(),
            skipped: 0,
            norm,
        }
    }
}

/// One window per valid step of each episode; windows never straddle episodes.
pub fn build_windows(episodes: &[Episode], spec: WindowSpec) -> RegressionSet {
    let h = spec.horizon();
    let mut windows = Vec::new();
    let mut episode_of = Vec::new();
    let mut skipped = 0;
    let mut n_episodes = 0;
    for ep in episodes {
        if ep.len() <= h + 1 || ep.controls.len() != ep.len() {
            skipped += 1;
            continue;
        }
        let first = if spec.pad { 0 } else { h };
        for t in first..ep.len() - 1 {
            windows.push(HistoryWindow {
                controls: padded_history(&ep.controls, t, spec.h_c),
                pressures: padded_history(&ep.pressures, t, spec.h_p),
                label: ep.pressures[t + 1],
            });
            episode_of.push(n_episodes);
        }
        n_episodes += 1;
    }
    let norm = Norm::fit(&windows.iter().collect::<Vec<_>>(), &spec);
    RegressionSet {
        spec,
        windows,
        episode_of,
        n_episodes,
        skipped,
        norm,
    }
}

/// Episode-level train/validation split; both halves carry the norm fitted on train.
pub fn split(
    set: &RegressionSet,
    train_frac: f64,
    rng: &mut Rng,
) -> Result<(RegressionSet, RegressionSet)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::config(format!("train_frac must lie in (0, 1), got {train_frac}")));
    }
    let n_train = (set.n_episodes as f64 * train_frac).round() as usize;
    if set.n_episodes < 2 || n_train == 0 || n_train == set.n_episodes {
        return Err(Error::structural(format!(
            "cannot split {} episodes at fraction {train_frac}",
            set.n_episodes
        )));
    }
    let mut order: Vec<usize> = (0..set.n_episodes).collect();
    order.shuffle(rng);
    let (train_ids, val_ids) = order.split_at(n_train);
    let mut train_ids = train_ids.to_vec();
    let mut val_ids = val_ids.to_vec();
    train_ids.sort_unstable();
    val_ids.sort_unstable();
    let provisional = set.subset(&train_ids, set.norm.clone());
    let norm = Norm::fit(&provisional.windows.iter().collect::<Vec<_>>(), &set.spec);
    let mut train = provisional;
    train.norm = norm.clone();
    Ok((train, set.subset(&val_ids, norm)))
}
