//! Run configuration: every knob of a pipeline run in one JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bench::GridSpec;
use crate::error::{Error, Result};
use crate::explore::ExploreConfig;
use crate::io::{read_json, SCHEMA_VERSION};
use crate::lung::{benchmark_settings, LungParams};
use crate::policy::CtrlTrainConfig;
use crate::sim::SimTrainConfig;
use crate::types::TimeGrid;
use crate::waveform::{suite, TargetWaveform, DEFAULT_RISE_STEPS, SUITE_PIPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub pips: Vec<f64>,
    pub rise_steps: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            pips: SUITE_PIPS.to_vec(),
            rise_steps: DEFAULT_RISE_STEPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_breaths: usize,
    pub train_frac: f64,
    pub window: crate::dataset::WindowSpec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_breaths: 500,
            train_frac: 0.8,
            window: Default::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_samples: usize,
    pub horizon: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_samples: 200,
            horizon: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub pid_grid: GridSpec,
    /// Breaths per waveform in every score.
    pub n_breaths: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            pid_grid: GridSpec::default(),
            n_breaths: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub grid: TimeGrid,
    /// Lung settings, one pipeline each.
    pub settings: Vec<LungParams>,
    pub suite: SuiteConfig,
    pub explore: ExploreConfig,
    pub dataset: DatasetConfig,
    pub sim: SimTrainConfig,
    pub eval: EvalConfig,
    pub ctrl: CtrlTrainConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let grid = TimeGrid::default();
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            grid,
            settings: benchmark_settings(&LungParams::default()),
            suite: SuiteConfig::default(),
            explore: ExploreConfig::default_for(grid),
            dataset: DatasetConfig::default(),
            sim: SimTrainConfig::default(),
            eval: EvalConfig::default(),
            ctrl: CtrlTrainConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.grid.validate()?;
        if self.settings.is_empty() {
            return Err(Error::config("no lung settings"));
        }
        let mut tags: Vec<String> = Vec::with_capacity(self.settings.len());
        for s in &self.settings {
            s.validate()?;
            if tags.contains(&s.tag()) {
                return Err(Error::config(format!("duplicate lung setting {}", s.tag())));
            }
            tags.push(s.tag());
            if s.peep != self.settings[0].peep {
                return Err(Error::config("all lung settings must share one PEEP"));
            }
        }
        self.suite()?;
        self.explore.validate(self.grid)?;
        let d = &self.dataset;
        if d.n_breaths == 0 || !(d.train_frac > 0.0 && d.train_frac < 1.0) {
            return Err(Error::config("dataset needs n_breaths >= 1 and 0 < train_frac < 1"));
        }
        if self.eval.n_samples == 0 || self.eval.horizon == 0 || self.eval.horizon > self.grid.insp_steps {
            return Err(Error::config("eval needs n_samples >= 1 and 1 <= horizon <= insp_steps"));
        }
        if self.sim.epochs == 0 || !(self.sim.lr.is_finite() && self.sim.lr > 0.0) {
            return Err(Error::config("sim training needs epochs >= 1 and lr > 0"));
        }
        if !(self.ctrl.lr.is_finite() && self.ctrl.lr > 0.0) || self.ctrl.lambdas.is_empty() {
            return Err(Error::config("controller training needs lr > 0 and at least one lambda"));
        }
        if self.ctrl.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::config("lambdas must be finite and >= 0"));
        }
        if !(self.ctrl.val_jitter.is_finite() && self.ctrl.val_jitter >= 0.0) {
            return Err(Error::config("val_jitter must be >= 0"));
        }
        self.bench.pid_grid.validate()?;
        if self.bench.n_breaths == 0 {
            return Err(Error::config("bench n_breaths must be >= 1"));
        }
        Ok(())
    }

    pub fn peep(&self) -> f64 {
        self.settings[0].peep
    }

    pub fn suite(&self) -> Result<Vec<TargetWaveform>> {
        if self.suite.pips.is_empty() {
            return Err(Error::config("empty waveform suite"));
        }
        suite(&self.suite.pips, self.peep(), self.suite.rise_steps, self.grid)
    }

    pub fn setting(&self, tag: &str) -> Result<LungParams> {
        self.settings
            .iter()
            .find(|s| s.tag() == tag)
            .copied()
            .ok_or_else(|| Error::config(format!("unknown lung setting {tag}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.suite().unwrap().len(), 6);
    }

    #[test]
    fn rejects_wrong_schema() {
        let cfg = RunConfig {
            schema_version: SCHEMA_VERSION + 1,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_duplicate_settings() {
        let mut cfg = RunConfig::default();
        cfg.settings.push(cfg.settings[0]);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
