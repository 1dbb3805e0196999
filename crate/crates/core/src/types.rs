//! Signal, episode and time-grid types shared across the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveform::TargetWaveform;

/// Full-open valve command, in percent.
pub const U_MAX: f64 = 100.0;

/// Discrete time base of a breath.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    /// Seconds per step.
    pub dt: f64,
    pub steps_per_breath: usize,
    pub insp_steps: usize,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self {
            dt: 0.03,
            steps_per_breath: 100,
            insp_steps: 40,
        }
    }
}

impl TimeGrid {
    pub fn new(dt: f64, steps_per_breath: usize, insp_steps: usize) -> Result<Self> {
        let grid = Self {
            dt,
            steps_per_breath,
            insp_steps,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.insp_steps == 0 || self.insp_steps >= self.steps_per_breath {
            return Err(Error::config(format!(
                "need 0 < insp_steps < steps_per_breath, got {} / {}",
                self.insp_steps, self.steps_per_breath
            )));
        }
        Ok(())
    }

    pub fn exp_steps(&self) -> usize {
        self.steps_per_breath - self.insp_steps
    }
}

/// Valve commands, each in `[0, U_MAX]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTrace {
    values: Vec<f64>,
    grid: TimeGrid,
}

impl ControlTrace {
    pub fn new(values: Vec<f64>, grid: TimeGrid) -> Result<Self> {
        if let Some((i, u)) = values
            .iter()
            .enumerate()
            .find(|(_, u)| !(u.is_finite() && (0.0..=U_MAX).contains(*u)))
        {
            return Err(Error::structural(format!(
                "control {u} at step {i} outside [0, {U_MAX}]"
            )));
        }
        Ok(Self { values, grid })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Measured airway pressure, cmH2O.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureTrace {
    values: Vec<f64>,
    grid: TimeGrid,
}

impl PressureTrace {
    pub fn new(values: Vec<f64>, grid: TimeGrid) -> Result<Self> {
        if let Some(i) = values.iter().position(|p| !p.is_finite()) {
            return Err(Error::numerical(format!("non-finite pressure at step {i}")));
        }
        Ok(Self { values, grid })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// One inspiratory phase: `controls[t]` is applied after observing `pressures[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub controls: Vec<f64>,
    pub pressures: Vec<f64>,
    pub target: Option<TargetWaveform>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.pressures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pressures.is_empty()
    }
}

/// Cuts a multi-breath trace into its inspiratory episodes.
pub fn split_breath(
    pressures: &PressureTrace,
    controls: &ControlTrace,
    grid: TimeGrid,
) -> Result<Vec<Episode>> {
    let n = pressures.len();
    if controls.len() != n {
        return Err(Error::structural(format!(
            "pressure trace has {n} samples but control trace has {}",
            controls.len()
        )));
    }
    if !n.is_multiple_of(grid.steps_per_breath) {
        return Err(Error::structural(format!(
            "trace length {n} is not a multiple of steps_per_breath {}",
            grid.steps_per_breath
        )));
    }
    Ok(breath_ranges(n / grid.steps_per_breath, grid)
        .map(|r| Episode {
            controls: controls.values()[r.clone()].to_vec(),
            pressures: pressures.values()[r].to_vec(),
            target: None,
        })
        .collect())
}

/// Index ranges of the inspiratory segments of `n_breaths` consecutive breaths.
pub fn breath_ranges(
    n_breaths: usize,
    grid: TimeGrid,
) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..n_breaths).map(move |b| {
        let start = b * grid.steps_per_breath;
        start..start + grid.insp_steps
    })
}
