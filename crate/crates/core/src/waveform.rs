//! Target pressure waveforms: ramp from PEEP to PIP, hold, release.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::TimeGrid;

/// Peak inspiratory pressures of the benchmark suite, cmH2O.
pub const SUITE_PIPS: [f64; 6] = [10.0, 15.0, 20.0, 25.0, 30.0, 35.0];
pub const DEFAULT_RISE_STEPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetWaveform {
    pub pip: f64,
    pub peep: f64,
    pub rise_steps: usize,
    pub grid: TimeGrid,
}

impl TargetWaveform {
    pub fn new(pip: f64, peep: f64, rise_steps: usize, grid: TimeGrid) -> Result<Self> {
        let w = Self {
            pip,
            peep,
            rise_steps,
            grid,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pip.is_finite() && self.peep.is_finite() && self.pip > self.peep) {
            return Err(Error::config(format!(
                "waveform needs pip > peep, got pip={} peep={}",
                self.pip, self.peep
            )));
        }
        if self.rise_steps == 0 || self.rise_steps > self.grid.insp_steps {
            return Err(Error::config(format!(
                "rise_steps {} outside 1..={}",
                self.rise_steps, self.grid.insp_steps
            )));
        }
        Ok(())
    }

    /// Target pressure at step `t` of the breath.
    pub fn target_at(&self, t: usize) -> Result<f64> {
        if t >= self.grid.steps_per_breath {
            return Err(Error::structural(format!(
                "step {t} outside breath of {} steps",
                self.grid.steps_per_breath
            )));
        }
        Ok(self.value(t))
    }

    /// Unchecked evaluation; steps past the breath read as PEEP.
    pub(crate) fn value(&self, t: usize) -> f64 {
        if t >= self.grid.insp_steps {
            self.peep
        } else if t < self.rise_steps {
            self.peep + (self.pip - self.peep) * t as f64 / self.rise_steps as f64
        } else {
            self.pip
        }
    }

    /// Targets over the inspiratory phase.
    pub fn inspiratory(&self) -> Vec<f64> {
        (0..self.grid.insp_steps).map(|t| self.value(t)).collect()
    }

    pub fn with_pip(&self, pip: f64) -> Self {
        Self { pip, ..*self }
    }
}

/// The six-level benchmark suite with the default rise time.
pub fn benchmark_suite(peep: f64, grid: TimeGrid) -> Result<Vec<TargetWaveform>> {
    suite(&SUITE_PIPS, peep, DEFAULT_RISE_STEPS, grid)
}

pub fn suite(
    pips: &[f64],
    peep: f64,
    rise_steps: usize,
    grid: TimeGrid,
) -> Result<Vec<TargetWaveform>> {
    pips.iter()
        .map(|&pip| TargetWaveform::new(pip, peep, rise_steps, grid))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(pip: f64, rise: usize) -> TargetWaveform {
        TargetWaveform::new(pip, 5.0, rise, TimeGrid::default()).unwrap()
    }

    #[test]
    fn ramp_endpoints_and_midpoint() {
        let wf = w(15.0, 4);
        assert_eq!(wf.target_at(0).unwrap(), 5.0);
        assert_eq!(wf.target_at(4).unwrap(), 15.0);
        assert_eq!(wf.target_at(2).unwrap(), 10.0);
        assert_eq!(wf.target_at(39).unwrap(), 15.0);
        assert_eq!(wf.target_at(40).unwrap(), 5.0);
        assert_eq!(wf.target_at(99).unwrap(), 5.0);
        assert!(matches!(wf.target_at(100), Err(Error::Structural(_))));
    }

    #[test]
    fn suite_has_six_levels_sharing_grid_and_peep() {
        let s = benchmark_suite(5.0, TimeGrid::default()).unwrap();
        assert_eq!(s.len(), 6);
        let pips: Vec<f64> = s.iter().map(|w| w.pip).collect();
        assert_eq!(pips, vec![10.0, 15.0, 20.0, 25.0, 30.0, 35.0]);
        assert!(s.iter().all(|x| x.peep == 5.0 && x.grid == s[0].grid));
    }

    #[test]
    fn invalid_waveforms_rejected() {
        let g = TimeGrid::default();
        assert!(TargetWaveform::new(5.0, 5.0, 5, g).is_err());
        assert!(TargetWaveform::new(15.0, 5.0, 0, g).is_err());
        assert!(TargetWaveform::new(15.0, 5.0, 41, g).is_err());
    }

    proptest! {
        #[test]
        fn piecewise_linear_and_bounded(pip in 6.0f64..60.0, rise in 1usize..=40) {
            let wf = w(pip, rise);
            let slope = (pip - 5.0) / rise as f64;
            for t in 0..100 {
                let v = wf.target_at(t).unwrap();
                prop_assert!(v >= 5.0 && v <= pip);
                if t >= 40 {
                    prop_assert_eq!(v, 5.0);
                } else if t > 0 {
                    // steps never exceed the ramp slope inside the inspiratory phase
                    let prev = wf.target_at(t - 1).unwrap();
                    prop_assert!((v - prev) <= slope + 1e-12 && v >= prev);
                }
            }
        }
    }
}
