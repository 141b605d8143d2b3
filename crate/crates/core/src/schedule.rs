//! Fusion-ratio schedule: a staircase from `start` to `end` in `n_steps`
//! equally spaced steps over the round budget.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauSchedule {
    pub start: f64,
    pub end: f64,
    pub n_steps: usize,
}

impl Default for TauSchedule {
    fn default() -> Self {
        TauSchedule {
            start: 0.0,
            end: 0.6,
            n_steps: 10,
        }
    }
}

impl TauSchedule {
    /// Fixed fusion ratio for every round.
    pub fn constant(tau: f64) -> Self {
        TauSchedule {
            start: tau,
            end: tau,
            n_steps: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.start) || !(0.0..=1.0).contains(&self.end) {
            return Err(Error::Config(format!(
                "tau schedule bounds must be in [0, 1], got {} and {}",
                self.start, self.end
            )));
        }
        if self.start > self.end {
            return Err(Error::Config(format!(
                "tau schedule start {} exceeds end {}",
                self.start, self.end
            )));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("tau schedule needs at least one step".into()));
        }
        Ok(())
    }

    /// Fusion ratio for `round` out of `n_rounds`. Step `s` is
    /// `min(n_steps-1, round / ceil(n_rounds / n_steps))` and the value is
    /// `start + s * (end-start) / (n_steps-1)`; the final step returns `end`
    /// itself.
    pub fn tau_at(&self, round: usize, n_rounds: usize) -> f64 {
        assert!(round < n_rounds, "round {round} out of {n_rounds}");
        if self.n_steps <= 1 {
            return self.start;
        }
        let width = n_rounds.div_ceil(self.n_steps);
        let step = (round / width).min(self.n_steps - 1);
        if step == self.n_steps - 1 {
            return self.end;
        }
        self.start + step as f64 * (self.end - self.start) / (self.n_steps - 1) as f64
    }
}
