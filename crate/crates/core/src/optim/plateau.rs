use serde::{Deserialize, Serialize};

use crate::codec::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

/// Multiplies the learning rate by `factor` once the monitored metric (maximized)
/// has failed to beat its best by more than `min_delta` for `patience` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub cooldown: usize,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            factor: 0.9,
            patience: 3,
            min_delta: 1e-4,
            cooldown: 0,
            min_lr: 0.0,
        }
    }
}

impl PlateauConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::Validation(format!(
                "plateau factor {} must lie in (0, 1)",
                self.factor
            )));
        }
        if self.patience == 0 {
            return Err(Error::Validation(
                "plateau patience must be at least 1".into(),
            ));
        }
        if !(self.min_delta >= 0.0
            && self.min_delta.is_finite()
            && self.min_lr >= 0.0
            && self.min_lr.is_finite())
        {
            return Err(Error::Validation(format!(
                "min_delta {} and min_lr {} must be non-negative",
                self.min_delta, self.min_lr
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauState {
    pub lr: f64,
    pub best: f64,
    pub wait: usize,
    pub cooldown_counter: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlateauController {
    pub cfg: PlateauConfig,
    pub state: PlateauState,
}

impl PlateauController {
    pub fn new(cfg: PlateauConfig, initial_lr: f64) -> Self {
        PlateauController {
            cfg,
            state: PlateauState {
                lr: initial_lr,
                best: f64::NEG_INFINITY,
                wait: 0,
                cooldown_counter: 0,
            },
        }
    }

    pub fn lr(&self) -> f64 {
        self.state.lr
    }

    /// Feeds one epoch's metric and returns the learning rate for the next epoch.
    /// A non-finite metric never counts as an improvement.
    pub fn update(&mut self, metric: f64) -> f64 {
        let s = &mut self.state;
        let in_cooldown = s.cooldown_counter > 0;
        if in_cooldown {
            s.cooldown_counter -= 1;
            s.wait = 0;
        }
        if metric > s.best + self.cfg.min_delta {
            s.best = metric;
            s.wait = 0;
        } else if !in_cooldown {
            s.wait += 1;
            if s.wait >= self.cfg.patience {
                if s.lr > self.cfg.min_lr {
                    s.lr = (s.lr * self.cfg.factor).max(self.cfg.min_lr);
                    s.cooldown_counter = self.cfg.cooldown;
                }
                s.wait = 0;
            }
        }
        s.lr
    }

    pub(crate) fn write_state(&self, w: &mut ByteWriter) {
        w.f64(self.state.lr);
        w.f64(self.state.best);
        w.u64(self.state.wait as u64);
        w.u64(self.state.cooldown_counter as u64);
    }

    pub(crate) fn read_state(r: &mut ByteReader<'_>) -> Result<PlateauState> {
        Ok(PlateauState {
            lr: r.f64("scheduler lr")?,
            best: r.f64("scheduler best")?,
            wait: r.u64("scheduler wait")? as usize,
            cooldown_counter: r.u64("scheduler cooldown")? as usize,
        })
    }
}
