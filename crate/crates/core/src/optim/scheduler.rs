use crate::error::{config_err, Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub factor: f64,
    pub lr_patience: usize,
    pub min_delta: f64,
    pub min_lr: f64,
    pub early_stop: bool,
    pub stop_patience: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig { factor: 0.5, lr_patience: 3, min_delta: 1e-4, min_lr: 1e-6, early_stop: true, stop_patience: 8 }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor <= 1.0) {
            return Err(config_err!("scheduler factor must be in (0, 1], got {}", self.factor));
        }
        if self.lr_patience == 0 || self.stop_patience == 0 {
            return Err(config_err!("scheduler patience values must be at least 1"));
        }
        if self.min_delta < 0.0 || self.min_lr < 0.0 {
            return Err(config_err!("min_delta and min_lr must be non-negative"));
        }
        Ok(())
    }
}

/// Plateau learning-rate reduction and early stopping, driven by validation loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    pub config: SchedulerConfig,
    pub lr: f64,
    /// `None` until the first update.
    pub best_val_loss: Option<f64>,
    /// Non-improving epochs since the last improvement (drives early stopping).
    pub epochs_since_improvement: usize,
    /// Non-improving epochs since the last improvement or lr reduction.
    pub plateau_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchedulerEvent {
    /// Learning rate for the next epoch.
    pub lr: f64,
    pub improved: bool,
    pub lr_reduced: bool,
    pub should_stop: bool,
}

impl SchedulerState {
    pub fn new(config: SchedulerConfig, lr: f64) -> Self {
        SchedulerState { config, lr, best_val_loss: None, epochs_since_improvement: 0, plateau_count: 0 }
    }

    /// An epoch improves when `val_loss < best − min_delta`. After `lr_patience`
    /// non-improving epochs the rate becomes `max(lr · factor, min_lr)` and the plateau
    /// counter restarts; `should_stop` is raised after `stop_patience` consecutive
    /// non-improving epochs.
    pub fn update(&mut self, val_loss: f64) -> Result<SchedulerEvent> {
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss is {val_loss}")));
        }
        let c = &self.config;
        let improved = match self.best_val_loss {
            None => true,
            Some(best) => val_loss < best - c.min_delta,
        };
        let mut lr_reduced = false;
        if improved {
            self.best_val_loss = Some(val_loss);
            self.epochs_since_improvement = 0;
            self.plateau_count = 0;
        } else {
            self.epochs_since_improvement += 1;
            self.plateau_count += 1;
            if self.plateau_count >= c.lr_patience {
                let next = (self.lr * c.factor).max(c.min_lr);
                lr_reduced = next < self.lr;
                self.lr = next.min(self.lr);
                self.plateau_count = 0;
            }
        }
        let should_stop = c.early_stop && self.epochs_since_improvement >= c.stop_patience;
        Ok(SchedulerEvent { lr: self.lr, improved, lr_reduced, should_stop })
    }
}
