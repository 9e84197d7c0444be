//! Named parameter storage, the Adam optimizer, and training schedules.
//!
//! Parameters live in a [`ParameterStore`] keyed by slash-separated names
//! (e.g. `feedback/d0/w`). Every entry carries its gradient slot and Adam
//! moment vectors so an optimizer step is a single pass over the map. A
//! `BTreeMap` keeps iteration order deterministic, which makes whole training
//! runs reproducible byte for byte. Non-trainable state (batch-norm running
//! statistics) goes in a separate buffer map that the optimizer never touches.

use std::collections::{BTreeMap, BTreeSet};

use crate::{Error, Result};

/// Adam defaults; callers can override via [`ParameterStore::adam_step_with`].
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One trainable array: value, gradient, and Adam first/second moments, all
/// the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    rows: usize,
    cols: usize,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl ParamEntry {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Non-trainable state array (running statistics and the like).
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    rows: usize,
    cols: usize,
    pub value: Vec<f64>,
}

impl Buffer {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

/// All trainable parameters plus optimizer state for one model family.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: BTreeMap<String, ParamEntry>,
    buffers: BTreeMap<String, Buffer>,
    frozen: BTreeSet<String>,
    step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a new parameter. Re-registering an existing name is an
    /// error: shared parameters are expressed by building two models over
    /// the same name prefix, never by silent overwrites.
    pub fn insert(&mut self, name: &str, rows: usize, cols: usize, value: Vec<f64>) -> Result<()> {
        if value.len() != rows * cols {
            return Err(Error::Shape {
                op: "ParameterStore::insert",
                details: format!(
                    "parameter `{name}`: {rows}x{cols} needs {} values, got {}",
                    rows * cols,
                    value.len()
                ),
            });
        }
        if self.entries.contains_key(name) {
            return Err(Error::Config(format!("parameter `{name}` already registered")));
        }
        let n = value.len();
        self.entries.insert(
            name.to_string(),
            ParamEntry { rows, cols, value, grad: vec![0.0; n], m: vec![0.0; n], v: vec![0.0; n] },
        );
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&ParamEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ParamEntry> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))
    }

    /// Adds a gradient contribution into the entry's gradient slot.
    pub fn add_grad(&mut self, name: &str, grad: &[f64]) -> Result<()> {
        let entry = self.get_mut(name)?;
        if entry.grad.len() != grad.len() {
            return Err(Error::Shape {
                op: "ParameterStore::add_grad",
                details: format!(
                    "parameter `{name}` has {} coords, gradient brings {}",
                    entry.grad.len(),
                    grad.len()
                ),
            });
        }
        for (g, d) in entry.grad.iter_mut().zip(grad) {
            *g += d;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for entry in self.entries.values_mut() {
            entry.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Marks parameters as frozen: the optimizer skips them entirely (values
    /// *and* moments stay bit-identical). Prefix-based: freezing `demod`
    /// freezes `demod/d0/w`, `demod/d0/b`, ...
    pub fn freeze_prefix(&mut self, prefix: &str) {
        let keys: Vec<String> = self
            .entries
            .keys()
            .filter(|k| k.as_str() == prefix || k.starts_with(&format!("{prefix}/")))
            .cloned()
            .collect();
        self.frozen.extend(keys);
    }

    pub fn unfreeze_all(&mut self) {
        self.frozen.clear();
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    pub fn frozen_names(&self) -> impl Iterator<Item = &str> {
        self.frozen.iter().map(String::as_str)
    }

    pub fn set_frozen(&mut self, names: impl IntoIterator<Item = String>) {
        self.frozen = names.into_iter().collect();
    }

    /// Count of trainable (unfrozen) parameters.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|(k, _)| !self.frozen.contains(*k))
            .map(|(_, e)| e.len())
            .sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Restores optimizer step count when resuming from a checkpoint.
    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn insert_buffer(&mut self, name: &str, rows: usize, cols: usize, value: Vec<f64>) -> Result<()> {
        if value.len() != rows * cols {
            return Err(Error::Shape {
                op: "ParameterStore::insert_buffer",
                details: format!(
                    "buffer `{name}`: {rows}x{cols} needs {} values, got {}",
                    rows * cols,
                    value.len()
                ),
            });
        }
        if self.buffers.contains_key(name) {
            return Err(Error::Config(format!("buffer `{name}` already registered")));
        }
        self.buffers.insert(name.to_string(), Buffer { rows, cols, value });
        Ok(())
    }

    pub fn buffer(&self, name: &str) -> Result<&Buffer> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown buffer `{name}`")))
    }

    pub fn buffer_mut(&mut self, name: &str) -> Result<&mut Buffer> {
        self.buffers
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown buffer `{name}`")))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Buffer)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Bias-corrected Adam update over every unfrozen entry, followed by a
    /// gradient reset. Iteration order is the map order, but the update is
    /// per-entry independent, so order cannot affect the result.
    pub fn adam_step_with(&mut self, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (name, entry) in self.entries.iter_mut() {
            if self.frozen.contains(name) {
                continue;
            }
            for i in 0..entry.value.len() {
                let g = entry.grad[i];
                entry.m[i] = beta1 * entry.m[i] + (1.0 - beta1) * g;
                entry.v[i] = beta2 * entry.v[i] + (1.0 - beta2) * g * g;
                let m_hat = entry.m[i] / bc1;
                let v_hat = entry.v[i] / bc2;
                entry.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                entry.grad[i] = 0.0;
            }
        }
        Ok(())
    }

    pub fn adam_step(&mut self, lr: f64) -> Result<()> {
        self.adam_step_with(lr, ADAM_BETA1, ADAM_BETA2, ADAM_EPS)
    }
}

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

/// Slope-annealing rule for the binary feedback layer's surrogate gradient:
/// `α(i) = base + step·i` over epochs `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealRule {
    pub base: f64,
    pub step: f64,
}

impl Default for AnnealRule {
    fn default() -> Self {
        Self { base: 2.0, step: 0.2 }
    }
}

impl AnnealRule {
    pub fn alpha(&self, epoch: usize) -> f64 {
        self.base + self.step * epoch as f64
    }
}

/// Surrogate slope at a given epoch under the default annealing rule.
pub fn anneal_slope(epoch: usize) -> f64 {
    AnnealRule::default().alpha(epoch)
}

/// Everything a training loop needs to know about pacing: batch shape,
/// per-epoch learning rates, and the annealing rule.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub batch_size: usize,
    /// One learning rate per epoch; shorter lists repeat their last value.
    pub learning_rates: Vec<f64>,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub anneal: AnnealRule,
    pub seed: u64,
}

impl TrainSchedule {
    /// Geometric decay from `lr_start` to `lr_end` across all epochs, the
    /// usual "gradually decreasing" shape.
    pub fn geometric(
        batch_size: usize,
        epochs: usize,
        batches_per_epoch: usize,
        lr_start: f64,
        lr_end: f64,
        seed: u64,
    ) -> Result<Self> {
        if epochs == 0 {
            return Err(Error::Config("schedule needs at least one epoch".into()));
        }
        let rates = if epochs == 1 {
            vec![lr_start]
        } else {
            let ratio = (lr_end / lr_start).powf(1.0 / (epochs - 1) as f64);
            (0..epochs).map(|i| lr_start * ratio.powi(i as i32)).collect()
        };
        let s = Self {
            batch_size,
            learning_rates: rates,
            epochs,
            batches_per_epoch,
            anneal: AnnealRule::default(),
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.batches_per_epoch == 0 {
            return Err(Error::Config(format!(
                "schedule dimensions must be positive: batch {}, epochs {}, batches/epoch {}",
                self.batch_size, self.epochs, self.batches_per_epoch
            )));
        }
        if self.learning_rates.is_empty() {
            return Err(Error::Config("schedule needs at least one learning rate".into()));
        }
        for pair in self.learning_rates.windows(2) {
            if pair[1] > pair[0] {
                return Err(Error::Config(format!(
                    "learning rates must be non-increasing, got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        if self.learning_rates.iter().any(|&lr| !(lr > 0.0) || !lr.is_finite()) {
            return Err(Error::Config("learning rates must be positive and finite".into()));
        }
        Ok(())
    }

    /// Learning rate for an epoch; epochs past the list reuse the last rate.
    pub fn lr_for(&self, epoch: usize) -> f64 {
        let idx = epoch.min(self.learning_rates.len() - 1);
        self.learning_rates[idx]
    }
}
