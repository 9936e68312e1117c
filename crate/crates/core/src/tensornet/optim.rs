//! SGD with momentum and a reduce-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::tensor::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub velocity: Vec<Vec<T>>,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        OptimizerState { velocity: Vec::new(), learning_rate, momentum }
    }
}

impl<T: Real> Default for OptimizerState<T> {
    fn default() -> Self {
        OptimizerState::new(0.01, 0.85)
    }
}

/// `v <- momentum * v + g; p <- p - lr * v`, per parameter buffer.
pub fn sgd_step<T: Real>(params: &mut [&mut [T]], grads: &[&[T]], opt: &mut OptimizerState<T>) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameter buffers, {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if opt.velocity.is_empty() {
        opt.velocity = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
    }
    if opt.velocity.len() != params.len() {
        return Err(Error::ShapeMismatch("velocity buffers do not match parameters".into()));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(&opt.velocity) {
        if p.len() != g.len() || p.len() != v.len() {
            return Err(Error::ShapeMismatch(format!(
                "parameter of {} values, gradient {}, velocity {}",
                p.len(),
                g.len(),
                v.len()
            )));
        }
    }
    let lr = T::lit(opt.learning_rate);
    let mu = T::lit(opt.momentum);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(opt.velocity.iter_mut()) {
        for ((pi, &gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            *vi = mu * *vi + gi;
            *pi = *pi - lr * *vi;
        }
    }
    Ok(())
}

/// Halves the learning rate once validation loss stops improving.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    #[serde(with = "unbounded")]
    pub best_loss: f64,
    pub epochs_since_improvement: usize,
    pub patience: usize,
    /// Relative improvement required: `loss < best * (1 - threshold)`.
    pub threshold: f64,
    pub factor: f64,
}

impl Default for SchedulerState {
    fn default() -> Self {
        SchedulerState {
            best_loss: f64::INFINITY,
            epochs_since_improvement: 0,
            patience: 5,
            threshold: 0.01,
            factor: 0.5,
        }
    }
}

impl SchedulerState {
    pub fn is_improvement(&self, loss: f64) -> bool {
        loss < self.best_loss * (1.0 - self.threshold)
    }

    /// Records one epoch's validation loss and returns the learning rate to use next.
    pub fn plateau_step(&mut self, val_loss: f64, lr: f64) -> f64 {
        if self.is_improvement(val_loss) {
            self.best_loss = val_loss;
            self.epochs_since_improvement = 0;
            return lr;
        }
        self.epochs_since_improvement += 1;
        if self.epochs_since_improvement > self.patience {
            self.epochs_since_improvement = 0;
            return lr * self.factor;
        }
        lr
    }
}

/// JSON has no infinity; the initial best loss is written as `null`.
mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
