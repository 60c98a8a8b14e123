//! Plain SGD with a staircase learning-rate decay and global-norm clipping.

use crate::param::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Step-decay learning-rate schedule.
///
/// The rate stays at `initial_lr` before `decay_start_step`; from that step
/// on it is divided by `1 / decay_factor` once, then once more every
/// `decay_interval` steps, never going below `min_lr`.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdSchedule {
    pub initial_lr: f64,
    pub decay_start_step: u64,
    pub decay_interval: u64,
    pub decay_factor: f64,
    pub min_lr: f64,
    pub clip_norm: f64,
}

impl Default for SgdSchedule {
    fn default() -> Self {
        Self {
            initial_lr: 1.0,
            decay_start_step: 15_000,
            decay_interval: 1_500,
            decay_factor: 0.1,
            min_lr: 0.0001,
            clip_norm: 5.0,
        }
    }
}

impl SgdSchedule {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.min_lr >= 0.0 && self.initial_lr >= self.min_lr && self.initial_lr.is_finite()) {
            return Err(format!(
                "need initial_lr >= min_lr >= 0 (got {} and {})",
                self.initial_lr, self.min_lr
            ));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(format!("decay_factor must be in (0, 1), got {}", self.decay_factor));
        }
        if self.decay_interval == 0 {
            return Err("decay_interval must be positive".into());
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        Ok(())
    }
}

/// Learning rate at optimizer step `step`, counted from 0.
pub fn lr_at_step(schedule: &SgdSchedule, step: u64) -> f64 {
    if step < schedule.decay_start_step {
        return schedule.initial_lr;
    }
    let decays = 1 + (step - schedule.decay_start_step) / schedule.decay_interval.max(1);
    // Dividing by an exact power of 1/factor keeps 0.1-style factors exact.
    let divisor = (1.0 / schedule.decay_factor).powi(decays.min(i32::MAX as u64) as i32);
    (schedule.initial_lr / divisor).max(schedule.min_lr)
}

/// Rescales `grads` so that their joint L2 norm is at most `max_norm`.
/// Returns the norm measured before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: T) -> T {
    let mut refs: Vec<&mut Tensor<T>> = grads.iter_mut().collect();
    clip_refs(&mut refs, max_norm)
}

fn clip_refs<T: Scalar>(grads: &mut [&mut Tensor<T>], max_norm: T) -> T {
    let norm = grads.iter().map(|g| g.squared_norm()).sum::<T>().sqrt();
    if norm > max_norm {
        let factor = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }
    norm
}

/// [`clip_global_norm`] over every gradient of a store.
pub fn clip_store_grads<T: Scalar>(store: &mut ParamStore<T>, max_norm: T) -> T {
    let mut refs: Vec<&mut Tensor<T>> = store.iter_mut().map(|p| &mut p.grad).collect();
    clip_refs(&mut refs, max_norm)
}

/// `value -= lr * grad` for every parameter, then clears the gradients.
pub fn sgd_step<T: Scalar>(store: &mut ParamStore<T>, lr: T) {
    for p in store.iter_mut() {
        for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data_mut()) {
            *v -= lr * *g;
            *g = T::zero();
        }
    }
}
