//! SGD with momentum over a small parameter vector, drawing paired forget
//! and retain mini-batches. Shared by forget-vector and composition-weight
//! optimization.

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdSchedule {
    pub lr0: f64,
    pub momentum: f64,
    /// Multiplicative learning-rate factor applied once per iteration.
    pub decay: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl SgdSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 >= 0.0) {
            return Err(Error::config("initial learning rate must be nonnegative"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::config("learning-rate decay must lie in (0, 1]"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("at least one iteration is required"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn learning_rate(&self, iteration: usize) -> f64 {
        self.lr0 * self.decay.powi(iteration as i32)
    }
}

/// One iteration is a full pass over the forget rows in shuffled batches;
/// each forget batch is paired with a fresh uniform draw of retain rows of
/// the same size (or all of them when fewer exist).
///
/// `objective(params, forget_batch, retain_batch)` returns the loss and its
/// gradient. `after_iteration(t, params, mean_loss)` runs once per pass.
pub(crate) fn paired_batch_descent(
    params: &mut [f64],
    schedule: &SgdSchedule,
    n_forget: usize,
    n_retain: usize,
    mut objective: impl FnMut(&[f64], &[usize], &[usize]) -> Result<(f64, Vec<f64>)>,
    mut after_iteration: impl FnMut(usize, &[f64], f64) -> Result<()>,
) -> Result<()> {
    schedule.validate()?;
    if n_forget == 0 {
        return Err(Error::input("the forget set is empty"));
    }
    let mut rng = rng::rng_for(schedule.seed, "paired-batches");
    let mut order: Vec<usize> = (0..n_forget).collect();
    let mut velocity = vec![0.0; params.len()];

    for t in 0..schedule.max_iterations {
        let lr = schedule.learning_rate(t);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(schedule.batch_size) {
            let retain = if n_retain > 0 {
                index::sample(&mut rng, n_retain, schedule.batch_size.min(n_retain)).into_vec()
            } else {
                Vec::new()
            };
            let (loss, grad) = objective(params, chunk, &retain)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    iteration: t,
                    last_finite: params.to_vec(),
                });
            }
            for ((p, g), v) in params.iter_mut().zip(&grad).zip(velocity.iter_mut()) {
                *v = schedule.momentum * *v + g;
                *p -= lr * *v;
            }
            total += loss;
            batches += 1;
        }
        after_iteration(t, params, total / batches as f64)?;
    }
    Ok(())
}
