//! Adam and the step-decay learning-rate schedule.

use ndarray::{Array2, Zip};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// A trainable tensor with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Array2<T>,
    pub grad: Array2<T>,
    pub m: Array2<T>,
    pub v: Array2<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Array2<T>) -> Self {
        let shape = value.raw_dim();
        Param {
            value,
            grad: Array2::zeros(shape),
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
        }
    }

    pub fn grad_is_finite(&self) -> bool {
        self.grad.iter().all(|g| g.is_finite())
    }

    /// One bias-corrected Adam update for step number `step` (1-based);
    /// clears the gradient afterwards.
    pub fn adam_update(&mut self, lr: T, step: u64) {
        let (b1, b2, eps) = (T::lit(BETA1), T::lit(BETA2), T::lit(EPSILON));
        let t = i32::try_from(step).unwrap_or(i32::MAX);
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        Zip::from(&mut self.value)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(&self.grad)
            .for_each(|x, m, v, &g| {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            });
        self.grad.fill(T::zero());
    }
}

/// Applies Adam to every parameter with a shared step counter. Nothing is
/// modified if any gradient is non-finite.
pub fn adam_step<T: Scalar>(params: &mut [&mut Param<T>], step: &mut u64, lr: T) -> Result<()> {
    if let Some(pos) = params.iter().position(|p| !p.grad_is_finite()) {
        return Err(Error::NonFinite(format!("gradient of parameter #{pos}")));
    }
    *step += 1;
    for p in params.iter_mut() {
        p.adam_update(lr, *step);
    }
    Ok(())
}

/// `lr * gamma^(milestones passed)`.
pub fn lr_schedule(config: &TrainConfig, epoch: usize) -> f64 {
    let passed = config.lr_milestones.iter().filter(|&&m| m <= epoch).count();
    config.lr * config.lr_gamma.powi(passed as i32)
}
