use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HuberConfig {
    pub delta: f64,
}

impl Default for HuberConfig {
    fn default() -> Self {
        Self { delta: 1.0 }
    }
}

impl HuberConfig {
    pub fn new(delta: f64) -> Result<Self> {
        if delta.is_finite() && delta > 0.0 {
            Ok(Self { delta })
        } else {
            Err(Error::Config(format!("huber delta {delta} must be positive")))
        }
    }
}

/// Mean over elements of the Huber loss; returns the loss and d(loss)/d(pred).
///
/// Per element with `e = pred - target`: `0.5 e^2` when `|e| <= delta`,
/// otherwise `delta (|e| - 0.5 delta)`.
pub fn huber_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, cfg: HuberConfig) -> Result<(T, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!("huber: pred {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    let n = pred.len().max(1);
    let inv_n = T::one() / T::lit(n as f64);
    let delta = T::lit(cfg.delta);
    let half = T::lit(0.5);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.data().iter().zip(target.data()) {
        let e = *p - *t;
        if e.abs() <= delta {
            total += half * e * e;
            grad.push(e * inv_n);
        } else {
            total += delta * (e.abs() - half * delta);
            grad.push(delta * e.signum() * inv_n);
        }
    }
    Ok((total * inv_n, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// Mean squared error; returns the loss and its gradient.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!("mse: pred {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    let n = pred.len().max(1);
    let inv_n = T::one() / T::lit(n as f64);
    let two = T::lit(2.0);
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.data().iter().zip(target.data()) {
        let e = *p - *t;
        total += e * e;
        grad.push(two * e * inv_n);
    }
    Ok((total * inv_n, Tensor::new(pred.shape().to_vec(), grad)?))
}
