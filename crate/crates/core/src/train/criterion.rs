//! Loss functions over logits `[B, K]` with analytic gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::Task;
use crate::nn::{Scalar, Tensor};

/// Tolerance on CE target rows: non-negative and summing to one.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionId {
    CrossEntropy,
    BalancedCrossEntropy,
    BceMultilabel,
    Mse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Criterion {
    pub id: CriterionId,
    /// Per-class weights of the balanced cross-entropy.
    pub class_weights: Vec<f64>,
}

impl Criterion {
    pub fn new(id: CriterionId) -> Self {
        Criterion {
            id,
            class_weights: Vec::new(),
        }
    }

    pub fn balanced(class_weights: Vec<f64>) -> Self {
        Criterion {
            id: CriterionId::BalancedCrossEntropy,
            class_weights,
        }
    }

    /// Whether the criterion fits a task's target encoding.
    pub fn supports(&self, task: Task) -> bool {
        match self.id {
            CriterionId::CrossEntropy | CriterionId::BalancedCrossEntropy => task == Task::Classification,
            CriterionId::BceMultilabel => task == Task::Multilabel,
            CriterionId::Mse => true,
        }
    }

    /// Mean loss over the batch and its gradient with respect to `logits`.
    pub fn evaluate<T: Scalar>(&self, logits: &Tensor<T>, targets: &Tensor<T>) -> Result<(T, Tensor<T>)> {
        if logits.dims.len() != 2 || logits.dims != targets.dims {
            return Err(Error::Shape(format!(
                "criterion needs logits and targets of equal [B, K] dims, got {:?} and {:?}",
                logits.dims, targets.dims
            )));
        }
        let (b, k) = (logits.dims[0], logits.dims[1]);
        let mut grad = Tensor::zeros(logits.dims.clone());
        let mut total = T::zero();
        match self.id {
            CriterionId::CrossEntropy | CriterionId::BalancedCrossEntropy => {
                let balanced = self.id == CriterionId::BalancedCrossEntropy;
                if balanced && self.class_weights.len() != k {
                    return Err(Error::Shape(format!(
                        "{} class weights for {k} classes",
                        self.class_weights.len()
                    )));
                }
                let inv_b = T::of(1.0 / b as f64);
                for i in 0..b {
                    let z = &logits.data[i * k..(i + 1) * k];
                    let y = &targets.data[i * k..(i + 1) * k];
                    check_simplex(y, i)?;
                    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
                    let sum_exp: T = z.iter().map(|&v| (v - max).exp()).sum();
                    let log_norm = max + sum_exp.ln();
                    let weight = if balanced {
                        y.iter()
                            .zip(&self.class_weights)
                            .map(|(&t, &w)| t * T::of(w))
                            .sum()
                    } else {
                        T::one()
                    };
                    let ce: T = y.iter().zip(z).map(|(&t, &v)| t * (log_norm - v)).sum();
                    total += weight * ce;
                    let y_sum: T = y.iter().copied().sum();
                    for c in 0..k {
                        let p = (z[c] - log_norm).exp();
                        grad.data[i * k + c] = weight * (p * y_sum - y[c]) * inv_b;
                    }
                }
                total = total * inv_b;
            }
            CriterionId::BceMultilabel => {
                let scale = T::of(1.0 / (b * k) as f64);
                for ((g, &z), &y) in grad.data.iter_mut().zip(&logits.data).zip(&targets.data) {
                    total += z.max(T::zero()) - z * y + (-z.abs()).exp().ln_1p();
                    *g = (sigmoid(z) - y) * scale;
                }
                total = total * scale;
            }
            CriterionId::Mse => {
                let scale = T::of(1.0 / (b * k) as f64);
                for ((g, &z), &y) in grad.data.iter_mut().zip(&logits.data).zip(&targets.data) {
                    let d = z - y;
                    total += d * d;
                    *g = T::of(2.0) * d * scale;
                }
                total = total * scale;
            }
        }
        Ok((total, grad))
    }
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Softmax of one logit row.
pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exp: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exp.iter().copied().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

fn check_simplex<T: Scalar>(y: &[T], row: usize) -> Result<()> {
    let sum: f64 = y.iter().map(|v| v.f64()).sum();
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE || y.iter().any(|v| v.f64() < -SIMPLEX_TOLERANCE) {
        return Err(Error::InvalidArgument(format!(
            "cross-entropy target row {row} is not a probability vector (sum {sum})"
        )));
    }
    Ok(())
}
