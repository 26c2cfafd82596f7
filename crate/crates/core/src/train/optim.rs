//! Optimizers and learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Param, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerId {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub id: OptimizerId,
    pub lr: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl OptimizerSpec {
    pub fn sgd(lr: f64) -> Self {
        OptimizerSpec {
            id: OptimizerId::Sgd,
            lr,
            momentum: 0.0,
            weight_decay: 0.0,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerSpec {
            id: OptimizerId::Adam,
            ..Self::sgd(lr)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config("optimizer", m));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 || self.eps <= 0.0 {
            return bad("weight_decay must be non-negative and eps positive");
        }
        Ok(())
    }
}

/// Per-parameter buffers plus the step count.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub spec: OptimizerSpec,
    pub steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Optimizer {
            spec,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    /// Updates `params` from their gradients at learning rate `lr`.
    ///
    /// SGD: `v = mu*v + g + wd*w`, `w -= lr*v`. Adam applies decoupled
    /// weight decay `w -= lr*wd*w` before the bias-corrected moment update.
    pub fn step<T: Scalar>(&mut self, params: &mut [&mut Param<T>], lr: f64) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            if self.spec.id == OptimizerId::Adam {
                self.second = self.first.clone();
            }
        }
        if self.first.len() != params.len() || self.first.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
            return Err(Error::Shape("optimizer state does not match the parameters".into()));
        }
        self.steps += 1;
        let s = &self.spec;
        match s.id {
            OptimizerId::Sgd => {
                for (p, v) in params.iter_mut().zip(&mut self.first) {
                    for ((w, g), v) in p.value.iter_mut().zip(&p.grad).zip(v.iter_mut()) {
                        let wf = w.f64();
                        *v = s.momentum * *v + g.f64() + s.weight_decay * wf;
                        *w = T::of(wf - lr * *v);
                    }
                }
            }
            OptimizerId::Adam => {
                let t = self.steps as i32;
                let c1 = 1.0 - s.beta1.powi(t);
                let c2 = 1.0 - s.beta2.powi(t);
                for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
                    for (((w, g), m), v) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                        let g = g.f64();
                        let mut wf = w.f64();
                        wf -= lr * s.weight_decay * wf;
                        *m = s.beta1 * *m + (1.0 - s.beta1) * g;
                        *v = s.beta2 * *v + (1.0 - s.beta2) * g * g;
                        wf -= lr * (*m / c1) / ((*v / c2).sqrt() + s.eps);
                        *w = T::of(wf);
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scheduler {
    Constant,
    StepDecay {
        gamma: f64,
        step_size: usize,
    },
    Cosine {
        #[serde(default)]
        lr_min: f64,
        /// Period in epochs; defaults to the training budget.
        #[serde(default)]
        epochs: Option<usize>,
    },
}

impl Scheduler {
    /// Learning rate of epoch `epoch` (0-based) given base rate `lr0` and
    /// the run's epoch budget.
    pub fn lr(&self, lr0: f64, epoch: usize, budget: usize) -> f64 {
        match *self {
            Scheduler::Constant => lr0,
            Scheduler::StepDecay { gamma, step_size } => lr0 * gamma.powi((epoch / step_size.max(1)) as i32),
            Scheduler::Cosine { lr_min, epochs } => {
                let period = epochs.unwrap_or(budget).max(1) as f64;
                let phase = (epoch as f64).min(period) / period;
                lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (std::f64::consts::PI * phase).cos())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64, g: f64) -> Param<f64> {
        let mut p = Param::filled("w", vec![1], v);
        p.grad[0] = g;
        p
    }

    #[test]
    fn sgd_step() {
        let mut opt = Optimizer::new(OptimizerSpec::sgd(0.1)).unwrap();
        let mut p = param(1.0, 0.5);
        opt.step(&mut [&mut p], 0.1).unwrap();
        assert!((p.value[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut spec = OptimizerSpec::sgd(0.1);
        spec.momentum = 0.9;
        let mut opt = Optimizer::new(spec).unwrap();
        let mut p = param(0.0, 1.0);
        opt.step(&mut [&mut p], 0.1).unwrap();
        opt.step(&mut [&mut p], 0.1).unwrap();
        assert!((p.value[0] - -(0.1 + 0.19)).abs() < 1e-12);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Optimizer::new(OptimizerSpec::adam(1e-3)).unwrap();
        for g in [0.5, -3.0, 1e-4] {
            let mut p = param(2.0, g);
            opt = Optimizer::new(opt.spec.clone()).unwrap();
            opt.step(&mut [&mut p], 1e-3).unwrap();
            let moved = 2.0 - p.value[0];
            assert!((moved - 1e-3 * g.signum()).abs() < 1e-3 * 1e-3, "{moved}");
        }
    }

    #[test]
    fn adam_decoupled_decay() {
        let mut spec = OptimizerSpec::adam(0.1);
        spec.weight_decay = 0.5;
        let mut opt = Optimizer::new(spec).unwrap();
        let mut p = param(2.0, 0.0);
        opt.step(&mut [&mut p], 0.1).unwrap();
        assert!((p.value[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn zero_grad_leaves_parameters() {
        for spec in [OptimizerSpec::sgd(0.1), OptimizerSpec::adam(0.1)] {
            let mut opt = Optimizer::new(spec).unwrap();
            let mut p = param(1.5, 0.0);
            for _ in 0..3 {
                opt.step(&mut [&mut p], 0.1).unwrap();
            }
            assert_eq!(p.value[0], 1.5);
            assert_eq!(opt.steps, 3);
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        assert!(Optimizer::new(OptimizerSpec::sgd(0.0)).is_err());
        let mut s = OptimizerSpec::sgd(0.1);
        s.momentum = 1.0;
        assert!(Optimizer::new(s).is_err());
    }

    #[test]
    fn schedules() {
        let cos = Scheduler::Cosine {
            lr_min: 0.01,
            epochs: None,
        };
        assert!((cos.lr(1.0, 0, 10) - 1.0).abs() < 1e-15);
        assert!((cos.lr(1.0, 10, 10) - 0.01).abs() < 1e-15);
        assert!((cos.lr(1.0, 5, 10) - 0.505).abs() < 1e-15);
        let step = Scheduler::StepDecay {
            gamma: 0.1,
            step_size: 10,
        };
        assert!((step.lr(1.0, 25, 30) - 0.01).abs() < 1e-15);
        assert_eq!(Scheduler::Constant.lr(0.3, 7, 10), 0.3);
    }
}
