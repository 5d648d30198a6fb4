//! First-order optimizers over token matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// `None` lets the engine pick: 0 for a direct, purely cosine run, else 0.01.
    pub weight_decay: Option<f64>,
}

pub const DEFAULT_WEIGHT_DECAY: f64 = 0.01;

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 0.02,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: None,
        }
    }
}

impl AdamWConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay.is_none_or(|w| w >= 0.0 && w.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("invalid AdamW hyperparameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Adamw(AdamWConfig),
    Sgd { lr: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adamw(AdamWConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    m: Matrix,
    v: Matrix,
    step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWState {
    pub fn new(rows: usize, cols: usize, config: &AdamWConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            step_count: 0,
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            weight_decay: config.weight_decay.unwrap_or(DEFAULT_WEIGHT_DECAY),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &Matrix {
        &self.m
    }

    pub fn second_moment(&self) -> &Matrix {
        &self.v
    }

    /// One bias-corrected step with decoupled weight decay:
    ///
    /// ```text
    /// m ← β1·m + (1−β1)·g      v ← β2·v + (1−β2)·g²
    /// θ ← θ − lr·( m̂/(√v̂ + ε) + wd·θ )
    /// ```
    pub fn step(&mut self, params: &mut Matrix, grads: &Matrix) -> Result<()> {
        check_shapes(params, grads)?;
        if self.m.shape() != params.shape() {
            return Err(Error::Shape(format!(
                "optimizer state {:?} does not match parameters {:?}",
                self.m.shape(),
                params.shape()
            )));
        }
        let t = self.step_count + 1;
        if !grads.is_finite() {
            return Err(Error::NonFiniteGradient { step: t });
        }
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, &g), m), v) in params
            .as_mut_slice()
            .iter_mut()
            .zip(grads.as_slice())
            .zip(self.m.as_mut_slice())
            .zip(self.v.as_mut_slice())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *p);
        }
        self.step_count = t;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdState {
    lr: f64,
    step_count: u64,
}

impl SgdState {
    pub fn new(lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidParam(format!("SGD learning rate must be > 0, got {lr}")));
        }
        Ok(Self { lr, step_count: 0 })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step(&mut self, params: &mut Matrix, grads: &Matrix) -> Result<()> {
        check_shapes(params, grads)?;
        if !grads.is_finite() {
            return Err(Error::NonFiniteGradient {
                step: self.step_count + 1,
            });
        }
        for (p, g) in params.as_mut_slice().iter_mut().zip(grads.as_slice()) {
            *p -= self.lr * g;
        }
        self.step_count += 1;
        Ok(())
    }
}

fn check_shapes(params: &Matrix, grads: &Matrix) -> Result<()> {
    if params.shape() != grads.shape() {
        return Err(Error::Shape(format!(
            "gradient shape {:?} does not match parameters {:?}",
            grads.shape(),
            params.shape()
        )));
    }
    Ok(())
}

pub fn adamw_step(state: &mut AdamWState, params: &mut Matrix, grads: &Matrix) -> Result<()> {
    state.step(params, grads)
}

pub fn sgd_step(state: &mut SgdState, params: &mut Matrix, grads: &Matrix) -> Result<()> {
    state.step(params, grads)
}

/// Either optimizer behind one interface, as built from an [`OptimizerConfig`].
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    AdamW(AdamWState),
    Sgd(SgdState),
}

impl Optimizer {
    pub fn step(&mut self, params: &mut Matrix, grads: &Matrix) -> Result<()> {
        match self {
            Optimizer::AdamW(s) => s.step(params, grads),
            Optimizer::Sgd(s) => s.step(params, grads),
        }
    }
}
