use alloc::vec::Vec;

use super::{PolicyParams, TensorGroup};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    /// Learning rate of `log Z`; `None` means `10 * lr`.
    pub log_z_lr: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            log_z_lr: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn log_z_lr(&self) -> f64 {
        self.log_z_lr.unwrap_or(10.0 * self.lr)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn new(params: &PolicyParams, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|(_, t)| alloc::vec![0.0; t.len()])
            .collect();
        Self {
            config,
            second: zeros.clone(),
            first: zeros,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }
}

/// One bias-corrected Adam update of `params` with `grads`.
pub fn grad_step(params: &mut PolicyParams, opt: &mut OptimizerState, grads: &PolicyParams) -> Result<()> {
    let grad_tensors = grads.tensors();
    let mut tensors = params.tensors_mut();
    if grad_tensors.len() != tensors.len() || opt.first.len() != tensors.len() {
        return Err(Error::ShapeMismatch("tensor count differs"));
    }
    for ((pg, p), (gg, g)) in tensors.iter().zip(&grad_tensors) {
        if pg != gg || p.len() != g.len() {
            return Err(Error::ShapeMismatch("tensor shape differs"));
        }
    }
    if opt
        .first
        .iter()
        .zip(&grad_tensors)
        .any(|(m, (_, g))| m.len() != g.len())
    {
        return Err(Error::ShapeMismatch("optimizer moments do not match parameters"));
    }
    if grad_tensors.iter().any(|(_, g)| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFiniteGradient);
    }

    opt.step += 1;
    let c = &opt.config;
    let t = opt.step as i32;
    let bc1 = 1.0 - libm::pow(c.beta1, f64::from(t));
    let bc2 = 1.0 - libm::pow(c.beta2, f64::from(t));
    for (k, (group, p)) in tensors.iter_mut().enumerate() {
        let lr = if *group == TensorGroup::LogZ {
            c.log_z_lr()
        } else {
            c.lr
        };
        let g = grad_tensors[k].1;
        let m = &mut opt.first[k];
        let v = &mut opt.second[k];
        for i in 0..p.len() {
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (libm::sqrt(v_hat) + c.eps);
        }
    }
    Ok(())
}
