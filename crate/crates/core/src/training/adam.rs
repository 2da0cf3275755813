//! Bias-corrected adaptive-moment optimizer over a list of flat tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl OptimizerState {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }
}

pub fn adam_step(
    opt: &mut OptimizerState,
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    cfg: AdamConfig,
) -> Result<()> {
    let shapes_match = params.len() == opt.m.len()
        && grads.len() == opt.m.len()
        && params
            .iter()
            .zip(grads)
            .zip(&opt.m)
            .all(|((p, g), m)| p.len() == m.len() && g.len() == m.len());
    if !shapes_match {
        return Err(Error::ShapeMismatch("parameters, gradients and optimizer state disagree".into()));
    }
    opt.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(opt.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(opt.t as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut opt.m).zip(&mut opt.v) {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
