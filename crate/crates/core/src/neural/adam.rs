use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamSettings {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// First and second moments, flattened in parameter visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let n = params.n_params();
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, s: &AdamSettings) -> Result<()> {
        let g = grads.to_flat();
        if g.len() != self.m.len() || params.n_params() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} moments, params {}, grads {}",
                self.m.len(),
                params.n_params(),
                g.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - s.beta1.powi(self.step as i32);
        let bc2 = 1.0 - s.beta2.powi(self.step as i32);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut pos = 0;
        params.visit_mut(|_, theta| {
            for x in theta.iter_mut() {
                let gi = g[pos] + s.weight_decay * *x;
                m[pos] = s.beta1 * m[pos] + (1.0 - s.beta1) * gi;
                v[pos] = s.beta2 * v[pos] + (1.0 - s.beta2) * gi * gi;
                let m_hat = m[pos] / bc1;
                let v_hat = v[pos] / bc2;
                *x -= s.lr * m_hat / (v_hat.sqrt() + s.eps);
                pos += 1;
            }
        });
        Ok(())
    }
}
