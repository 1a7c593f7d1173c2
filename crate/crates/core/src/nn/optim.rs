//! AdamW with bias correction and decoupled weight decay.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Optimizer state for one flat parameter space. The space may be handed
/// over as several slices (one per layer tensor); moments are laid out in
/// the order the slices are given.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    step_count: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, param_count: usize) -> Self {
        AdamW { config, step_count: 0, first_moment: vec![0.0; param_count], second_moment: vec![0.0; param_count] }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        self.step_many(&mut [params], &[grads])
    }

    /// One update over all parameter slices:
    /// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`,
    /// `theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + wd theta)`.
    ///
    /// Gradients are checked before anything is modified; a non-finite one
    /// leaves both parameters and state untouched.
    pub fn step_many(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!("{} parameter slices, {} gradient slices", params.len(), grads.len())));
        }
        let mut total = 0;
        for (p, g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(Error::Shape(format!("parameter slice of {} with gradient of {}", p.len(), g.len())));
            }
            total += p.len();
        }
        if total != self.first_moment.len() {
            return Err(Error::Shape(format!("optimizer holds {} moments, got {total} parameters", self.first_moment.len())));
        }
        for (s, g) in grads.iter().enumerate() {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient slice {s} element {i}")));
            }
        }

        self.step_count += 1;
        let AdamWConfig { lr, beta1, beta2, eps, weight_decay } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let mut off = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            let m = &mut self.first_moment[off..off + p.len()];
            let v = &mut self.second_moment[off..off + p.len()];
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                let denom = v_hat.sqrt() + eps;
                // v == 0 means every gradient so far was 0, so m == 0 too
                let adaptive = if denom > 0.0 { m_hat / denom } else { 0.0 };
                p[i] -= lr * (adaptive + weight_decay * p[i]);
            }
            off += p.len();
        }
        Ok(())
    }
}
