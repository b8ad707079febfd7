use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::style_net::Param;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(mut self, lr: f64) -> Self {
        self.lr = lr;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::Config("Adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Adam with 64-bit moment estimates over 32-bit parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Param]) -> Result<Self> {
        config.validate()?;
        Ok(Adam {
            config,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: Vec<&mut Param>, grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[i].len() {
                return Err(Error::Contract(format!("gradient for {} has the wrong length", p.name)));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..g.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let update = lr * (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
                p.data[j] = (p.data[j] as f64 - update) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = Param::new("x", vec![3], vec![1.0, 1.0, 1.0]).unwrap();
        let mut opt = Adam::new(AdamConfig::default().with_lr(0.1), &[&p]).unwrap();
        opt.step(vec![&mut p], &[vec![2.0, -5.0, 0.0]]).unwrap();
        assert!((p.data[0] - 0.9).abs() < 1e-6);
        assert!((p.data[1] - 1.1).abs() < 1e-6);
        assert_eq!(p.data[2], 1.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Param::new("x", vec![2], vec![3.0, -2.0]).unwrap();
        let mut opt = Adam::new(AdamConfig::default().with_lr(0.05), &[&p]).unwrap();
        for _ in 0..2000 {
            let g = vec![2.0 * (p.data[0] as f64 - 1.0), 2.0 * (p.data[1] as f64 + 0.5)];
            opt.step(vec![&mut p], &[g]).unwrap();
        }
        assert!((p.data[0] - 1.0).abs() < 1e-2);
        assert!((p.data[1] + 0.5).abs() < 1e-2);
    }

    #[test]
    fn rejects_bad_config_and_mismatched_grads() {
        let p = Param::new("x", vec![1], vec![0.0]).unwrap();
        assert!(Adam::new(AdamConfig::default().with_lr(0.0), &[&p]).is_err());
        let mut q = p.clone();
        let mut opt = Adam::new(AdamConfig::default(), &[&p]).unwrap();
        assert!(opt.step(vec![&mut q], &[vec![1.0, 2.0]]).is_err());
    }
}
