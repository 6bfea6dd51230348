//! Adam with bias correction, one moment pair per parameter tensor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-3,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("Adam eps must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl Adam {
    pub fn new<T: Real>(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.values().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Adam {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update; `grads[i]` is `None` for parameters off the loss path
    /// (their moments still decay).
    pub fn update(&mut self, params: &mut ParamStore<f32>, grads: &[Option<Tensor<f32>>]) {
        assert_eq!(grads.len(), params.len());
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (c.beta1 as f32, c.beta2 as f32);
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let step_size = (c.lr / bc1) as f32;
        let inv_bc2_sqrt = (1.0 / bc2.sqrt()) as f32;
        let eps = c.eps as f32;
        for (i, p) in params.values_mut().iter_mut().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let w = p.data_mut();
            match &grads[i] {
                Some(g) => {
                    for (((w, m), v), &g) in w.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        *w -= step_size * *m / (v.sqrt() * inv_bc2_sqrt + eps);
                    }
                }
                None => {
                    for ((w, m), v) in w.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m *= b1;
                        *v *= b2;
                        *w -= step_size * *m / (v.sqrt() * inv_bc2_sqrt + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut ps = ParamStore::<f32>::new();
        ps.add("w", Tensor::from_vec(&[3], vec![1.0, 1.0, 1.0]));
        let mut opt = Adam::new(AdamConfig::default(), &ps);
        opt.update(&mut ps, &[Some(Tensor::from_vec(&[3], vec![0.5, -2.0, 0.0]))]);
        let w = ps.values()[0].data();
        assert!((w[0] - (1.0 - 2e-3)).abs() < 1e-6);
        assert!((w[1] - (1.0 + 2e-3)).abs() < 1e-6);
        assert_eq!(w[2], 1.0);
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut ps = ParamStore::<f32>::new();
        ps.add("w", Tensor::from_vec(&[2], vec![0.25, -1.0]));
        let before = ps.content_hash();
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.0,
                ..Default::default()
            },
            &ps,
        );
        opt.update(&mut ps, &[Some(Tensor::from_vec(&[2], vec![3.0, 1.0]))]);
        assert_eq!(ps.content_hash(), before);
    }
}
