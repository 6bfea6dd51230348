//! Discriminator and the adversarial loss pair.

use serde::{Deserialize, Serialize};

use crate::autograd::{grad, Var};
use crate::error::{Error, Result};
use crate::nn::{lrelu, Bound, Conv2d, Linear, ParamStore};
use crate::rng::keyed_rng;
use crate::tensor::{Real, Tensor};

/// R1 weight γ.
pub const R1_GAMMA: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscConfig {
    pub resolution: usize,
    pub base_channels: usize,
    pub min_channels: usize,
}

impl Default for DiscConfig {
    fn default() -> Self {
        DiscConfig {
            resolution: 64,
            base_channels: 32,
            min_channels: 8,
        }
    }
}

impl DiscConfig {
    pub fn check(&self) -> Result<()> {
        if !self.resolution.is_power_of_two() || self.resolution < 8 {
            return Err(Error::Config(format!(
                "discriminator resolution must be a power of two >= 8, got {}",
                self.resolution
            )));
        }
        if self.min_channels == 0 || self.base_channels < self.min_channels {
            return Err(Error::Config("discriminator channels must satisfy 1 <= min <= base".into()));
        }
        Ok(())
    }

    pub fn channels(&self, r: usize) -> usize {
        (self.base_channels * 16 / r).clamp(self.min_channels, self.base_channels)
    }
}

/// Strided-convolution pyramid down to 4×4 followed by a two-layer dense head.
#[derive(Clone, Debug)]
pub struct Discriminator<T: Real> {
    pub config: DiscConfig,
    pub params: ParamStore<T>,
    from_rgb: Conv2d,
    downs: Vec<Conv2d>,
    fc: Linear,
    out: Linear,
}

impl<T: Real> Discriminator<T> {
    pub fn new(cfg: &DiscConfig, seed: u64) -> Result<Self> {
        cfg.check()?;
        let mut rng = keyed_rng(seed, 0, "discriminator");
        let mut ps = ParamStore::new();
        let mut r = cfg.resolution;
        let from_rgb = Conv2d::new(&mut ps, "disc.from_rgb", 3, cfg.channels(r), 1, 1, true, &mut rng);
        let mut downs = Vec::new();
        while r > 4 {
            let (cin, cout) = (cfg.channels(r), cfg.channels(r / 2));
            downs.push(Conv2d::new(&mut ps, &format!("disc.down{r}"), cin, cout, 3, 2, true, &mut rng));
            r /= 2;
        }
        let c4 = cfg.channels(4);
        let fc = Linear::new(&mut ps, "disc.fc", c4 * 16, c4, Some(0.0), &mut rng);
        let out = Linear::new(&mut ps, "disc.out", c4, 1, Some(0.0), &mut rng);
        for v in ps.values_mut() {
            *v = v.cast::<f32>().cast();
        }
        Ok(Discriminator {
            config: cfg.clone(),
            params: ps,
            from_rgb,
            downs,
            fc,
            out,
        })
    }

    /// Realness logits `[B]` for images `[B, 3, R, R]` in `[0, 1]`.
    pub fn disc_score(&self, p: &Bound<T>, image: &Var<T>) -> Result<Var<T>> {
        let s = image.shape();
        let r = self.config.resolution;
        if s.len() != 4 || s[1] != 3 || s[2] != r || s[3] != r {
            return Err(Error::shape(format!(
                "discriminator expects [B, 3, {r}, {r}], got {s:?}"
            )));
        }
        let b = s[0];
        let mut x = lrelu(&self.from_rgb.forward(p, &image.scale(T::c(2.0)).add_scalar(-T::one())));
        for conv in &self.downs {
            x = lrelu(&conv.forward(p, &x));
        }
        let flat = x.reshape(&[b, x.value().len() / b]);
        let h = lrelu(&self.fc.forward(p, &flat));
        Ok(self.out.forward(p, &h).reshape(&[b]))
    }

    /// Mean over the batch of `‖∂ Σ D(x) / ∂x‖²`, kept differentiable
    /// with respect to the discriminator parameters.
    pub fn r1_penalty(&self, p: &Bound<T>, real: &Var<T>) -> Result<Var<T>> {
        Ok(self.score_with_r1(p, real)?.1)
    }

    /// Real logits together with their R1 penalty, sharing one forward pass.
    pub fn score_with_r1(&self, p: &Bound<T>, real: &Var<T>) -> Result<(Var<T>, Var<T>)> {
        let x = Var::param(real.value().clone());
        let logits = self.disc_score(p, &x)?;
        let b = real.shape()[0];
        let g = grad(&logits.sum(), std::slice::from_ref(&x), true)
            .pop()
            .flatten()
            .unwrap_or_else(|| Var::constant(Tensor::zeros(real.shape())));
        Ok((logits, g.square().sum().scale(T::one() / T::c(b as f64))))
    }
}

/// Non-saturating generator loss, mean of `softplus(−logit)`.
pub fn loss_g<T: Real>(fake_logits: &Var<T>) -> Var<T> {
    fake_logits.neg().softplus().mean()
}

/// `mean softplus(fake) + mean softplus(−real) + (γ/2)·r1`.
pub fn loss_d<T: Real>(real_logits: &Var<T>, fake_logits: &Var<T>, r1_penalty: &Var<T>) -> Var<T> {
    fake_logits
        .softplus()
        .mean()
        .add(&real_logits.neg().softplus().mean())
        .add(&r1_penalty.scale(T::c(R1_GAMMA / 2.0)))
}
