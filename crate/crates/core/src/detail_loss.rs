//! Detail texture reconstruction objective: foreground-mask MAE, ID-MRF on
//! the masked foreground, full-frame L1, feature-cosine loss, and their
//! weighted combination with the adversarial terms.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::backbones::{Backbone, Embedder};
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Stabilizer inside vector norms, `sqrt(|x|² + NORM_EPS²)`.
pub const NORM_EPS: f64 = 1e-8;
/// Stabilizer of the cosine loss denominator.
pub const COS_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub mask: f64,
    pub mrf: f64,
    pub l1: f64,
    pub cos: f64,
    pub d: f64,
    pub g: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            mask: 3.0,
            mrf: 5e-2,
            l1: 1.0,
            cos: 1.0,
            d: 1.0,
            g: 1.0,
        }
    }
}

impl LossWeights {
    pub fn check(&self) -> Result<()> {
        let all = [self.mask, self.mrf, self.l1, self.cos, self.d, self.g];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        LossWeights {
            mask: self.mask * k,
            mrf: self.mrf * k,
            l1: self.l1 * k,
            cos: self.cos * k,
            d: self.d * k,
            g: self.g * k,
        }
    }
}

/// Per-term loss values of one step plus the two weighted objectives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mask: f64,
    pub mrf: f64,
    pub l1: f64,
    pub cos: f64,
    pub g: f64,
    pub d: f64,
    /// Generator objective.
    pub total: f64,
    /// Discriminator objective.
    pub disc_total: f64,
}

impl LossBreakdown {
    pub fn from_terms(mask: f64, mrf: f64, l1: f64, cos: f64, g: f64, d: f64, w: &LossWeights) -> Self {
        let mut b = LossBreakdown {
            mask,
            mrf,
            l1,
            cos,
            g,
            d,
            total: 0.0,
            disc_total: 0.0,
        };
        (b.total, b.disc_total) = total_loss(&b, w);
        b
    }

    pub fn all_finite(&self) -> bool {
        [self.mask, self.mrf, self.l1, self.cos, self.g, self.d, self.total, self.disc_total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// `(generator_total, discriminator_total)`; the adversarial pair drives
/// different parameter sets, so the sum splits in two.
pub fn total_loss(b: &LossBreakdown, w: &LossWeights) -> (f64, f64) {
    let generator = w.mask * b.mask + w.mrf * b.mrf + w.l1 * b.l1 + w.cos * b.cos + w.g * b.g;
    (generator, w.d * b.d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdMrfConfig {
    pub bandwidth: f64,
    pub epsilon: f64,
    pub patch_size: usize,
    pub tap_layers: Vec<usize>,
    pub layer_weights: Vec<f64>,
    /// Subtract the mean real feature before cosine similarity.
    pub mean_center: bool,
}

impl Default for IdMrfConfig {
    fn default() -> Self {
        IdMrfConfig {
            bandwidth: 0.5,
            epsilon: 1e-5,
            patch_size: 1,
            tap_layers: vec![2, 3],
            layer_weights: vec![1.0, 1.0],
            mean_center: false,
        }
    }
}

impl IdMrfConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::Config("ID-MRF bandwidth and epsilon must be > 0".into()));
        }
        if !matches!(self.patch_size, 1 | 3) {
            return Err(Error::Config(format!("ID-MRF patch_size must be 1 or 3, got {}", self.patch_size)));
        }
        if self.layer_weights.len() != self.tap_layers.len() {
            return Err(Error::Config("ID-MRF layer_weights must match tap_layers".into()));
        }
        if self.layer_weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("ID-MRF layer weights must be >= 0".into()));
        }
        Ok(())
    }
}

fn same_shape<T: Real>(a: &Var<T>, b: &Var<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Mean absolute error between the predicted foreground mask and `1 − I_back`.
pub fn loss_mask<T: Real>(fg_mask: &Var<T>, background: &Var<T>) -> Result<Var<T>> {
    same_shape(fg_mask, background, "loss_mask")?;
    let target = background.neg().add_scalar(T::one());
    Ok(fg_mask.sub(&target).abs().mean())
}

/// Mean absolute pixel difference over the full frame.
pub fn loss_l1<T: Real>(avatar: &Var<T>, real: &Var<T>) -> Result<Var<T>> {
    same_shape(avatar, real, "loss_l1")?;
    Ok(avatar.sub(real).abs().mean())
}

fn norm_rows<T: Real>(x: &Var<T>, axis: usize) -> Var<T> {
    x.square()
        .sum_keep(&[axis])
        .add_scalar(T::c(NORM_EPS * NORM_EPS))
        .sqrt()
}

/// Mean over taps and batch of `1 − cos(e_fake, e_real)`.
pub fn loss_cos<T: Real, E: Embedder<T> + ?Sized>(avatar: &Var<T>, real: &Var<T>, embedder: &E) -> Result<Var<T>> {
    same_shape(avatar, real, "loss_cos")?;
    let fake = embedder.embed(avatar)?;
    let real = embedder.embed(real)?;
    if fake.is_empty() || fake.len() != real.len() {
        return Err(Error::Config("embedder returned no taps".into()));
    }
    let n = fake.len();
    let mut acc: Option<Var<T>> = None;
    for (f, r) in fake.iter().zip(&real) {
        let dot = f.mul(r).sum_keep(&[1]);
        let nf = norm_rows(f, 1);
        let nr = norm_rows(r, 1);
        let cos = dot.div(&nf.mul(&nr).add_scalar(T::c(COS_EPS)));
        let term = cos.neg().add_scalar(T::one()).mean();
        acc = Some(match acc {
            Some(a) => a.add(&term),
            None => term,
        });
    }
    Ok(acc.unwrap().scale(T::one() / T::c(n as f64)))
}

/// First index of the maximum and of the runner-up in each row of a
/// row-major `rows × cols` matrix.
fn top2_per_row<T: Real>(m: &[T], rows: usize, cols: usize) -> Vec<(usize, usize)> {
    (0..rows)
        .map(|r| {
            let row = &m[r * cols..(r + 1) * cols];
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            let mut second = if best == 0 { 1 } else { 0 };
            for (j, v) in row.iter().enumerate() {
                if j != best && *v > row[second] {
                    second = j;
                }
            }
            (best, second)
        })
        .collect()
}

/// ID-MRF term for one layer: `fake` is `[D, Nv]` and `real` is `[D, Ns]`,
/// columns being patch descriptors.
pub fn idmrf_patches<T: Real>(fake: &Var<T>, real: &Var<T>, cfg: &IdMrfConfig) -> Result<Var<T>> {
    let (d, nv) = (fake.shape()[0], fake.shape()[1]);
    let ns = real.shape()[1];
    if real.shape()[0] != d {
        return Err(Error::shape("ID-MRF: descriptor sizes differ"));
    }
    if ns < 2 {
        return Err(Error::Degenerate(format!(
            "ID-MRF needs at least 2 real patches per layer, got {ns}"
        )));
    }
    if nv < 1 {
        return Err(Error::Degenerate("ID-MRF needs at least 1 generated patch".into()));
    }
    let (fake, real) = if cfg.mean_center {
        let mu = real.mean_keep(&[1]).detach();
        (fake.sub(&mu), real.sub(&mu))
    } else {
        (fake.clone(), real.clone())
    };
    let fnorm = fake.div(&norm_rows(&fake, 0));
    let rnorm = real.div(&norm_rows(&real, 0));
    // μ(v, s): [Nv, Ns]
    let sim = fnorm.bmm(&rnorm, true, false, false);

    // max over r ≠ s of μ(v, r)
    let top = top2_per_row(sim.value().data(), nv, ns);
    let idx: Vec<usize> = (0..nv)
        .flat_map(|v| {
            let (best, second) = top[v];
            (0..ns).map(move |s| v * ns + if s == best { second } else { best })
        })
        .collect();
    let max_other = sim.gather_flat(Rc::new(idx), &[nv, ns]);

    let logits = sim
        .div(&max_other.add_scalar(T::c(cfg.epsilon)))
        .scale(T::one() / T::c(cfg.bandwidth));
    // RS̄ is evaluated in log space. For s other than the row argmax, the
    // denominator is shifted by the row maximum and keeps the argmax term,
    // so it is ≥ 1. For s = argmax it is summed directly, shifted by the
    // runner-up. Nothing under- or overflows even when one patch dominates.
    let lv = logits.value().data().to_vec();
    let mut shift = Vec::with_capacity(nv * ns);
    let mut is_best = vec![T::zero(); nv * ns];
    let mut drop_best = vec![T::zero(); nv * ns];
    let mut row_max = Vec::with_capacity(nv);
    let mut row_second = Vec::with_capacity(nv);
    let ltop = top2_per_row(&lv, nv, ns);
    for (v, &(b, sec)) in ltop.iter().enumerate() {
        let (m1, m2) = (lv[v * ns + b], lv[v * ns + sec]);
        row_max.push(m1);
        row_second.push(m2);
        for s in 0..ns {
            shift.push(if s == b { m2 } else { m1 });
        }
        is_best[v * ns + b] = T::one();
        drop_best[v * ns + b] = T::c(-1e30);
    }
    let c = |data: Vec<T>, shape: &[usize]| Var::constant(crate::tensor::Tensor::from_vec(shape, data));
    let e1 = logits.sub(&c(row_max, &[nv, 1])).exp();
    let rest1 = e1.sum_keep(&[1]).sub(&e1);
    let e2 = logits.add(&c(drop_best, &[nv, ns])).sub(&c(row_second, &[nv, 1])).exp();
    let rest2 = e2.sum_keep(&[1]);
    let other_mask = c(is_best.iter().map(|&b| T::one() - b).collect(), &[nv, ns]);
    let best_mask = c(is_best, &[nv, ns]);
    // both denominators are ≥ 1: each keeps a term equal to exp(0)
    let others = rest1.mul(&other_mask).add(&rest2.mul(&best_mask));
    let log_rs_bar = logits.sub(&c(shift, &[nv, ns])).sub(&others.ln());

    // max over v of RS̄(v, s), first maximal v in scan order
    let rb = log_rs_bar.value().data();
    let pick: Vec<usize> = (0..ns)
        .map(|s| {
            let mut best = 0;
            for v in 1..nv {
                if rb[v * ns + s] > rb[best * ns + s] {
                    best = v;
                }
            }
            best * ns + s
        })
        .collect();
    let best = log_rs_bar.gather_flat(Rc::new(pick), &[ns]);
    // −log of the mean of exp(best), shifted by its maximum
    let m = best.value().data().iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let lse = best.add_scalar(-m).exp().mean().ln().add_scalar(m);
    Ok(lse.neg())
}

fn patches<T: Real>(features: &Var<T>, b: usize, patch_size: usize) -> Var<T> {
    let s = features.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    let one = features.narrow(0, b, 1);
    if patch_size == 1 {
        one.reshape(&[c, h * w])
    } else {
        let geom = crate::autograd::ConvGeom {
            kernel: patch_size,
            stride: 1,
            pad: 0,
        };
        let cols = one.im2col(geom);
        let n = cols.shape()[2];
        cols.reshape(&[c * patch_size * patch_size, n])
    }
}

/// ID-MRF between two `[B, C, H, W]` feature maps of one layer, averaged
/// over the batch.
pub fn idmrf_features<T: Real>(fake: &Var<T>, real: &Var<T>, cfg: &IdMrfConfig) -> Result<Var<T>> {
    same_shape(fake, real, "ID-MRF features")?;
    let batch = fake.shape()[0];
    let mut acc: Option<Var<T>> = None;
    for b in 0..batch {
        let term = idmrf_patches(&patches(fake, b, cfg.patch_size), &patches(real, b, cfg.patch_size), cfg)?;
        acc = Some(match acc {
            Some(a) => a.add(&term),
            None => term,
        });
    }
    Ok(acc.unwrap().scale(T::one() / T::c(batch as f64)))
}

/// ID-MRF loss between the generated and real foregrounds
/// (`I_FM ⊙ I_A` vs `(1 − I_back) ⊙ I_RA`), summed over the configured taps.
pub fn loss_idmrf<T: Real>(
    fake_fg: &Var<T>,
    real_fg: &Var<T>,
    backbone: &Backbone<T>,
    cfg: &IdMrfConfig,
) -> Result<Var<T>> {
    cfg.check()?;
    same_shape(fake_fg, real_fg, "loss_idmrf")?;
    let fake = backbone.extract_at(fake_fg, &cfg.tap_layers)?;
    let real = backbone.extract_at(&real_fg.detach(), &cfg.tap_layers)?;
    let mut acc: Option<Var<T>> = None;
    for ((stage, f), w) in fake.taps.iter().zip(&cfg.layer_weights) {
        let r = real.get(*stage).expect("same taps");
        let term = idmrf_features(f, r, cfg)?.scale(T::c(*w));
        acc = Some(match acc {
            Some(a) => a.add(&term),
            None => term,
        });
    }
    acc.ok_or_else(|| Error::Config("ID-MRF needs at least one tap layer".into()))
}

/// Hadamard-masked inputs of the ID-MRF term.
pub fn masked_foregrounds<T: Real>(
    fg_mask: &Var<T>,
    avatar: &Var<T>,
    background: &Var<T>,
    real: &Var<T>,
) -> (Var<T>, Var<T>) {
    let fake = avatar.mul(fg_mask);
    let real = real.mul(&background.neg().add_scalar(T::one()));
    (fake, real)
}
