//! Finite-difference cases for every differentiable loss and the feature
//! extractor. Each case reports the worst norm-wise relative error over
//! ten random points.

use headavatar::adversary::{loss_d, loss_g, DiscConfig, Discriminator};
use headavatar::autograd::Var;
use headavatar::backbones::{build_surrogate, Backbone, PooledTaps};
use headavatar::detail_loss::{loss_cos, loss_idmrf, loss_l1, loss_mask, IdMrfConfig};
use headavatar::nn::Bound;
use headavatar::tensor::Tensor;

use super::{grad_check, rand_tensor, tiny_backbone_spec};

pub const POINTS: u64 = 10;

fn worst(mut each: impl FnMut(u64) -> f64) -> f64 {
    (0..POINTS).map(&mut each).fold(0.0, f64::max)
}

fn tiny() -> Backbone<f64> {
    build_surrogate(&tiny_backbone_spec()).unwrap()
}

pub fn mask() -> f64 {
    worst(|p| {
        let x = rand_tensor(p, "gm-x", &[2, 1, 6, 6], 0.02, 0.98);
        let back = Var::constant(rand_tensor(p, "gm-b", &[2, 1, 6, 6], 0.0, 1.0).map(|v| v.round()));
        grad_check(&x, |v| loss_mask(v, &back).unwrap(), None, p)
    })
}

pub fn l1() -> f64 {
    worst(|p| {
        let x = rand_tensor(p, "gl-x", &[2, 3, 5, 5], 0.0, 1.0);
        let real = Var::constant(rand_tensor(p, "gl-r", &[2, 3, 5, 5], 0.0, 1.0));
        grad_check(&x, |v| loss_l1(v, &real).unwrap(), None, p)
    })
}

pub fn idmrf() -> f64 {
    let bb = tiny();
    let cfg = IdMrfConfig {
        tap_layers: vec![1, 2],
        ..Default::default()
    };
    worst(|p| {
        let x = rand_tensor(p, "gi-x", &[1, 3, 8, 8], 0.0, 1.0);
        let real = Var::constant(rand_tensor(p, "gi-r", &[1, 3, 8, 8], 0.0, 1.0));
        grad_check(&x, |v| loss_idmrf(v, &real, &bb, &cfg).unwrap(), Some(48), p)
    })
}

pub fn cos() -> f64 {
    let bb = tiny();
    let taps = PooledTaps {
        backbone: &bb,
        stages: vec![1, 2],
    };
    worst(|p| {
        let x = rand_tensor(p, "gc-x", &[2, 3, 8, 8], 0.0, 1.0);
        let real = Var::constant(rand_tensor(p, "gc-r", &[2, 3, 8, 8], 0.0, 1.0));
        grad_check(&x, |v| loss_cos(v, &real, &taps).unwrap(), Some(64), p)
    })
}

pub fn gen_adv() -> f64 {
    worst(|p| {
        let x = rand_tensor(p, "gg-x", &[6], -4.0, 4.0);
        grad_check(&x, loss_g, None, p)
    })
}

/// `loss_d` with respect to both logit vectors (fixed R1 value).
pub fn disc_logits() -> f64 {
    worst(|p| {
        let real = rand_tensor(p, "gd-real", &[4], -4.0, 4.0);
        let fake = rand_tensor(p, "gd-fake", &[4], -4.0, 4.0);
        let r1 = Var::constant(Tensor::scalar(rand_tensor(p, "gd-r1", &[1], 0.0, 3.0).data()[0]));
        let fk = Var::constant(fake.clone());
        let e1 = grad_check(&real, |v| loss_d(v, &fk, &r1), None, p);
        let rl = Var::constant(real.clone());
        let e2 = grad_check(&fake, |v| loss_d(&rl, v, &r1), None, p);
        e1.max(e2)
    })
}

/// Full discriminator loss, R1 included, with respect to discriminator
/// weights: exercises the double backward through the penalty.
pub fn disc_params() -> f64 {
    let cfg = DiscConfig {
        resolution: 16,
        base_channels: 8,
        min_channels: 4,
    };
    worst(|p| {
        let d = Discriminator::<f64>::new(&cfg, p).unwrap();
        let real = Var::constant(rand_tensor(p, "gp-real", &[2, 3, 16, 16], 0.0, 1.0));
        let fake = Var::constant(rand_tensor(p, "gp-fake", &[2, 3, 16, 16], 0.0, 1.0));
        // cycle through the parameter tensors across points
        let k = p as usize % d.params.len();
        let x = d.params.values()[k].clone();
        let f = |v: &Var<f64>| {
            let mut vars: Vec<Var<f64>> = d.params.values().iter().map(|t| Var::constant(t.clone())).collect();
            vars[k] = v.clone();
            let b = Bound::from_vars(vars);
            let (rl, r1) = d.score_with_r1(&b, &real).unwrap();
            let fl = d.disc_score(&b, &fake).unwrap();
            loss_d(&rl, &fl, &r1)
        };
        grad_check(&x, f, Some(24), p)
    })
}

/// A fixed random linear functional of every tapped feature map.
pub fn features() -> f64 {
    let bb = tiny();
    worst(|p| {
        let x = rand_tensor(p, "gf-x", &[1, 3, 8, 8], 0.0, 1.0);
        let shapes: Vec<Vec<usize>> = bb
            .extract_features(&Var::constant(x.clone()))
            .unwrap()
            .taps
            .iter()
            .map(|(_, f)| f.shape().to_vec())
            .collect();
        let probes: Vec<Var<f64>> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| Var::constant(rand_tensor(p * 10 + i as u64, "gf-w", s, -1.0, 1.0)))
            .collect();
        let f = |v: &Var<f64>| {
            let pyr = bb.extract_features(v).unwrap();
            let mut acc = Var::constant(Tensor::scalar(0.0));
            for ((_, t), w) in pyr.taps.iter().zip(&probes) {
                acc = acc.add(&t.mul(w).sum());
            }
            acc
        };
        grad_check(&x, f, Some(64), p)
    })
}

/// Every case as (name, worst relative error).
pub fn suite() -> Vec<(&'static str, f64)> {
    vec![
        ("loss_mask", mask()),
        ("loss_idmrf", idmrf()),
        ("loss_l1", l1()),
        ("loss_cos", cos()),
        ("loss_g", gen_adv()),
        ("loss_d (logits)", disc_logits()),
        ("loss_d (weights, with R1)", disc_params()),
        ("extract_features", features()),
    ]
}
