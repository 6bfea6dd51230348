//! Analytic gradients against central finite differences in float64.

mod common;

use common::gradcases;
use common::{grad_check_step, rand_tensor, FD_TOL};
use headavatar::autograd::Var;
use headavatar::generators::{GenConfig, Generators, NoiseSet, ToImageBranches};
use headavatar::nn::Bound;
use headavatar::rng::keyed_rng;

fn check(name: &str, err: f64) {
    assert!(err <= FD_TOL, "{name}: relative error {err:.3e} > {FD_TOL:e}");
}

#[test]
fn mask_loss() {
    check("loss_mask", gradcases::mask());
}

#[test]
fn idmrf_loss() {
    check("loss_idmrf", gradcases::idmrf());
}

#[test]
fn l1_loss() {
    check("loss_l1", gradcases::l1());
}

#[test]
fn cos_loss() {
    check("loss_cos", gradcases::cos());
}

#[test]
fn generator_adversarial_loss() {
    check("loss_g", gradcases::gen_adv());
}

#[test]
fn discriminator_loss_logits() {
    check("loss_d", gradcases::disc_logits());
}

#[test]
fn discriminator_loss_weights_with_r1() {
    check("loss_d+r1", gradcases::disc_params());
}

#[test]
fn feature_extractor() {
    check("extract_features", gradcases::features());
}

#[test]
fn generator_pipeline_end_to_end() {
    let cfg = GenConfig {
        resolution: 32,
        latent_dim: 6,
        base_channels: 8,
        aux_base_channels: 8,
        min_channels: 4,
        ..Default::default()
    };
    let g = Generators::<f64>::new(&cfg, 3).unwrap();
    let noise = NoiseSet::<f64>::sample(&cfg, &mut keyed_rng(3, 0, "noise"));
    let render = Var::constant(rand_tensor(3, "ge-render", &[1, 3, 32, 32], 0.0, 1.0));
    let uv = Var::constant(rand_tensor(3, "ge-uv", &[1, 3, 32, 32], 0.0, 1.0));
    let target = Var::constant(rand_tensor(3, "ge-target", &[1, 3, 32, 32], 0.0, 1.0));
    // one parameter tensor of each generator, and the avatar latent
    for name in ["latent.avatar", "face.b8.conv0.weight", "background.b32.to_rgb.affine.weight", "avatar.dec16.conv1.weight"] {
        let k = g.params.names().iter().position(|n| n == name).unwrap_or_else(|| panic!("no parameter {name}"));
        let x = g.params.values()[k].clone();
        let f = |v: &Var<f64>| {
            let mut vars: Vec<Var<f64>> = g.params.values().iter().map(|t| Var::constant(t.clone())).collect();
            vars[k] = v.clone();
            let p = Bound::from_vars(vars);
            let out = g.forward(&p, &render, &uv, &noise, ToImageBranches::All).unwrap();
            out.output.avatar.sub(&target).square().mean().add(&out.output.foreground_mask.mean())
        };
        // Thousands of leaky-ReLU kinks sit on the path; a 1e-4 step
        // occasionally straddles one, so this check uses a finer step.
        let err = grad_check_step(&x, f, Some(12), 3, 1e-5);
        assert!(err <= FD_TOL, "{name}: {err:.3e}");
    }
}
