#![allow(dead_code)]

pub mod gradcases;
pub mod oracle;

use headavatar::autograd::{grad, Var};
use headavatar::backbones::{BackboneSpec, Nonlinearity, Stage};
use headavatar::rng::{keyed_rng, uniform_tensor};
use headavatar::tensor::Tensor;
use rand::Rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-3;

/// Compare the tape gradient of `f` at `x` with central differences.
///
/// Returns the norm-wise relative error `‖g_a − g_fd‖ / max(‖g_a‖, ‖g_fd‖)`
/// over the checked coordinates (all of them, or `max_coords` sampled ones).
pub fn grad_check(x: &Tensor<f64>, f: impl Fn(&Var<f64>) -> Var<f64>, max_coords: Option<usize>, seed: u64) -> f64 {
    grad_check_step(x, f, max_coords, seed, FD_STEP)
}

pub fn grad_check_step(
    x: &Tensor<f64>,
    f: impl Fn(&Var<f64>) -> Var<f64>,
    max_coords: Option<usize>,
    seed: u64,
    h: f64,
) -> f64 {
    let xv = Var::param(x.clone());
    let analytic = grad(&f(&xv), &[xv.clone()], false)[0]
        .as_ref()
        .map(|g| g.value().clone())
        .unwrap_or_else(|| Tensor::zeros(x.shape()));
    let coords: Vec<usize> = match max_coords {
        Some(k) if k < x.len() => {
            let mut rng = keyed_rng(seed, 0, "fd-coords");
            (0..k).map(|_| rng.random_range(0..x.len())).collect()
        }
        _ => (0..x.len()).collect(),
    };
    let eval = |t: Tensor<f64>| f(&Var::constant(t)).item();
    let (mut num, mut na, mut nf) = (0.0, 0.0, 0.0);
    for &i in &coords {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let fd = (eval(plus) - eval(minus)) / (2.0 * h);
        let a = analytic.data()[i];
        num += (a - fd).powi(2);
        na += a * a;
        nf += fd * fd;
    }
    let denom = na.sqrt().max(nf.sqrt());
    if denom == 0.0 {
        0.0
    } else {
        num.sqrt() / denom
    }
}

pub fn rand_tensor(seed: u64, role: &str, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    uniform_tensor(&mut keyed_rng(seed, 0, role), shape, lo, hi)
}

/// A backbone small enough for finite differences on 8×8 and 16×16 inputs.
pub fn tiny_backbone_spec() -> BackboneSpec {
    BackboneSpec {
        seed: 7,
        stages: vec![
            Stage { channels: 4, stride: 1 },
            Stage { channels: 6, stride: 2 },
            Stage { channels: 8, stride: 2 },
        ],
        nonlinearity: Nonlinearity::LeakyRelu { slope: 0.2 },
        tap_layers: vec![1, 2],
    }
}

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

/// A training setup that runs a step in a few milliseconds.
pub fn tiny_train_config() -> headavatar::trainer::TrainConfig {
    use headavatar::adversary::DiscConfig;
    use headavatar::detail_loss::IdMrfConfig;
    use headavatar::generators::GenConfig;
    headavatar::trainer::TrainConfig {
        steps: 4,
        batch_size: 2,
        generator: GenConfig {
            resolution: 32,
            latent_dim: 8,
            base_channels: 8,
            aux_base_channels: 8,
            min_channels: 4,
            ..Default::default()
        },
        discriminator: DiscConfig {
            resolution: 32,
            base_channels: 8,
            min_channels: 4,
        },
        idmrf: IdMrfConfig {
            tap_layers: vec![1, 2],
            ..Default::default()
        },
        backbone: tiny_backbone_spec(),
        cos_taps: vec![1, 2],
        checkpoint_every: 0,
        ..Default::default()
    }
}

/// Synthesize and load a small 32×32 dataset.
pub fn tiny_dataset(dir: &std::path::Path, frames: usize) -> headavatar::dataio::Dataset {
    use headavatar::dataio::{load_dataset, synthesize_dataset, SynthConfig};
    let cfg = SynthConfig {
        resolution: 32,
        frame_count: frames,
        ..Default::default()
    };
    synthesize_dataset(&cfg, dir).unwrap();
    load_dataset(dir).unwrap()
}

/// Random `[1, C, H, W]` feature pair with sizes drawn per case.
pub fn random_feature_pair(case: u64, max_side: usize, max_c: usize) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = keyed_rng(case, 0, "mrf-sizes");
    let c = rng.random_range(1..=max_c);
    let h = rng.random_range(2..=max_side);
    let w = rng.random_range(2..=max_side);
    let fake = rand_tensor(case, "mrf-fake", &[1, c, h, w], -0.2, 1.0);
    let real = rand_tensor(case, "mrf-real", &[1, c, h, w], -0.2, 1.0);
    (fake, real)
}

/// Nested-loop ID-MRF of one `[1, C, H, W]` pair.
pub fn brute_idmrf(fake: &Tensor<f64>, real: &Tensor<f64>, cfg: &headavatar::detail_loss::IdMrfConfig) -> f64 {
    let s = fake.shape();
    let (c, h, w) = (s[1], s[2], s[3]);
    let pf = oracle::patches(fake.data(), c, h, w, cfg.patch_size);
    let pr = oracle::patches(real.data(), c, h, w, cfg.patch_size);
    oracle::idmrf(&pf, &pr, cfg.bandwidth, cfg.epsilon)
}
