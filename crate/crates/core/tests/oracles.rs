//! Library results against independent reference implementations.

mod common;

use common::oracle;
use common::{brute_idmrf, rand_tensor, random_feature_pair, rel_close, tiny_backbone_spec};
use headavatar::autograd::Var;
use headavatar::backbones::build_surrogate;
use headavatar::detail_loss::{idmrf_features, loss_l1, loss_mask, IdMrfConfig};
use headavatar::metrics::{self, fit_gaussian, frechet_distance, perceptual_distance, GaussianStats, LPIPS_EPS};
use headavatar::reenactor::composite;
use headavatar::rng::keyed_rng;
use headavatar::tensor::Tensor;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[test]
fn idmrf_matches_brute_force_on_random_pairs() {
    let cfg = IdMrfConfig::default();
    for case in 0..20 {
        let (fake, real) = random_feature_pair(case, 4, 8);
        let v = idmrf_features(&Var::constant(fake.clone()), &Var::constant(real.clone()), &cfg)
            .unwrap()
            .item();
        let b = brute_idmrf(&fake, &real, &cfg);
        assert!(rel_close(v, b, 1e-5), "case {case}: vectorized {v} brute {b}");
    }
}

#[test]
fn idmrf_matches_brute_force_with_3x3_patches() {
    let cfg = IdMrfConfig {
        patch_size: 3,
        ..Default::default()
    };
    for case in 0..10 {
        let fake = rand_tensor(case, "p3-fake", &[1, 3, 5, 4], -0.2, 1.0);
        let real = rand_tensor(case, "p3-real", &[1, 3, 5, 4], -0.2, 1.0);
        let v = idmrf_features(&Var::constant(fake.clone()), &Var::constant(real.clone()), &cfg)
            .unwrap()
            .item();
        let b = brute_idmrf(&fake, &real, &cfg);
        assert!(rel_close(v, b, 1e-5), "case {case}: vectorized {v} brute {b}");
    }
}

#[test]
fn idmrf_is_scale_invariant_per_feature_map() {
    let cfg = IdMrfConfig::default();
    let (fake, real) = random_feature_pair(3, 4, 6);
    let base = idmrf_features(&Var::constant(fake.clone()), &Var::constant(real.clone()), &cfg)
        .unwrap()
        .item();
    for alpha in [0.01, 3.0, 250.0] {
        let f = Var::constant(fake.map(|v| v * alpha));
        let r = Var::constant(real.map(|v| v * alpha * 0.5));
        let scaled_fake = idmrf_features(&f, &Var::constant(real.clone()), &cfg).unwrap().item();
        let scaled_both = idmrf_features(&f, &r, &cfg).unwrap().item();
        assert!(rel_close(base, scaled_fake, 1e-9));
        assert!(rel_close(base, scaled_both, 1e-9));
    }
}

#[test]
fn idmrf_on_all_zero_features_is_finite() {
    let z = Var::constant(Tensor::<f64>::zeros(&[1, 4, 3, 3]));
    let v = idmrf_features(&z, &z, &IdMrfConfig::default()).unwrap().item();
    assert!(v.is_finite());
}

#[test]
fn mask_and_l1_match_nested_loops() {
    for case in 0..5 {
        let fm = rand_tensor(case, "fm", &[1, 1, 4, 4], 0.0, 1.0);
        let back = rand_tensor(case, "back", &[1, 1, 4, 4], 0.0, 1.0).map(|v| v.round());
        let target: Vec<f64> = back.data().iter().map(|b| 1.0 - b).collect();
        let got = loss_mask(&Var::constant(fm.clone()), &Var::constant(back)).unwrap().item();
        assert!((got - oracle::mean_abs(fm.data(), &target)).abs() < 1e-7);

        let a = rand_tensor(case, "a", &[2, 3, 4, 4], 0.0, 1.0);
        let b = rand_tensor(case, "b", &[2, 3, 4, 4], 0.0, 1.0);
        let got = loss_l1(&Var::constant(a.clone()), &Var::constant(b.clone())).unwrap().item();
        assert!((got - oracle::mean_abs(a.data(), b.data())).abs() < 1e-7);
    }
}

fn image(seed: u64, role: &str, c: usize, h: usize, w: usize) -> Tensor<f32> {
    rand_tensor(seed, role, &[c, h, w], 0.0, 1.0).cast()
}

#[test]
fn psnr_matches_nested_loops() {
    for case in 0..5 {
        let (a, b) = (image(case, "pa", 3, 16, 16), image(case, "pb", 3, 16, 16));
        assert!((metrics::psnr(&a, &b).unwrap() - oracle::psnr(&a, &b)).abs() < 1e-6);
    }
}

#[test]
fn ssim_matches_window_sums() {
    for case in 0..3 {
        let a = image(case, "sa", 3, 16, 14);
        let b = image(case, "sb", 3, 16, 14).zip_map(&a, |x, y| 0.5 * x + 0.5 * y);
        let got = metrics::ssim(&a, &b).unwrap();
        assert!((got - oracle::ssim(&a, &b)).abs() < 1e-10, "{got}");
    }
}

#[test]
fn ssim_constant_images_closed_form() {
    let a = Tensor::<f32>::full(&[3, 16, 16], 0.3);
    let b = Tensor::<f32>::full(&[3, 16, 16], 0.7);
    let expect = oracle::ssim_constant(0.3f32 as f64, 0.7f32 as f64);
    assert!((metrics::ssim(&a, &b).unwrap() - expect).abs() < 1e-9);
}

#[test]
fn ssim_of_binary_image_and_its_inverse_is_negative() {
    let a = image(9, "bin", 1, 16, 16).map(|v| v.round());
    let inv = a.map(|v| 1.0 - v);
    assert!(metrics::ssim(&a, &inv).unwrap() < 0.0);
}

#[test]
fn ssim_ignores_shared_channel_permutation() {
    let a = image(4, "perm-a", 3, 12, 12);
    let b = image(4, "perm-b", 3, 12, 12);
    let permute = |t: &Tensor<f32>| {
        let p = 144;
        let d = t.data();
        let v: Vec<f32> = [2, 0, 1].iter().flat_map(|&c| d[c * p..(c + 1) * p].to_vec()).collect();
        Tensor::from_vec(&[3, 12, 12], v)
    };
    let s1 = metrics::ssim(&a, &b).unwrap();
    let s2 = metrics::ssim(&permute(&a), &permute(&b)).unwrap();
    assert!((s1 - s2).abs() < 1e-12);
}

#[test]
fn perceptual_distance_matches_nested_loops() {
    let bb = build_surrogate::<f64>(&tiny_backbone_spec()).unwrap();
    for case in 0..3 {
        let (a, b) = (image(case, "la", 3, 16, 16), image(case, "lb", 3, 16, 16));
        let lift = |t: &Tensor<f32>| Var::constant(t.cast::<f64>().reshape(&[1, 3, 16, 16]));
        let fa = bb.extract_features(&lift(&a)).unwrap();
        let fb = bb.extract_features(&lift(&b)).unwrap();
        let mut expect = 0.0;
        for ((_, x), (_, y)) in fa.taps.iter().zip(&fb.taps) {
            let s = x.shape();
            expect += oracle::lpips_layer(x.value().data(), y.value().data(), s[1], s[2] * s[3], LPIPS_EPS);
        }
        let got = perceptual_distance(&a, &b, &bb).unwrap();
        assert!((got - expect).abs() < 1e-6);
        let back = perceptual_distance(&b, &a, &bb).unwrap();
        assert!((got - back).abs() < 1e-9);
        assert_eq!(perceptual_distance(&a, &a, &bb).unwrap(), 0.0);
    }
}

#[test]
fn gaussian_fit_matches_two_pass() {
    let mut rng = keyed_rng(5, 0, "gauss");
    let xs: Vec<Vec<f64>> = (0..30).map(|_| (0..5).map(|_| rng.random_range(-2.0..3.0)).collect()).collect();
    let g = fit_gaussian(&xs).unwrap();
    let (mean, cov) = oracle::gaussian(&xs);
    for i in 0..5 {
        assert!((g.mean[i] - mean[i]).abs() < 1e-10);
        for j in 0..5 {
            assert!((g.cov[(i, j)] - cov[i][j]).abs() < 1e-10);
        }
    }
    let doubled: Vec<Vec<f64>> = xs.iter().chain(xs.iter()).cloned().collect();
    assert!((fit_gaussian(&doubled).unwrap().mean - g.mean.clone()).norm() < 1e-12);
}

fn stats(mu: &[f64; 4], a: &[[f64; 4]; 4]) -> GaussianStats {
    GaussianStats {
        mean: DVector::from_row_slice(mu),
        cov: DMatrix::from_row_slice(4, 4, &oracle::cov_from(a)),
    }
}

#[test]
fn frechet_matches_extended_precision_reference() {
    for (mu1, a1, mu2, a2, expect) in oracle::FRECHET_CASES {
        let (s1, s2) = (stats(&mu1, &a1), stats(&mu2, &a2));
        let d = frechet_distance(&s1, &s2).unwrap();
        assert!((d - expect).abs() < 1e-6, "{d} vs {expect}");
        let rev = frechet_distance(&s2, &s1).unwrap();
        assert!((d - rev).abs() < 1e-8);
    }
}

#[test]
fn frechet_dimension_mismatch_is_error() {
    let s1 = GaussianStats {
        mean: DVector::zeros(2),
        cov: DMatrix::identity(2, 2),
    };
    let s2 = GaussianStats {
        mean: DVector::zeros(3),
        cov: DMatrix::identity(3, 3),
    };
    assert!(frechet_distance(&s1, &s2).is_err());
}

#[test]
fn composite_half_mask_matches_nested_loop() {
    let a = image(1, "ca", 3, 5, 4);
    let bg = image(1, "cb", 3, 5, 4);
    let mask = Tensor::<f32>::full(&[1, 5, 4], 0.5);
    let out = composite(&a, &mask, &bg).unwrap();
    for c in 0..3 {
        for y in 0..5 {
            for x in 0..4 {
                let i = (c * 5 + y) * 4 + x;
                let expect = 0.5 * a.data()[i] as f64 + 0.5 * bg.data()[i] as f64;
                assert!((out.data()[i] as f64 - expect).abs() < 1e-7);
            }
        }
    }
}
