//! Nested-loop reference implementations, transcribed from the definitions
//! without sharing code with the library.

#![allow(dead_code)]

use headavatar::tensor::Tensor;

/// Norm stabilizer matching the library contract: `sqrt(|x|² + 1e-16)`.
const NORM_EPS2: f64 = 1e-16;

fn norm(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() + NORM_EPS2).sqrt()
}

/// ID-MRF of one layer between patch sets given as lists of vectors.
///
/// μ(v,s) = cos(v, s);
/// RS(v,s) = exp((μ(v,s) / (max_{r≠s} μ(v,r) + ε)) / h);
/// RS̄(v,s) = RS(v,s) / Σ_{r≠s} RS(v,r);
/// L = −log((1/Z) Σ_s max_v RS̄(v,s)).
pub fn idmrf(fake: &[Vec<f64>], real: &[Vec<f64>], h: f64, eps: f64) -> f64 {
    let nv = fake.len();
    let ns = real.len();
    let mut mu = vec![vec![0.0; ns]; nv];
    for v in 0..nv {
        for s in 0..ns {
            let dot: f64 = fake[v].iter().zip(&real[s]).map(|(a, b)| a * b).sum();
            mu[v][s] = dot / (norm(&fake[v]) * norm(&real[s]));
        }
    }
    let mut rs = vec![vec![0.0; ns]; nv];
    for v in 0..nv {
        for s in 0..ns {
            let mut max_other = f64::NEG_INFINITY;
            for r in 0..ns {
                if r != s && mu[v][r] > max_other {
                    max_other = mu[v][r];
                }
            }
            rs[v][s] = ((mu[v][s] / (max_other + eps)) / h).exp();
        }
    }
    let mut total = 0.0;
    for s in 0..ns {
        let mut best = f64::NEG_INFINITY;
        for v in 0..nv {
            let mut denom = 0.0;
            for r in 0..ns {
                if r != s {
                    denom += rs[v][r];
                }
            }
            let rbar = rs[v][s] / denom;
            if rbar > best {
                best = rbar;
            }
        }
        total += best;
    }
    -(total / ns as f64).ln()
}

/// Patch descriptors of a `[C, H, W]` map (`k×k` windows, stride 1, no
/// padding), ordered channel-major inside each descriptor.
pub fn patches(map: &[f64], c: usize, h: usize, w: usize, k: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for y in 0..=h - k {
        for x in 0..=w - k {
            let mut d = Vec::with_capacity(c * k * k);
            for ch in 0..c {
                for dy in 0..k {
                    for dx in 0..k {
                        d.push(map[(ch * h + y + dy) * w + x + dx]);
                    }
                }
            }
            out.push(d);
        }
    }
    out
}

pub fn mean_abs(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).abs();
    }
    s / a.len() as f64
}

pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let (x, y) = (a.data(), b.data());
    let mut se = 0.0;
    for i in 0..x.len() {
        let d = x[i] as f64 - y[i] as f64;
        se += d * d;
    }
    10.0 * (1.0 / (se / x.len() as f64)).log10()
}

/// Windowed SSIM with explicit 11×11 window sums (no separable filtering).
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let s = a.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let k = 11;
    let sigma: f64 = 1.5;
    let mut win = vec![0.0; k * k];
    let mut z = 0.0;
    for i in 0..k {
        for j in 0..k {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            win[i * k + j] = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            z += win[i * k + j];
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (x, y) = (a.data(), b.data());
    let mut total = 0.0;
    let mut n = 0;
    for ch in 0..c {
        for y0 in 0..=h - k {
            for x0 in 0..=w - k {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let g = win[i * k + j] / z;
                        let p = x[(ch * h + y0 + i) * w + x0 + j] as f64;
                        let q = y[(ch * h + y0 + i) * w + x0 + j] as f64;
                        mx += g * p;
                        my += g * q;
                        sxx += g * p * p;
                        syy += g * q * q;
                        sxy += g * p * q;
                    }
                }
                let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                n += 1;
            }
        }
    }
    total / n as f64
}

/// LPIPS-style distance between two `[C, H, W]` feature maps:
/// unit-normalize each pixel's channel vector, mean squared difference.
pub fn lpips_layer(fa: &[f64], fb: &[f64], c: usize, hw: usize, eps: f64) -> f64 {
    let mut total = 0.0;
    for p in 0..hw {
        let va: Vec<f64> = (0..c).map(|k| fa[k * hw + p]).collect();
        let vb: Vec<f64> = (0..c).map(|k| fb[k * hw + p]).collect();
        let na = va.iter().map(|v| v * v).sum::<f64>().sqrt() + eps;
        let nb = vb.iter().map(|v| v * v).sum::<f64>().sqrt() + eps;
        for k in 0..c {
            total += (va[k] / na - vb[k] / nb).powi(2);
        }
    }
    total / (c * hw) as f64
}

/// Two-pass sample mean and unbiased covariance.
pub fn gaussian(xs: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = xs.len();
    let d = xs[0].len();
    let mut mean = vec![0.0; d];
    for x in xs {
        for j in 0..d {
            mean[j] += x[j];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![vec![0.0; d]; d];
    for x in xs {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += (x[i] - mean[i]) * (x[j] - mean[j]);
            }
        }
    }
    for row in &mut cov {
        for v in row {
            *v /= (n - 1) as f64;
        }
    }
    (mean, cov)
}

/// Closed-form SSIM of two constant images: the variance and covariance
/// terms vanish and only the luminance factor remains.
pub fn ssim_constant(a: f64, b: f64) -> f64 {
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    ((2.0 * a * b + c1) * c2) / ((a * a + b * b + c1) * c2)
}

/// Frechet distances computed at 60 significant digits by
/// `tests/oracles/frechet_reference.py` (mpmath eigendecomposition), and
/// cross-checked against scipy's non-symmetric `sqrtm`.
pub const FRECHET_CASES: [([f64; 4], [[f64; 4]; 4], [f64; 4], [[f64; 4]; 4], f64); 3] = [
    (
        [1.0, -2.0, 0.0, 3.0],
        [[2.0, 1.0, 0.0, -1.0], [0.0, 3.0, 1.0, 1.0], [1.0, -1.0, 2.0, 0.0], [0.0, 1.0, -1.0, 2.0]],
        [0.0, 1.0, 1.0, -1.0],
        [[1.0, 0.0, 2.0, 1.0], [1.0, 2.0, 0.0, -1.0], [-1.0, 1.0, 1.0, 1.0], [2.0, 0.0, 1.0, 3.0]],
        29.60573149495900592013781,
    ),
    (
        [0.0, 0.0, 0.0, 0.0],
        [[3.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [0.0, 2.0, 1.0, 0.0], [1.0, 0.0, 1.0, 2.0]],
        [0.5, -0.5, 0.25, 2.0],
        [[1.0, 1.0, 1.0, 1.0], [0.0, 1.0, 1.0, 1.0], [0.0, 0.0, 1.0, 1.0], [0.0, 0.0, 0.0, 1.0]],
        5.952764596755750635592987,
    ),
    (
        [2.0, 2.0, -1.0, 0.0],
        [[1.0, 2.0, 0.0, 0.0], [2.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 0.0]],
        [1.0, 3.0, -1.0, 1.0],
        [[0.0, 1.0, 0.0, 1.0], [1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 1.0, 0.0], [1.0, 1.0, 0.0, 1.0]],
        4.624313007622557323194443,
    ),
];

/// `A·Aᵀ/4` as a row-major matrix.
pub fn cov_from(a: &[[f64; 4]; 4]) -> Vec<f64> {
    let mut out = vec![0.0; 16];
    for i in 0..4 {
        for j in 0..4 {
            out[i * 4 + j] = (0..4).map(|k| a[i][k] * a[j][k]).sum::<f64>() / 4.0;
        }
    }
    out
}
