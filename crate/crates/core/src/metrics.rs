//! Image-quality metrics: PSNR, SSIM, an LPIPS-style backbone distance and
//! the Fréchet distance between Gaussian fits of backbone embeddings.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::autograd::{no_grad, Var};
use crate::backbones::Backbone;
use crate::dataio::{read_png, Raster, FRAMES_DIR};
use crate::error::{Error, Result};

pub const REPORT_FILE: &str = "report.json";

/// Eigenvalues below `-EIG_TOLERANCE` make the Fréchet distance fail;
/// smaller negatives are rounding noise and are clamped to zero.
pub const EIG_TOLERANCE: f64 = 1e-6;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape(a: &Raster, b: &Raster, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{what}: shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

/// `10·log10(1/MSE)` in dB; identical images give `f64::INFINITY`.
pub fn psnr(a: &Raster, b: &Raster) -> Result<f64> {
    same_shape(a, b, "psnr")?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter over valid positions of one `h × w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for xo in 0..wo {
            rows[y * wo + xo] = (0..k).map(|i| g[i] * x[y * w + xo + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for yo in 0..ho {
        for xo in 0..wo {
            out[yo * wo + xo] = (0..k).map(|i| g[i] * rows[(yo + i) * wo + xo]).sum();
        }
    }
    out
}

/// Mean SSIM over valid 11×11 Gaussian windows and channels, dynamic range 1.
pub fn ssim(a: &Raster, b: &Raster) -> Result<f64> {
    same_shape(a, b, "ssim")?;
    let s = a.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(format!("ssim needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {h}×{w}")));
    }
    let g = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let (ad, bd) = (a.to_f64_vec(), b.to_f64_vec());
    let plane = h * w;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let x = &ad[ch * plane..(ch + 1) * plane];
        let y = &bd[ch * plane..(ch + 1) * plane];
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let (mx, my) = (filter_valid(x, h, w, &g), filter_valid(y, h, w, &g));
        let (exx, eyy, exy) = (filter_valid(&xx, h, w, &g), filter_valid(&yy, h, w, &g), filter_valid(&xy, h, w, &g));
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = exx[i] - ux * ux;
            let vy = eyy[i] - uy * uy;
            let cov = exy[i] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Channel-wise unit normalization used by the perceptual distance.
pub const LPIPS_EPS: f64 = 1e-10;

/// Per tap: unit-normalize channel vectors, take the mean squared
/// difference over channels and space; sum over taps with unit weights.
pub fn perceptual_distance(a: &Raster, b: &Raster, backbone: &Backbone<f64>) -> Result<f64> {
    same_shape(a, b, "perceptual_distance")?;
    let lift = |r: &Raster| {
        let s = r.shape();
        Var::constant(r.cast::<f64>().reshape(&[1, s[0], s[1], s[2]]))
    };
    let (fa, fb) = no_grad(|| -> Result<_> {
        Ok((backbone.extract_features(&lift(a))?, backbone.extract_features(&lift(b))?))
    })?;
    let mut total = 0.0;
    for ((_, x), (_, y)) in fa.taps.iter().zip(&fb.taps) {
        total += normalized_mse(x.value().data(), y.value().data(), x.shape());
    }
    Ok(total)
}

fn normalized_mse(x: &[f64], y: &[f64], shape: &[usize]) -> f64 {
    let (c, plane) = (shape[1], shape[2] * shape[3]);
    let mut acc = 0.0;
    for p in 0..plane {
        let nx = (0..c).map(|k| x[k * plane + p].powi(2)).sum::<f64>().sqrt() + LPIPS_EPS;
        let ny = (0..c).map(|k| y[k * plane + p].powi(2)).sum::<f64>().sqrt() + LPIPS_EPS;
        for k in 0..c {
            let d = x[k * plane + p] / nx - y[k * plane + p] / ny;
            acc += d * d;
        }
    }
    acc / (c * plane) as f64
}

/// Mean and (symmetric) covariance of a set of embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased covariance, symmetrized.
pub fn fit_gaussian(features: &[Vec<f64>]) -> Result<GaussianStats> {
    let n = features.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("need at least 2 feature vectors, got {n}")));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::shape("feature vectors have different lengths"));
    }
    let x = DMatrix::from_fn(n, d, |i, j| features[i][j]);
    let mean = x.row_mean().transpose();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianStats { mean, cov })
}

fn check_eigs(values: &DVector<f64>, what: &str) -> Result<()> {
    if let Some(v) = values.iter().find(|v| **v < -EIG_TOLERANCE) {
        return Err(Error::Numerical(format!("{what} has eigenvalue {v:e} below -{EIG_TOLERANCE:e}")));
    }
    Ok(())
}

/// Principal square root of a symmetric PSD matrix.
fn sqrt_psd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let e = SymmetricEigen::new(m.clone());
    check_eigs(&e.eigenvalues, what)?;
    let s = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    let r = &e.eigenvectors * s * e.eigenvectors.transpose();
    Ok((&r + r.transpose()) * 0.5)
}

/// `‖μ1 − μ2‖² + tr(Σ1 + Σ2 − 2(Σ1Σ2)^½)`; the trace of the root is taken
/// from the symmetric similar matrix `Σ1^½ Σ2 Σ1^½`. Floored at 0.
pub fn frechet_distance(s1: &GaussianStats, s2: &GaussianStats) -> Result<f64> {
    if s1.dim() != s2.dim() || s1.cov.shape() != s2.cov.shape() {
        return Err(Error::shape(format!("Gaussian dimensions {} and {} differ", s1.dim(), s2.dim())));
    }
    let diff = (&s1.mean - &s2.mean).norm_squared();
    let root1 = sqrt_psd(&s1.cov, "first covariance")?;
    let m = &root1 * &s2.cov * &root1;
    let m = (&m + m.transpose()) * 0.5;
    let e = SymmetricEigen::new(m);
    check_eigs(&e.eigenvalues, "covariance product")?;
    let tr_root: f64 = e.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    Ok((diff + s1.cov.trace() + s2.cov.trace() - 2.0 * tr_root).max(0.0))
}

/// Serialize infinite PSNR as the string `"inf"`.
mod inf_sentinel {
    use serde::{Deserialize, Deserializer, Serializer};

    pub const SENTINEL: &str = "inf";

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str(SENTINEL)
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) if t == SENTINEL => Ok(f64::INFINITY),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("unexpected psnr value {t}"))),
        }
    }
}

pub use inf_sentinel::SENTINEL as PSNR_INFINITY_SENTINEL;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ssim: f64,
    /// Mean over frames; `"inf"` when every pair is identical.
    #[serde(with = "inf_sentinel")]
    pub psnr_db: f64,
    pub perceptual: f64,
    pub fid: f64,
    pub frame_count: usize,
    pub backbone_provenance: String,
}

/// Metrics over paired frames. `fid` needs at least two pairs.
pub fn evaluate_pairs(pairs: &[(Raster, Raster)], backbone: &Backbone<f64>) -> Result<MetricReport> {
    if pairs.len() < 2 {
        return Err(Error::Degenerate(format!("evaluation needs at least 2 frames, got {}", pairs.len())));
    }
    let n = pairs.len() as f64;
    let (mut s, mut p, mut l) = (0.0, 0.0, 0.0);
    let mut emb_pred = Vec::new();
    let mut emb_ref = Vec::new();
    for (pred, reference) in pairs {
        s += ssim(pred, reference)?;
        p += psnr(pred, reference)?;
        l += perceptual_distance(pred, reference, backbone)?;
        emb_pred.push(embed(pred, backbone)?);
        emb_ref.push(embed(reference, backbone)?);
    }
    let fid = frechet_distance(&fit_gaussian(&emb_pred)?, &fit_gaussian(&emb_ref)?)?;
    Ok(MetricReport {
        ssim: s / n,
        psnr_db: p / n,
        perceptual: l / n,
        fid,
        frame_count: pairs.len(),
        backbone_provenance: backbone.provenance(),
    })
}

fn embed(r: &Raster, backbone: &Backbone<f64>) -> Result<Vec<f64>> {
    let s = r.shape();
    let x = Var::constant(r.cast::<f64>().reshape(&[1, s[0], s[1], s[2]]));
    Ok(no_grad(|| backbone.embedding(&x))?.value().data().to_vec())
}

/// Frame ids and paths of `frames/NNNNNN_<suffix>.png` in a directory.
fn list_frames(dir: &Path, suffix: &str) -> Result<Vec<(usize, std::path::PathBuf)>> {
    let frames = dir.join(FRAMES_DIR);
    let rd = std::fs::read_dir(&frames).map_err(|e| Error::io(&frames, e))?;
    let tail = format!("_{suffix}.png");
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(&frames, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(&tail).and_then(|s| s.parse::<usize>().ok()) {
            out.push((id, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

/// Compare predicted frames (`*_avatar.png`, or `*_real.png` if there are
/// none) in `pred` against `*_real.png` in `reference`, paired by frame id.
pub fn evaluate_dirs(pred: &Path, reference: &Path, backbone: &Backbone<f64>) -> Result<MetricReport> {
    let mut preds = list_frames(pred, "avatar")?;
    if preds.is_empty() {
        preds = list_frames(pred, "real")?;
    }
    let refs: std::collections::BTreeMap<usize, _> = list_frames(reference, "real")?.into_iter().collect();
    let mut pairs = Vec::with_capacity(preds.len());
    for (id, path) in preds {
        let rp = refs
            .get(&id)
            .ok_or_else(|| Error::Integrity(format!("no reference frame for predicted frame {id}")))?;
        pairs.push((read_png(&path)?, read_png(rp)?));
    }
    evaluate_pairs(&pairs, backbone)
}

pub fn write_report(report: &MetricReport, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}
