//! Inference: drive a trained avatar with render/uv frames from another
//! (or the same) sequence, optionally composite over a background plate.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autograd::{no_grad, Var};
use crate::dataio::{write_png, Dataset, Raster, FRAMES_DIR};
use crate::error::{Error, Result};
use crate::generators::{Generators, NoiseSet, ToImageBranches};
use crate::nn::Bound;
use crate::tensor::Tensor;
use crate::trainer::{load_checkpoint, TrainState};

pub const REPORT_FILE: &str = "report.json";

/// Frames per second the report compares against. "Real-time" has no
/// agreed number; this threshold is our own choice.
pub const FPS_THRESHOLD: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReenactMode {
    #[serde(rename = "self")]
    SelfReenact,
    Cross,
}

impl std::str::FromStr for ReenactMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self" => Ok(ReenactMode::SelfReenact),
            "cross" => Ok(ReenactMode::Cross),
            _ => Err(Error::Usage(format!("mode must be `self` or `cross`, got `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReenactReport {
    pub frame_count: usize,
    pub mean_latency_ms: f64,
    pub p50_latency_ms: f64,
    pub p90_latency_ms: f64,
    pub p99_latency_ms: f64,
    pub fps: f64,
    pub mode: ReenactMode,
    pub output_dir: PathBuf,
    /// One-off cost of the face and background canvases, not in the latencies.
    pub setup_ms: f64,
    pub fps_threshold: f64,
    pub meets_fps_threshold: bool,
    pub threshold_note: String,
}

/// Frozen inference snapshot of a trained model.
pub struct Reenactor {
    generators: Generators<f32>,
    params: Bound<f32>,
    noise: NoiseSet<f32>,
    face_canvas: Var<f32>,
    background_canvas: Var<f32>,
    pub setup_ms: f64,
}

/// `(avatar [3, R, R], mask [1, R, R])` for one frame.
pub type FrameOutput = (Raster, Raster);

impl Reenactor {
    pub fn new(state: &TrainState) -> Result<Self> {
        let started = Instant::now();
        let generators = state.generators.clone();
        let params = generators.params.bind(false);
        let noise = state.inference_noise.clone();
        let (face_canvas, background_canvas) = no_grad(|| generators.canvases(&params, &noise))?;
        Ok(Reenactor {
            generators,
            params,
            noise,
            face_canvas,
            background_canvas,
            setup_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        Self::new(&load_checkpoint(path)?)
    }

    pub fn resolution(&self) -> usize {
        self.generators.config.resolution
    }

    /// Generate avatar and mask from render and uv rasters `[3, R, R]`.
    pub fn generate(&self, render: &Raster, uv: &Raster) -> Result<FrameOutput> {
        let r = self.resolution();
        for (what, t) in [("render", render), ("uv", uv)] {
            if t.shape() != [3, r, r] {
                return Err(Error::shape(format!("{what} raster {:?}, model expects [3, {r}, {r}]", t.shape())));
            }
        }
        let lift = |t: &Raster| Var::constant(t.reshape(&[1, 3, r, r]));
        let out = no_grad(|| {
            self.generators.avatar_from_canvases(
                &self.params,
                &self.face_canvas,
                &self.background_canvas,
                &lift(render),
                &lift(uv),
                &self.noise,
                ToImageBranches::All,
            )
        })?;
        Ok((
            out.avatar.value().reshape(&[3, r, r]),
            out.foreground_mask.value().reshape(&[1, r, r]),
        ))
    }
}

/// `I_FM ⊙ I_A + (1 − I_FM) ⊙ background`, clamped to `[0, 1]`.
pub fn composite(avatar: &Raster, mask: &Raster, background: &Raster) -> Result<Raster> {
    let s = avatar.shape();
    if s.len() != 3 || background.shape() != s || mask.shape() != [1, s[1], s[2]] {
        return Err(Error::shape(format!(
            "composite: avatar {:?}, mask {:?}, background {:?}",
            s,
            mask.shape(),
            background.shape()
        )));
    }
    let plane = s[1] * s[2];
    let (a, m, b) = (avatar.data(), mask.data(), background.data());
    let out = (0..a.len())
        .map(|i| {
            let k = m[i % plane];
            (k * a[i] + (1.0 - k) * b[i]).clamp(0.0, 1.0)
        })
        .collect();
    Ok(Tensor::from_vec(s, out))
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    // nearest-rank
    let rank = ((q / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Reenact every driving frame and write avatars, masks (and composites
/// if a background plate is given) plus `report.json` under `out`.
pub fn reenact(
    reenactor: &Reenactor,
    driving: &Dataset,
    mode: ReenactMode,
    out: &Path,
    background: Option<&Raster>,
) -> Result<ReenactReport> {
    let r = reenactor.resolution();
    if driving.resolution() != r {
        return Err(Error::shape(format!(
            "driving resolution {} differs from model resolution {r}",
            driving.resolution()
        )));
    }
    let frames_dir = out.join(FRAMES_DIR);
    std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let mut latencies = Vec::with_capacity(driving.len());
    for f in &driving.frames {
        let t = Instant::now();
        let (avatar, mask) = reenactor.generate(&f.render_image, &f.uv_image)?;
        latencies.push(t.elapsed().as_secs_f64() * 1e3);
        let id = f.frame_id;
        write_png(&frames_dir.join(format!("{id:06}_avatar.png")), &avatar)?;
        write_png(&frames_dir.join(format!("{id:06}_mask.png")), &mask)?;
        if let Some(bg) = background {
            let c = composite(&avatar, &mask, bg)?;
            write_png(&frames_dir.join(format!("{id:06}_composite.png")), &c)?;
        }
    }
    let report = summarize(&latencies, mode, out, reenactor.setup_ms);
    let path = out.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

fn summarize(latencies: &[f64], mode: ReenactMode, out: &Path, setup_ms: f64) -> ReenactReport {
    let n = latencies.len();
    let mean = if n == 0 { 0.0 } else { latencies.iter().sum::<f64>() / n as f64 };
    let mut sorted = latencies.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pct = |q| if n == 0 { 0.0 } else { percentile(&sorted, q) };
    let fps = if mean > 0.0 { 1000.0 / mean } else { 0.0 };
    ReenactReport {
        frame_count: n,
        mean_latency_ms: mean,
        p50_latency_ms: pct(50.0),
        p90_latency_ms: pct(90.0),
        p99_latency_ms: pct(99.0),
        fps,
        mode,
        output_dir: out.to_path_buf(),
        setup_ms,
        fps_threshold: FPS_THRESHOLD,
        meets_fps_threshold: fps >= FPS_THRESHOLD,
        threshold_note: "real-time has no agreed number; 10 FPS at 64x64 on one CPU core is a chosen bar".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composite_extremes() {
        let a = Tensor::from_vec(&[3, 1, 2], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let b = Tensor::from_vec(&[3, 1, 2], vec![0.9, 0.8, 0.7, 0.6, 0.5, 0.4]);
        assert_eq!(composite(&a, &Tensor::ones(&[1, 1, 2]), &b).unwrap(), a);
        assert_eq!(composite(&a, &Tensor::zeros(&[1, 1, 2]), &b).unwrap(), b);
        assert!(composite(&a, &Tensor::ones(&[1, 2, 1]), &b).is_err());
    }

    #[test]
    fn percentiles_nearest_rank() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 5.0);
        assert_eq!(percentile(&v, 90.0), 9.0);
        assert_eq!(percentile(&v, 99.0), 10.0);
        let r = summarize(&[10.0, 30.0], ReenactMode::Cross, Path::new("x"), 0.0);
        assert!((r.fps - 50.0).abs() < 1e-12);
    }
}
