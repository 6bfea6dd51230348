//! Tracked-frame dataset: the on-disk layout a face tracker emits, its
//! loader and validator, and a procedural generator with exact ground truth.
//!
//! Layout:
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/frames/000000_real.png     RGB, real frame
//! <dir>/frames/000000_render.png   RGB, face render (black = background)
//! <dir>/frames/000000_uv.png       RGB, (u, v, validity)
//! <dir>/frames/000000_mask.png     gray, 1 = background pixel
//! ```

mod png_io;
mod synth;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use png_io::{quantize, read_png, write_png, write_png16_gray, Raster};
pub use synth::{scene_foreground, synthesize_dataset, SynthConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FRAMES_DIR: &str = "frames";

/// The four rasters a tracker produces for one frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RasterKind {
    Real,
    Render,
    Uv,
    Mask,
}

impl RasterKind {
    pub const ALL: [RasterKind; 4] = [RasterKind::Real, RasterKind::Render, RasterKind::Uv, RasterKind::Mask];

    pub fn suffix(self) -> &'static str {
        match self {
            RasterKind::Real => "real",
            RasterKind::Render => "render",
            RasterKind::Uv => "uv",
            RasterKind::Mask => "mask",
        }
    }

    fn channels(self) -> usize {
        match self {
            RasterKind::Mask => 1,
            _ => 3,
        }
    }
}

pub fn frame_path(dir: &Path, frame_id: usize, kind: RasterKind) -> std::path::PathBuf {
    dir.join(FRAMES_DIR)
        .join(format!("{frame_id:06}_{}.png", kind.suffix()))
}

/// One tracked frame. Rasters are `[C, H, W]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSample {
    pub frame_id: usize,
    pub real_image: Raster,
    pub render_image: Raster,
    pub uv_image: Raster,
    pub background_mask: Raster,
}

impl FrameSample {
    pub fn resolution(&self) -> usize {
        self.render_image.shape()[1]
    }

    fn raster(&self, kind: RasterKind) -> &Raster {
        match kind {
            RasterKind::Real => &self.real_image,
            RasterKind::Render => &self.render_image,
            RasterKind::Uv => &self.uv_image,
            RasterKind::Mask => &self.background_mask,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub resolution: usize,
    pub frame_count: usize,
    pub fps: f64,
    pub identity_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl DatasetManifest {
    pub fn check(&self) -> Result<()> {
        if !self.resolution.is_power_of_two() || !(32..=512).contains(&self.resolution) {
            return Err(Error::Format(format!(
                "manifest resolution {} is not a power of two in [32, 512]",
                self.resolution
            )));
        }
        Ok(())
    }
}

/// A loaded dataset: manifest plus frames in `frame_id` order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub frames: Vec<FrameSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn resolution(&self) -> usize {
        self.manifest.resolution
    }

    /// Split off every `every`-th frame (starting at `offset`) as a
    /// held-out set. Frame ids are kept.
    pub fn split_holdout(&self, every: usize, offset: usize) -> (Dataset, Dataset) {
        let (held, train): (Vec<_>, Vec<_>) = self
            .frames
            .iter()
            .cloned()
            .partition(|f| every > 0 && f.frame_id % every == offset % every);
        let mk = |frames: Vec<FrameSample>| Dataset {
            manifest: DatasetManifest {
                frame_count: frames.len(),
                ..self.manifest.clone()
            },
            frames,
        };
        (mk(train), mk(held))
    }
}

/// One violated [`FrameSample`] invariant.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    SizeMismatch { kind: RasterKind, shape: Vec<usize>, expected: Vec<usize> },
    OutOfRange { kind: RasterKind, min: f32, max: f32 },
    UvValidOnBackground { pixels: usize },
    UvInvalidOnFace { pixels: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SizeMismatch { kind, shape, expected } => {
                write!(f, "{} raster has shape {shape:?}, expected {expected:?}", kind.suffix())
            }
            Violation::OutOfRange { kind, min, max } => {
                write!(f, "{} raster values span [{min}, {max}], outside [0, 1]", kind.suffix())
            }
            Violation::UvValidOnBackground { pixels } => {
                write!(f, "uv validity is nonzero on {pixels} background render pixels")
            }
            Violation::UvInvalidOnFace { pixels } => {
                write!(f, "uv validity is zero on {pixels} face render pixels")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// List every violated invariant of `s`; the report is empty iff valid.
pub fn validate_sample(s: &FrameSample) -> ValidationReport {
    let mut violations = Vec::new();
    let r = s.render_image.shape();
    let (h, w) = if r.len() == 3 { (r[1], r[2]) } else { (0, 0) };
    let mut sizes_ok = true;
    for kind in RasterKind::ALL {
        let shape = s.raster(kind).shape();
        let expected = vec![kind.channels(), h, w];
        if shape != expected.as_slice() {
            sizes_ok = false;
            violations.push(Violation::SizeMismatch {
                kind,
                shape: shape.to_vec(),
                expected,
            });
        }
    }
    for kind in RasterKind::ALL {
        let d = s.raster(kind).data();
        let (min, max) = d
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let bad = d.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0);
        if bad {
            violations.push(Violation::OutOfRange { kind, min, max });
        }
    }
    if sizes_ok {
        let plane = h * w;
        let render = s.render_image.data();
        let validity = &s.uv_image.data()[2 * plane..3 * plane];
        let (mut on_bg, mut off_face) = (0, 0);
        for (i, &valid) in validity.iter().enumerate() {
            let background = (0..3).all(|c| render[c * plane + i] == 0.0);
            if background && valid != 0.0 {
                on_bg += 1;
            } else if !background && valid == 0.0 {
                off_face += 1;
            }
        }
        if on_bg > 0 {
            violations.push(Violation::UvValidOnBackground { pixels: on_bg });
        }
        if off_face > 0 {
            violations.push(Violation::UvInvalidOnFace { pixels: off_face });
        }
    }
    ValidationReport { violations }
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    manifest.check()?;
    Ok(manifest)
}

pub fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn write_sample(dir: &Path, s: &FrameSample) -> Result<()> {
    for kind in RasterKind::ALL {
        write_png(&frame_path(dir, s.frame_id, kind), s.raster(kind))?;
    }
    Ok(())
}

fn load_raster(dir: &Path, frame_id: usize, kind: RasterKind, required: bool) -> Result<Option<Raster>> {
    let path = frame_path(dir, frame_id, kind);
    if !path.exists() {
        if required {
            return Err(Error::Integrity(format!(
                "frame {frame_id} is missing its {} raster ({})",
                kind.suffix(),
                path.display()
            )));
        }
        return Ok(None);
    }
    read_png(&path).map(Some)
}

fn check_loaded(s: &FrameSample, resolution: usize) -> Result<()> {
    for kind in RasterKind::ALL {
        let shape = s.raster(kind).shape();
        if shape[1] != resolution || shape[2] != resolution {
            return Err(Error::Integrity(format!(
                "frame {}: {} raster is {}x{}, manifest declares {resolution}x{resolution}",
                s.frame_id,
                kind.suffix(),
                shape[2],
                shape[1]
            )));
        }
    }
    let report = validate_sample(s);
    if let Some(v) = report.violations.first() {
        return Err(Error::Integrity(format!("frame {}: {v}", s.frame_id)));
    }
    Ok(())
}

/// Load and validate a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    load_dataset_with(dir, true)
}

/// Load a driving sequence for reenactment: render and uv are required,
/// real frames and masks are optional (missing ones are left blank).
pub fn load_driving(dir: &Path) -> Result<Dataset> {
    load_dataset_with(dir, false)
}

fn load_dataset_with(dir: &Path, require_all: bool) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let res = manifest.resolution;
    let mut frames = Vec::with_capacity(manifest.frame_count);
    for id in 0..manifest.frame_count {
        let render = load_raster(dir, id, RasterKind::Render, true)?.unwrap();
        let uv = load_raster(dir, id, RasterKind::Uv, true)?.unwrap();
        let real = load_raster(dir, id, RasterKind::Real, require_all)?;
        let mask = load_raster(dir, id, RasterKind::Mask, require_all)?;
        let sample = FrameSample {
            frame_id: id,
            real_image: real.unwrap_or_else(|| Tensor::zeros(&[3, res, res])),
            render_image: render,
            uv_image: uv,
            background_mask: mask.unwrap_or_else(|| Tensor::zeros(&[1, res, res])),
        };
        check_loaded(&sample, res)?;
        frames.push(sample);
    }
    let extra = frame_path(dir, manifest.frame_count, RasterKind::Render);
    if require_all && extra.exists() {
        return Err(Error::Integrity(format!(
            "manifest declares {} frames but {} exists",
            manifest.frame_count,
            extra.display()
        )));
    }
    Ok(Dataset { manifest, frames })
}
