//! Frozen multi-layer feature extractors.
//!
//! The default is a seeded random convolutional pyramid: it has the
//! multi-scale structure the detail losses and perceptual metrics need,
//! without pretrained weights. Real weights can be swapped in through
//! [`load_backbone`] as long as they fit the declared [`BackboneSpec`].

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive::Archive;
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ParamStore};
use crate::rng::keyed_rng;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Nonlinearity {
    LeakyRelu { slope: f64 },
    Tanh,
}

impl Nonlinearity {
    fn apply<T: Real>(&self, x: &Var<T>) -> Var<T> {
        match *self {
            Nonlinearity::LeakyRelu { slope } => x.leaky_relu(T::c(slope)),
            Nonlinearity::Tanh => x.tanh(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub channels: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub seed: u64,
    pub stages: Vec<Stage>,
    pub nonlinearity: Nonlinearity,
    pub tap_layers: Vec<usize>,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec {
            seed: 0,
            stages: [16, 32, 64, 128]
                .into_iter()
                .map(|channels| Stage { channels, stride: 2 })
                .collect(),
            nonlinearity: Nonlinearity::LeakyRelu { slope: 0.2 },
            tap_layers: vec![2, 3],
        }
    }
}

impl BackboneSpec {
    pub fn check(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("backbone needs at least one stage".into()));
        }
        if let Some(s) = self.stages.iter().find(|s| !matches!(s.stride, 1 | 2) || s.channels == 0) {
            return Err(Error::Config(format!("invalid backbone stage {s:?}")));
        }
        if let Some(t) = self.tap_layers.iter().find(|&&t| t >= self.stages.len()) {
            return Err(Error::Config(format!(
                "tap layer {t} out of range for {} stages",
                self.stages.len()
            )));
        }
        Ok(())
    }

    pub fn total_stride(&self) -> usize {
        self.stages.iter().map(|s| s.stride).product()
    }

    pub fn embedding_dim(&self) -> usize {
        self.stages.last().map_or(0, |s| s.channels)
    }
}

/// Feature maps `[B, C_l, H_l, W_l]` at the tap layers.
#[derive(Clone, Debug)]
pub struct FeaturePyramid<T: Real> {
    pub taps: Vec<(usize, Var<T>)>,
    pub provenance: String,
}

impl<T: Real> FeaturePyramid<T> {
    pub fn get(&self, stage: usize) -> Option<&Var<T>> {
        self.taps.iter().find(|(s, _)| *s == stage).map(|(_, v)| v)
    }
}

/// Anything that can turn images into per-tap global feature vectors.
pub trait Embedder<T: Real> {
    /// One `[B, D_k]` vector batch per tap.
    fn embed(&self, image: &Var<T>) -> Result<Vec<Var<T>>>;
}

#[derive(Clone, Debug)]
pub struct Backbone<T: Real> {
    spec: BackboneSpec,
    params: ParamStore<T>,
    convs: Vec<Conv2d>,
}

fn stage_name(i: usize) -> String {
    format!("stage{i}")
}

fn layers<T: Real>(spec: &BackboneSpec, ps: &mut ParamStore<T>, rng: &mut impl rand::Rng) -> Vec<Conv2d> {
    let mut in_ch = 3;
    spec.stages
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let c = Conv2d::new(ps, &stage_name(i), in_ch, s.channels, 3, s.stride, false, rng);
            in_ch = s.channels;
            c
        })
        .collect()
}

/// Deterministic random backbone; a pure function of `spec`.
pub fn build_surrogate<T: Real>(spec: &BackboneSpec) -> Result<Backbone<T>> {
    spec.check()?;
    let mut ps = ParamStore::new();
    let mut rng = keyed_rng(spec.seed, 0, "backbone");
    let convs = layers(spec, &mut ps, &mut rng);
    // Weights are kept f32-representable so archives reproduce them exactly.
    for v in ps.values_mut() {
        *v = v.cast::<f32>().cast();
    }
    Ok(Backbone {
        spec: spec.clone(),
        params: ps,
        convs,
    })
}

/// Load weights stored by [`Backbone::save`] (or produced externally in the
/// same layout).
pub fn load_backbone<T: Real>(path: &Path) -> Result<Backbone<T>> {
    let archive = Archive::read(path)?;
    backbone_from_archive(&archive)
}

pub fn backbone_from_archive<T: Real>(archive: &Archive) -> Result<Backbone<T>> {
    let spec: BackboneSpec = serde_json::from_value(
        archive
            .meta
            .get("backbone_spec")
            .cloned()
            .ok_or_else(|| Error::Format("archive has no backbone_spec".into()))?,
    )
    .map_err(|e| Error::Format(format!("backbone_spec: {e}")))?;
    spec.check().map_err(|e| Error::Format(e.to_string()))?;
    let mut ps = ParamStore::<T>::new();
    let mut rng = keyed_rng(0, 0, "unused");
    let convs = layers(&spec, &mut ps, &mut rng);
    if archive.blobs.len() != ps.len() {
        return Err(Error::Format(format!(
            "archive holds {} tensors, spec with {} stages needs {}",
            archive.blobs.len(),
            spec.stages.len(),
            ps.len()
        )));
    }
    for (i, (name, blob)) in archive.blobs.iter().enumerate() {
        let expected_name = ps.names()[i].clone();
        let slot = &mut ps.values_mut()[i];
        if *name != expected_name || blob.shape() != slot.shape() {
            return Err(Error::Format(format!(
                "tensor {name} {:?} does not match spec tensor {expected_name} {:?}",
                blob.shape(),
                slot.shape()
            )));
        }
        *slot = blob.cast();
    }
    Ok(Backbone {
        spec,
        params: ps,
        convs,
    })
}

impl<T: Real> Backbone<T> {
    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new(serde_json::json!({
            "kind": "backbone",
            "backbone_spec": self.spec,
        }));
        for (name, t) in self.params.iter() {
            a.push(name, t);
        }
        a
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().write(path)
    }

    /// Hash of the spec and every weight; identifies which backbone a
    /// metric was computed with.
    pub fn provenance(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.spec).expect("spec serializes"));
        h.update(self.params.content_hash().as_bytes());
        hex::encode(&h.finalize()[..8])
    }

    fn check_input(&self, image: &Var<T>) -> Result<()> {
        let s = image.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::shape(format!("backbone expects [B, 3, H, W], got {s:?}")));
        }
        let min = self.spec.total_stride();
        if s[2] < min || s[3] < min {
            return Err(Error::shape(format!(
                "image {}x{} is smaller than the cumulative stride {min}",
                s[3], s[2]
            )));
        }
        Ok(())
    }

    /// Outputs of every stage for `image` in `[0, 1]`.
    pub fn forward_all(&self, image: &Var<T>) -> Result<Vec<Var<T>>> {
        self.check_input(image)?;
        let p = self.params.bind(false);
        let mut x = image.scale(T::c(2.0)).add_scalar(-T::one());
        let mut outs = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            x = self.spec.nonlinearity.apply(&conv.forward(&p, &x));
            outs.push(x.clone());
        }
        Ok(outs)
    }

    pub fn extract_features(&self, image: &Var<T>) -> Result<FeaturePyramid<T>> {
        self.extract_at(image, &self.spec.tap_layers)
    }

    pub fn extract_at(&self, image: &Var<T>, taps: &[usize]) -> Result<FeaturePyramid<T>> {
        if let Some(t) = taps.iter().find(|&&t| t >= self.convs.len()) {
            return Err(Error::Config(format!("tap layer {t} out of range")));
        }
        let outs = self.forward_all(image)?;
        Ok(FeaturePyramid {
            taps: taps.iter().map(|&t| (t, outs[t].clone())).collect(),
            provenance: self.provenance(),
        })
    }

    /// Globally pooled final stage, `[B, C_last]`.
    pub fn embedding(&self, image: &Var<T>) -> Result<Var<T>> {
        let outs = self.forward_all(image)?;
        Ok(global_pool(outs.last().unwrap()))
    }
}

pub fn global_pool<T: Real>(x: &Var<T>) -> Var<T> {
    let s = x.shape();
    x.mean_keep(&[2, 3]).reshape(&[s[0], s[1]])
}

/// Globally pooled features at a chosen set of backbone stages.
pub struct PooledTaps<'a, T: Real> {
    pub backbone: &'a Backbone<T>,
    pub stages: Vec<usize>,
}

impl<T: Real> Embedder<T> for PooledTaps<'_, T> {
    fn embed(&self, image: &Var<T>) -> Result<Vec<Var<T>>> {
        let pyr = self.backbone.extract_at(image, &self.stages)?;
        Ok(pyr.taps.iter().map(|(_, f)| global_pool(f)).collect())
    }
}

/// Convenience: a batch of `[3, H, W]` rasters as a `[B, 3, H, W]` constant.
pub fn batch_images<T: Real>(images: &[&Tensor<f32>]) -> Var<T> {
    let parts: Vec<Tensor<T>> = images
        .iter()
        .map(|r| {
            let s = r.shape();
            r.cast::<T>().reshape(&[1, s[0], s[1], s[2]])
        })
        .collect();
    Var::constant(Tensor::stack_outer(&parts))
}
