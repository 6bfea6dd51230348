//! Checkpoint archives: config snapshot, step, all parameters (latents
//! included), inference noise and optimizer moments.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{TrainConfig, TrainState};
use crate::archive::Archive;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::optim::Adam;
use crate::tensor::Tensor;

pub const CHECKPOINT_KIND: &str = "headavatar-checkpoint";

/// What a written checkpoint contains, without the tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub path: PathBuf,
    pub step: u64,
    pub config: TrainConfig,
    pub blob_names: Vec<String>,
    pub content_hash: String,
}

fn push_store(a: &mut Archive, prefix: &str, ps: &ParamStore<f32>) {
    for (name, t) in ps.iter() {
        a.push(format!("{prefix}/{name}"), t);
    }
}

fn push_adam(a: &mut Archive, prefix: &str, names: &[String], opt: &Adam) {
    for (name, t) in names.iter().zip(&opt.m) {
        a.push(format!("{prefix}.m/{name}"), t);
    }
    for (name, t) in names.iter().zip(&opt.v) {
        a.push(format!("{prefix}.v/{name}"), t);
    }
}

pub(crate) fn to_archive(state: &TrainState) -> Archive {
    let mut a = Archive::new(json!({
        "kind": CHECKPOINT_KIND,
        "step": state.step,
        "config": state.config,
        "gen_opt_step": state.gen_opt.step,
        "disc_opt_step": state.disc_opt.step,
        "backbone": state.backbone.provenance(),
    }));
    push_store(&mut a, "gen", &state.generators.params);
    push_store(&mut a, "disc", &state.discriminator.params);
    for (name, t) in state.inference_noise.named() {
        a.push(name, t);
    }
    push_adam(&mut a, "gen_opt", state.generators.params.names(), &state.gen_opt);
    push_adam(&mut a, "disc_opt", state.discriminator.params.names(), &state.disc_opt);
    a
}

/// Write `state` to `path` and describe what was written.
pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<CheckpointManifest> {
    let a = to_archive(state);
    a.write(path)?;
    Ok(CheckpointManifest {
        path: path.to_path_buf(),
        step: state.step,
        config: state.config.clone(),
        blob_names: a.blobs.iter().map(|(n, _)| n.clone()).collect(),
        content_hash: a.content_hash(),
    })
}

/// Load a checkpoint, rebuilding the model from its own config snapshot.
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let a = Archive::read(path)?;
    let cfg = config_of(&a)?;
    restore(&a, &cfg)
}

/// Load a checkpoint into a model built from `cfg`; any tensor whose name
/// or shape disagrees with `cfg` is a format error.
pub fn load_checkpoint_with(path: &Path, cfg: &TrainConfig) -> Result<TrainState> {
    let a = Archive::read(path)?;
    restore(&a, cfg)
}

fn config_of(a: &Archive) -> Result<TrainConfig> {
    if a.meta.get("kind").and_then(|k| k.as_str()) != Some(CHECKPOINT_KIND) {
        return Err(Error::Format("archive is not a training checkpoint".into()));
    }
    serde_json::from_value(a.meta["config"].clone()).map_err(|e| Error::Format(format!("checkpoint config: {e}")))
}

fn restore(a: &Archive, cfg: &TrainConfig) -> Result<TrainState> {
    config_of(a)?;
    let u64_meta = |key: &str| {
        a.meta
            .get(key)
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Format(format!("checkpoint meta lacks {key}")))
    };
    let mut state = TrainState::new(cfg).map_err(|e| match e {
        Error::Config(m) => Error::Format(format!("checkpoint config invalid: {m}")),
        other => other,
    })?;
    state.step = u64_meta("step")?;
    state.gen_opt.step = u64_meta("gen_opt_step")?;
    state.disc_opt.step = u64_meta("disc_opt_step")?;

    let expected = to_archive(&state);
    if expected.blobs.len() != a.blobs.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {} tensors, configuration needs {}",
            a.blobs.len(),
            expected.blobs.len()
        )));
    }
    for ((en, et), (n, t)) in expected.blobs.iter().zip(&a.blobs) {
        if en != n || et.shape() != t.shape() {
            return Err(Error::Format(format!(
                "checkpoint tensor {n} {:?} does not match expected {en} {:?}",
                t.shape(),
                et.shape()
            )));
        }
    }

    let mut blobs = a.blobs.iter().map(|(_, t)| t.clone());
    let mut take = |dst: &mut Tensor<f32>| *dst = blobs.next().expect("counted above");
    state.generators.params.values_mut().iter_mut().for_each(&mut take);
    state.discriminator.params.values_mut().iter_mut().for_each(&mut take);
    let noise = &mut state.inference_noise;
    for set in [&mut noise.face, &mut noise.background, &mut noise.avatar] {
        set.iter_mut().for_each(&mut take);
    }
    for opt in [&mut state.gen_opt, &mut state.disc_opt] {
        opt.m.iter_mut().for_each(&mut take);
        opt.v.iter_mut().for_each(&mut take);
    }
    Ok(state)
}
