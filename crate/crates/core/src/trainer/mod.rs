//! Alternating discriminator / generator optimization with checkpointing,
//! a step log and ablation switches.

mod checkpoint;

pub use checkpoint::{load_checkpoint, load_checkpoint_with, save_checkpoint, CheckpointManifest, CHECKPOINT_KIND};

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adversary::{loss_d, loss_g, DiscConfig, Discriminator};
use crate::autograd::{grad, Var};
use crate::backbones::{build_surrogate, load_backbone, Backbone, BackboneSpec, PooledTaps};
use crate::dataio::{Dataset, FrameSample};
use crate::detail_loss::{
    loss_cos, loss_idmrf, loss_l1, loss_mask, masked_foregrounds, IdMrfConfig, LossBreakdown, LossWeights,
};
use crate::error::{Error, Result};
use crate::generators::{GenConfig, Generators, NoiseSet, ToImageBranches};
use crate::optim::{Adam, AdamConfig};
use crate::rng::keyed_rng;
use crate::tensor::Tensor;

pub const STEP_LOG_FILE: &str = "steps.ndjson";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.hav";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub deterministic: bool,
    pub use_mrf: bool,
    pub use_cos: bool,
    pub weights: LossWeights,
    pub gen_optimizer: AdamConfig,
    pub disc_optimizer: AdamConfig,
    pub generator: GenConfig,
    pub discriminator: DiscConfig,
    pub idmrf: IdMrfConfig,
    pub backbone: BackboneSpec,
    /// Weights archive replacing the surrogate built from `backbone`.
    pub backbone_path: Option<PathBuf>,
    /// Backbone stages whose pooled features feed the cosine loss.
    pub cos_taps: Vec<usize>,
    /// Every this many steps a checkpoint is written (0: final only).
    pub checkpoint_every: u64,
    /// Frames with `frame_id % holdout_every == 0` are kept out of training
    /// (0: train on everything).
    pub holdout_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 4,
            seed: 0,
            deterministic: true,
            use_mrf: true,
            use_cos: true,
            weights: LossWeights::default(),
            gen_optimizer: AdamConfig::default(),
            disc_optimizer: AdamConfig::default(),
            generator: GenConfig::default(),
            discriminator: DiscConfig::default(),
            idmrf: IdMrfConfig::default(),
            backbone: BackboneSpec::default(),
            backbone_path: None,
            cos_taps: vec![1, 2, 3],
            checkpoint_every: 500,
            holdout_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        for o in [&self.gen_optimizer, &self.disc_optimizer] {
            o.check()?;
            if !(o.lr > 0.0) {
                return Err(Error::Config(format!("learning rates must be > 0, got {}", o.lr)));
            }
        }
        self.weights.check()?;
        self.generator.check()?;
        self.discriminator.check()?;
        self.idmrf.check()?;
        self.backbone.check()?;
        if self.discriminator.resolution != self.generator.resolution {
            return Err(Error::Config(format!(
                "discriminator resolution {} differs from generator resolution {}",
                self.discriminator.resolution, self.generator.resolution
            )));
        }
        if self.cos_taps.is_empty() || self.cos_taps.iter().any(|&t| t >= self.backbone.stages.len()) {
            return Err(Error::Config("cos_taps must name existing backbone stages".into()));
        }
        if self.idmrf.tap_layers.iter().any(|&t| t >= self.backbone.stages.len()) {
            return Err(Error::Config("idmrf.tap_layers must name existing backbone stages".into()));
        }
        Ok(())
    }

    /// Frames the trainer optimizes on.
    pub fn training_split(&self, data: &Dataset) -> Dataset {
        data.split_holdout(self.holdout_every, 0).0
    }

    /// Frames kept out of training.
    pub fn holdout_split(&self, data: &Dataset) -> Dataset {
        data.split_holdout(self.holdout_every, 0).1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub losses: LossBreakdown,
    pub wall_ms: f64,
}

/// Everything that evolves during training.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub step: u64,
    pub generators: Generators<f32>,
    pub discriminator: Discriminator<f32>,
    pub gen_opt: Adam,
    pub disc_opt: Adam,
    /// Noise used at inference; training draws fresh noise every step.
    pub inference_noise: NoiseSet<f32>,
    pub backbone: Backbone<f32>,
}

impl TrainState {
    /// Fresh state; every random draw is keyed by `config.seed`.
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.check()?;
        let backbone = match &config.backbone_path {
            Some(p) => load_backbone(p)?,
            None => build_surrogate(&config.backbone)?,
        };
        let generators = Generators::new(&config.generator, config.seed)?;
        let discriminator = Discriminator::new(&config.discriminator, config.seed)?;
        let inference_noise = NoiseSet::sample(&config.generator, &mut keyed_rng(config.seed, 0, "inference-noise"));
        Ok(TrainState {
            gen_opt: Adam::new(config.gen_optimizer, &generators.params),
            disc_opt: Adam::new(config.disc_optimizer, &discriminator.params),
            config: config.clone(),
            step: 0,
            generators,
            discriminator,
            inference_noise,
            backbone,
        })
    }

    /// Hash over generator, discriminator, noise and optimizer tensors.
    pub fn content_hash(&self) -> String {
        checkpoint::to_archive(self).content_hash()
    }

    /// Frame indices of the batch for the 0-based `step`, drawn from a
    /// fresh permutation per epoch.
    pub fn batch_indices(&self, step: u64, n: usize) -> Vec<usize> {
        let b = self.config.batch_size;
        let mut cached: Option<(u64, Vec<usize>)> = None;
        (0..b)
            .map(|i| {
                let k = step * b as u64 + i as u64;
                let epoch = k / n as u64;
                if cached.as_ref().map(|c| c.0) != Some(epoch) {
                    let mut perm: Vec<usize> = (0..n).collect();
                    perm.shuffle(&mut keyed_rng(self.config.seed, epoch, "shuffle"));
                    cached = Some((epoch, perm));
                }
                cached.as_ref().unwrap().1[(k % n as u64) as usize]
            })
            .collect()
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step(&mut self, batch: &[&FrameSample]) -> Result<StepRecord> {
        let started = Instant::now();
        let res = self.config.generator.resolution;
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        if let Some(f) = batch.iter().find(|f| f.resolution() != res) {
            return Err(Error::shape(format!(
                "frame {} has resolution {}, model expects {res}",
                f.frame_id,
                f.resolution()
            )));
        }
        let step = self.step + 1;
        let w = self.config.weights;
        let stack = |pick: fn(&FrameSample) -> &Tensor<f32>| {
            let parts: Vec<Tensor<f32>> = batch
                .iter()
                .map(|f| {
                    let t = pick(f);
                    let s = t.shape();
                    t.reshape(&[1, s[0], s[1], s[2]])
                })
                .collect();
            Var::constant(Tensor::stack_outer(&parts))
        };
        let real = stack(|f| &f.real_image);
        let render = stack(|f| &f.render_image);
        let uv = stack(|f| &f.uv_image);
        let background = stack(|f| &f.background_mask);

        let noise = NoiseSet::sample(&self.config.generator, &mut keyed_rng(self.config.seed, step, "noise"));
        let gp = self.generators.params.bind(true);
        let out = self.generators.forward(&gp, &render, &uv, &noise, ToImageBranches::All)?;
        let avatar = &out.output.avatar;
        let fg_mask = &out.output.foreground_mask;

        // discriminator update on detached fakes
        let dp = self.discriminator.params.bind(true);
        let (real_logits, r1) = self.discriminator.score_with_r1(&dp, &real)?;
        let fake_logits = self.discriminator.disc_score(&dp, &avatar.detach())?;
        let ld = loss_d(&real_logits, &fake_logits, &r1);
        let d_val = finite("d", step, ld.item() as f64)?;
        let d_grads = grad(&ld.scale(w.d as f32), dp.vars(), false);
        let d_grads = collect_grads("d", step, d_grads)?;
        self.disc_opt.update(&mut self.discriminator.params, &d_grads);

        // generator update against the updated, frozen discriminator
        let dc = self.discriminator.params.bind(false);
        let lg = loss_g(&self.discriminator.disc_score(&dc, avatar)?);
        let lmask = loss_mask(fg_mask, &background)?;
        let ll1 = loss_l1(avatar, &real)?;
        let mut total = lg.scale(w.g as f32).add(&lmask.scale(w.mask as f32)).add(&ll1.scale(w.l1 as f32));
        let mut mrf_val = 0.0;
        if self.config.use_mrf {
            let (fake_fg, real_fg) = masked_foregrounds(fg_mask, avatar, &background, &real);
            let lmrf = loss_idmrf(&fake_fg, &real_fg, &self.backbone, &self.config.idmrf)?;
            mrf_val = finite("mrf", step, lmrf.item() as f64)?;
            total = total.add(&lmrf.scale(w.mrf as f32));
        }
        let mut cos_val = 0.0;
        if self.config.use_cos {
            let taps = PooledTaps {
                backbone: &self.backbone,
                stages: self.config.cos_taps.clone(),
            };
            let lcos = loss_cos(avatar, &real, &taps)?;
            cos_val = finite("cos", step, lcos.item() as f64)?;
            total = total.add(&lcos.scale(w.cos as f32));
        }
        let g_val = finite("g", step, lg.item() as f64)?;
        let mask_val = finite("mask", step, lmask.item() as f64)?;
        let l1_val = finite("l1", step, ll1.item() as f64)?;
        let g_grads = collect_grads("generator_total", step, grad(&total, gp.vars(), false))?;
        self.gen_opt.update(&mut self.generators.params, &g_grads);

        self.step = step;
        let losses = LossBreakdown::from_terms(mask_val, mrf_val, l1_val, cos_val, g_val, d_val, &w);
        finite("generator_total", step, losses.total)?;
        Ok(StepRecord {
            step,
            losses,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Run until `config.steps`, starting from the current step.
    pub fn run(&mut self, data: &Dataset, out: &Path) -> Result<CheckpointManifest> {
        let train = self.config.training_split(data);
        if train.is_empty() {
            return Err(Error::Config("no training frames after the hold-out split".into()));
        }
        std::fs::create_dir_all(out.join(CHECKPOINT_DIR)).map_err(|e| Error::io(out, e))?;
        let log_path = out.join(STEP_LOG_FILE);
        let log_file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        let mut log = BufWriter::new(log_file);
        let mut last = None;
        while self.step < self.config.steps {
            let idx = self.batch_indices(self.step, train.len());
            let batch: Vec<&FrameSample> = idx.iter().map(|&i| &train.frames[i]).collect();
            let rec = self.train_step(&batch)?;
            serde_json::to_writer(&mut log, &rec).expect("step record serializes");
            log.write_all(b"\n").map_err(|e| Error::io(&log_path, e))?;
            if rec.step % 100 == 0 || rec.step == 1 {
                log::info!(
                    "step {} total {:.4} d {:.4} ({:.0} ms)",
                    rec.step,
                    rec.losses.total,
                    rec.losses.disc_total,
                    rec.wall_ms
                );
            }
            let every = self.config.checkpoint_every;
            if every > 0 && self.step % every == 0 && self.step < self.config.steps {
                log.flush().map_err(|e| Error::io(&log_path, e))?;
                save_checkpoint(self, &checkpoint_path(out, self.step))?;
            }
            last = Some(rec);
        }
        log.flush().map_err(|e| Error::io(&log_path, e))?;
        let path = out.join(FINAL_CHECKPOINT);
        let manifest = save_checkpoint(self, &path)?;
        if last.is_none() {
            log::info!("nothing to do: already at step {}", self.step);
        }
        Ok(manifest)
    }
}

pub fn checkpoint_path(out: &Path, step: u64) -> PathBuf {
    out.join(CHECKPOINT_DIR).join(format!("step_{step:08}.hav"))
}

/// Train a fresh model on `data` and write checkpoints plus the step log
/// under `out`.
pub fn train(data: &Dataset, cfg: &TrainConfig, out: &Path) -> Result<CheckpointManifest> {
    let mut state = TrainState::new(cfg)?;
    if data.resolution() != cfg.generator.resolution {
        return Err(Error::shape(format!(
            "dataset resolution {} differs from model resolution {}",
            data.resolution(),
            cfg.generator.resolution
        )));
    }
    let log = out.join(STEP_LOG_FILE);
    if log.exists() {
        std::fs::remove_file(&log).map_err(|e| Error::io(&log, e))?;
    }
    state.run(data, out)
}

/// Continue a run from a checkpoint up to its configured step count.
pub fn resume(data: &Dataset, checkpoint: &Path, out: &Path) -> Result<CheckpointManifest> {
    let mut state = load_checkpoint(checkpoint)?;
    state.run(data, out)
}

/// Read back a step log.
pub fn read_step_log(path: &Path) -> Result<Vec<StepRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Format(format!("step log: {e}"))))
        .collect()
}

fn finite(term: &'static str, step: u64, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { term, step, value })
    }
}

fn collect_grads(term: &'static str, step: u64, grads: Vec<Option<Var<f32>>>) -> Result<Vec<Option<Tensor<f32>>>> {
    grads
        .into_iter()
        .map(|g| match g {
            Some(g) => {
                let t = g.value().clone();
                if !t.all_finite() {
                    let bad = t.data().iter().find(|v| !v.is_finite()).copied().unwrap_or(f32::NAN);
                    return Err(Error::NonFinite {
                        term,
                        step,
                        value: bad as f64,
                    });
                }
                Ok(Some(t))
            }
            None => Ok(None),
        })
        .collect()
}

/// Partition hashes used to check that each update touches only its side.
pub fn partition_hashes(state: &TrainState) -> (String, String) {
    (state.generators.params.content_hash(), state.discriminator.params.content_hash())
}
