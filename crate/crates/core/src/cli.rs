//! Command-line entry point: `synth`, `train`, `reenact` and `eval`.
//!
//! Exit codes: 0 success, 1 domain error (validation, shape, corruption,
//! numerical), 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backbones::{build_surrogate, load_backbone, Backbone, BackboneSpec};
use crate::config;
use crate::dataio::{load_dataset, load_driving, read_png, synthesize_dataset, SynthConfig};
use crate::error::{Error, Result};
use crate::metrics::{self, evaluate_dirs};
use crate::reenactor::{reenact, ReenactMode, Reenactor};
use crate::trainer::{load_checkpoint, train, TrainConfig};

pub const EFFECTIVE_CONFIG: &str = "effective-config.json";

#[derive(Parser, Debug)]
#[command(name = "headavatar", version, about = "Condition-driven head avatar synthesis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON config file; defaults are used when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub deterministic: bool,
    /// Dotted-path override, e.g. `--set weights.mrf=0.1` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Continue from this checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Drive a trained model with render/uv frames.
    Reenact {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Driving dataset directory.
        #[arg(long)]
        driving: PathBuf,
    },
    /// Compare predicted frames against reference frames.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReenactConfig {
    pub mode: Option<ReenactMode>,
    /// Background plate; when set, composites are written as well.
    pub background: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub backbone: BackboneSpec,
    pub backbone_path: Option<PathBuf>,
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) => 2,
        _ => 1,
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn write_effective(out: &Path, subcommand: &str, common: &Common, cfg: &Value, extra: Value) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let doc = json!({
        "subcommand": subcommand,
        "config_file": common.config,
        "overrides": common.overrides,
        "seed": common.seed,
        "deterministic": common.deterministic,
        "config": cfg,
        "arguments": extra,
    });
    let path = out.join(EFFECTIVE_CONFIG);
    std::fs::write(&path, serde_json::to_string_pretty(&doc).expect("json")).map_err(|e| Error::io(&path, e))
}

fn with_flags(common: &Common, has_seed: bool, has_det: bool) -> Vec<String> {
    let mut o = common.overrides.clone();
    if let Some(s) = common.seed {
        if has_seed {
            o.push(format!("seed={s}"));
        }
    }
    if common.deterministic && has_det {
        o.push("deterministic=true".into());
    }
    o
}

fn eval_backbone(cfg: &EvalConfig) -> Result<Backbone<f64>> {
    match &cfg.backbone_path {
        Some(p) => load_backbone(p),
        None => build_surrogate(&cfg.backbone),
    }
}

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { common } => {
            let (cfg, value): (SynthConfig, _) =
                config::load(common.config.as_deref(), &with_flags(&common, true, false))?;
            cfg.check()?;
            write_effective(&common.out, "synth", &common, &value, json!({}))?;
            let m = synthesize_dataset(&cfg, &common.out)?;
            println!(
                "wrote {} frames at {}x{} to {}",
                m.frame_count,
                m.resolution,
                m.resolution,
                common.out.display()
            );
        }
        Command::Train { common, data, resume } => {
            let (cfg, value): (TrainConfig, _) =
                config::load(common.config.as_deref(), &with_flags(&common, true, true))?;
            cfg.check()?;
            write_effective(
                &common.out,
                "train",
                &common,
                &value,
                json!({"data": data, "resume": resume}),
            )?;
            let dataset = load_dataset(&data)?;
            let manifest = match resume {
                Some(ckpt) => {
                    let mut state = load_checkpoint(&ckpt)?;
                    if state.config != cfg {
                        log::warn!("resuming with the checkpoint's own config; command-line config ignored");
                    }
                    state.run(&dataset, &common.out)?
                }
                None => train(&dataset, &cfg, &common.out)?,
            };
            println!(
                "trained to step {}; checkpoint {} (hash {})",
                manifest.step,
                manifest.path.display(),
                manifest.content_hash
            );
        }
        Command::Reenact {
            common,
            checkpoint,
            driving,
        } => {
            let (cfg, value): (ReenactConfig, _) = config::load(common.config.as_deref(), &common.overrides)?;
            write_effective(
                &common.out,
                "reenact",
                &common,
                &value,
                json!({"checkpoint": checkpoint, "driving": driving}),
            )?;
            let reenactor = Reenactor::from_checkpoint(&checkpoint)?;
            let drive = load_driving(&driving)?;
            let background = cfg.background.as_deref().map(read_png).transpose()?;
            let mode = cfg.mode.unwrap_or(ReenactMode::SelfReenact);
            let report = reenact(&reenactor, &drive, mode, &common.out, background.as_ref())?;
            println!(
                "reenacted {} frames: {:.1} FPS (mean {:.2} ms, p90 {:.2} ms)",
                report.frame_count, report.fps, report.mean_latency_ms, report.p90_latency_ms
            );
        }
        Command::Eval {
            common,
            pred,
            reference,
        } => {
            let (cfg, value): (EvalConfig, _) = config::load(common.config.as_deref(), &common.overrides)?;
            write_effective(
                &common.out,
                "eval",
                &common,
                &value,
                json!({"pred": pred, "ref": reference}),
            )?;
            let backbone = eval_backbone(&cfg)?;
            let report = evaluate_dirs(&pred, &reference, &backbone)?;
            metrics::write_report(&report, &common.out.join(metrics::REPORT_FILE))?;
            println!(
                "{} frames: ssim {:.4}, psnr {:.2} dB, perceptual {:.5}, fid {:.4}",
                report.frame_count, report.ssim, report.psnr_db, report.perceptual, report.fid
            );
        }
    }
    Ok(())
}
