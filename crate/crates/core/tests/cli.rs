use std::path::Path;
use std::process::{Command, Output};

fn headavatar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_headavatar"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: [&str; 16] = [
    "--set",
    "generator={\"resolution\":32,\"latent_dim\":8,\"base_channels\":8,\"aux_base_channels\":8,\"min_channels\":4}",
    "--set",
    "discriminator={\"resolution\":32,\"base_channels\":8,\"min_channels\":4}",
    "--set",
    "backbone={\"seed\":7,\"stages\":[{\"channels\":4,\"stride\":1},{\"channels\":6,\"stride\":2},{\"channels\":8,\"stride\":2}],\"nonlinearity\":{\"kind\":\"leaky_relu\",\"slope\":0.2},\"tap_layers\":[1,2]}",
    "--set",
    "idmrf.tap_layers=[1,2]",
    "--set",
    "cos_taps=[1,2]",
    "--set",
    "steps=2",
    "--set",
    "batch_size=2",
    "--set",
    "checkpoint_every=0",
];

#[test]
fn misspelled_subcommand_is_usage_error() {
    let out = headavatar(&["trian", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train"));
}

#[test]
fn help_exits_zero() {
    assert_eq!(headavatar(&["--help"]).status.code(), Some(0));
}

#[test]
fn unknown_override_key_is_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let out = headavatar(&["synth", "--out", p(d.path()), "--set", "no_such_key=3"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_is_domain_error() {
    let d = tempfile::tempdir().unwrap();
    let out = headavatar(&["train", "--data", p(&d.path().join("nothing")), "--out", p(&d.path().join("run"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim().lines().count(), 1, "{err}");
    assert!(err.starts_with("error:"));
}

#[test]
fn invalid_config_value_is_domain_error() {
    let d = tempfile::tempdir().unwrap();
    let out = headavatar(&["synth", "--out", p(d.path()), "--set", "frame_count=1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn full_pipeline_synth_train_reenact_eval() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    let run = d.path().join("run");
    let re = d.path().join("re");
    let ev = d.path().join("ev");

    let out = headavatar(&[
        "synth",
        "--out",
        p(&data),
        "--seed",
        "3",
        "--set",
        "resolution=32",
        "--set",
        "frame_count=6",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("manifest.json").exists());
    assert!(data.join("effective-config.json").exists());

    let mut args = vec!["train", "--data", p(&data), "--out", p(&run), "--deterministic"];
    args.extend(TINY);
    let out = headavatar(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = run.join("final.hav");
    assert!(ckpt.exists());
    let eff: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("effective-config.json")).unwrap()).unwrap();
    assert_eq!(eff["config"]["steps"], 2);
    assert_eq!(eff["config"]["deterministic"], true);

    let out = headavatar(&["reenact", "--checkpoint", p(&ckpt), "--driving", p(&data), "--out", p(&re)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(re.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["frame_count"], 6);
    assert!(report["fps"].as_f64().unwrap() > 0.0);
    assert!(re.join("frames").join("000000_avatar.png").exists());

    let out = headavatar(&[
        "eval",
        "--pred",
        p(&re),
        "--ref",
        p(&data),
        "--out",
        p(&ev),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ev.join("report.json")).unwrap()).unwrap();
    assert_eq!(m["frame_count"], 6);
    assert!(m["ssim"].as_f64().unwrap() <= 1.0);

    // resuming a finished run does no further steps and keeps the hash
    let resumed = d.path().join("resumed");
    let out = headavatar(&["train", "--data", p(&data), "--out", p(&resumed), "--resume", p(&ckpt)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read(&ckpt).unwrap(),
        std::fs::read(resumed.join("final.hav")).unwrap()
    );
}

#[test]
fn corrupted_checkpoint_is_domain_error() {
    let d = tempfile::tempdir().unwrap();
    let bogus = d.path().join("bogus.hav");
    std::fs::write(&bogus, b"HAVARCH1 but not really").unwrap();
    let out = headavatar(&[
        "reenact",
        "--checkpoint",
        p(&bogus),
        "--driving",
        p(d.path()),
        "--out",
        p(&d.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
