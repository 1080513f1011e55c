use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pidd::pipeline::commands::{EvalReport, EVAL_REPORT, TRAIN_STATUS, WEIGHTS_DIR};
use pidd::pipeline::config::{sha256_file, CONFIG_FILE};
use pidd::pipeline::pgm::{import_image, PGM_MAX};
use pidd::pipeline::PipelineConfig;
use pidd::learned::NetworkConfig;
use pidd::synth::dataset::MANIFEST;

fn pidd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pidd"))
        .args(args)
        .env_remove("PIDD_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = pidd(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn synth(dir: &Path, shots: &str, snr: &str) -> PathBuf {
    let data = dir.join("data");
    ok(&[
        "synth", "--count", "3", "--size", "16", "--shots", shots, "--coils", "4", "--snr", snr, "--seed", "5", "--out",
        &s(&data),
    ]);
    data
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(pidd(&["--help"]).status.code(), Some(0));
    assert_eq!(pidd(&["frobnicate"]).status.code(), Some(1));
    let missing = dir.path().join("nope");
    let out = pidd(&["recon", "--data", &s(&missing), "--method", "zf", "--out", &s(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    let data = synth(dir.path(), "2", "none");
    let rerun = pidd(&["synth", "--count", "3", "--size", "16", "--out", &s(&data)]);
    assert_eq!(rerun.status.code(), Some(1));
    ok(&["synth", "--count", "2", "--size", "16", "--out", &s(&data), "--force"]);
    let cube = data.join("sample_00000").join("label.parr");
    let out = pidd(&["export", "--input", &s(&cube), "--out", &s(&dir.path().join("c.pgm"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_epoch_training_records_default_network() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "2", "none");
    let train = dir.path().join("train");
    ok(&["train", "--data", &s(&data), "--out", &s(&train), "--epochs", "0"]);
    let cfg = PipelineConfig::load(&train.join(CONFIG_FILE)).unwrap();
    let defaults = NetworkConfig::default();
    assert_eq!((cfg.network.blocks, cfg.network.layers, cfg.network.features), (10, 6, 48));
    assert_eq!(cfg.network.ksize, defaults.ksize);
    assert_eq!(cfg.train.epochs, 0);
    assert!(train.join(WEIGHTS_DIR).join("manifest.json").is_file());
    let status = std::fs::read_to_string(train.join(TRAIN_STATUS)).unwrap();
    assert!(status.contains("completed"), "{status}");
}

#[test]
fn eval_report_and_metric_selection() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "4", "none");
    let (zf, pocs) = (dir.path().join("zf"), dir.path().join("pocs"));
    ok(&["recon", "--data", &s(&data), "--method", "zf", "--out", &s(&zf)]);
    ok(&["recon", "--data", &s(&data), "--method", "pocs-oracle", "--out", &s(&pocs)]);
    let empty = pidd(&["eval", "--data", &s(&data), "--recon", &s(&zf), "--metrics", "", "--out", &s(&dir.path().join("e0"))]);
    assert_eq!(empty.status.code(), Some(1));
    let eval = dir.path().join("eval");
    ok(&["eval", "--data", &s(&data), "--recon", &s(&zf), "--recon", &s(&pocs), "--out", &s(&eval)]);
    let report: EvalReport = serde_json::from_str(&std::fs::read_to_string(eval.join(EVAL_REPORT)).unwrap()).unwrap();
    assert_eq!(report.dataset_sha256, sha256_file(&data.join(MANIFEST)).unwrap());
    let mean_psnr = |m: &str| {
        let agg = report.report.aggregates.iter().find(|a| a.method == m).unwrap();
        assert_eq!(agg.count, 3);
        agg.psnr_db.as_ref().unwrap().mean
    };
    assert!(mean_psnr("pocs-oracle") > mean_psnr("zf") + 10.0);

    let only = dir.path().join("only_gsr");
    ok(&["eval", "--data", &s(&data), "--recon", &s(&zf), "--metrics", "gsr", "--out", &s(&only)]);
    let report: EvalReport = serde_json::from_str(&std::fs::read_to_string(only.join(EVAL_REPORT)).unwrap()).unwrap();
    assert!(report.report.samples.iter().all(|r| r.gsr.is_some() && r.psnr_db.is_none()));
}

#[test]
fn modulation_mosaic_has_flat_diagonal() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "4", "none");
    let out = dir.path().join("m.pgm");
    ok(&[
        "export", "--mosaic", "modulations", "--kind", "phase", "--sample", &s(&data.join("sample_00000")), "--out", &s(&out),
    ]);
    let (scale, values) = import_image(&out).unwrap();
    assert_eq!((scale.width, scale.height), (64, 64));
    let step = (scale.max - scale.min) / PGM_MAX as f64;
    for t in 0..4 {
        let mut sum = 0.0;
        for y in 0..16 {
            for x in 0..16 {
                sum += values[(t * 16 + y) * 64 + t * 16 + x];
            }
        }
        assert!((sum / 256.0).abs() <= step, "tile {t}");
    }
    let again = pidd(&[
        "export", "--mosaic", "modulations", "--sample", &s(&data.join("sample_00000")), "--out", &s(&out),
    ]);
    assert_eq!(again.status.code(), Some(1));
}
