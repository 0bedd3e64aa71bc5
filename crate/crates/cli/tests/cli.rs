//! End-to-end command tests against the built binary.

use std::fs;
use std::path::Path;
use std::process::Command;

fn ridnet() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ridnet"))
}

fn gen_data(dir: &Path, volumes: usize, seed: u64) {
    let status = ridnet()
        .args([
            "gen-data",
            "--out",
            dir.to_str().unwrap(),
            "--volumes",
            &volumes.to_string(),
            "--dims",
            "9,64,64",
            "--seed",
            &seed.to_string(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
}

#[test]
fn gen_data_writes_pairs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    gen_data(&a, 2, 11);
    gen_data(&b, 2, 11);

    // 2 volumes -> 4 volume files (clean + low) with sidecars
    for stem in ["vol000_clean", "vol000_low", "vol001_clean", "vol001_low"] {
        assert!(a.join(format!("{stem}.json")).exists(), "{stem}.json missing");
        assert!(a.join(format!("{stem}.raw")).exists(), "{stem}.raw missing");
        let raw_a = fs::read(a.join(format!("{stem}.raw"))).unwrap();
        let raw_b = fs::read(b.join(format!("{stem}.raw"))).unwrap();
        assert_eq!(raw_a, raw_b, "{stem}: rerun with same flags must be identical");
    }
    assert!(a.join("resolved_config.txt").exists());
}

#[test]
fn gen_data_rejects_bad_dose_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let status = ridnet()
        .args([
            "gen-data",
            "--out",
            dir.path().to_str().unwrap(),
            "--dose",
            "0",
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn train_denoise_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_data(&data, 2, 3);

    let run = dir.path().join("run");
    let status = ridnet()
        .args([
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            run.to_str().unwrap(),
            "--preset",
            "desk",
            "--loss",
            "mse_only",
            "--epochs",
            "1",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(run.join("checkpoint_final.json").exists());
    let log = fs::read_to_string(run.join("loss_log.csv")).unwrap();
    assert!(log.lines().count() > 1, "loss CSV must be non-empty");
    let resolved = fs::read_to_string(run.join("resolved_config.txt")).unwrap();
    assert!(resolved.contains("loss = mse_only"));

    // denoise keeps dims
    let den = dir.path().join("den");
    fs::create_dir_all(&den).unwrap();
    let status = ridnet()
        .args([
            "denoise",
            "--ckpt",
            run.join("checkpoint_final").to_str().unwrap(),
            "--in",
            data.join("vol000_low").to_str().unwrap(),
            "--out",
            den.join("vol000_denoised").to_str().unwrap(),
            "--tile",
            "32",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(den.join("vol000_denoised.json")).unwrap())
            .unwrap();
    assert_eq!(sidecar["dims"], serde_json::json!([9, 64, 64]));

    // eval needs the clean reference next to the denoised volume
    fs::copy(data.join("vol000_clean.json"), den.join("vol000_clean.json")).unwrap();
    fs::copy(data.join("vol000_clean.raw"), den.join("vol000_clean.raw")).unwrap();
    let evals = dir.path().join("eval");
    let status = ridnet()
        .args([
            "eval",
            "--pairs",
            den.to_str().unwrap(),
            "--out",
            evals.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let csv = fs::read_to_string(evals.join("metrics.csv")).unwrap();
    // 9 slices + header + aggregate
    assert_eq!(csv.trim().lines().count(), 11);
    assert!(evals.join("metrics.json").exists());
}

#[test]
fn paper_preset_echoes_batch_32_epochs_40() {
    // the resolved config is written before data loading, so an empty
    // data directory checks the echo without a paper-scale run
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    let run = dir.path().join("run");
    let status = ridnet()
        .args([
            "train",
            "--data",
            data.to_str().unwrap(),
            "--out",
            run.to_str().unwrap(),
            "--preset",
            "paper",
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2), "empty data dir is a usage error");
    let resolved = fs::read_to_string(run.join("resolved_config.txt")).unwrap();
    assert!(resolved.contains("batch_size = 32"), "{resolved}");
    assert!(resolved.contains("epochs = 40"), "{resolved}");
    assert!(resolved.contains("blocks = 3"));
    assert!(resolved.contains("k = 8"));
    assert!(resolved.contains("loss = gan_perceptual"));
}

#[test]
fn gradcheck_scope_ops_exits_zero_with_table() {
    let out = ridnet()
        .args(["gradcheck", "--scope", "ops", "--repeats", "1"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("max_rel_err"));
    assert!(text.contains("conv2d_reflect"));
    assert!(text.contains("all 33 checks within tolerance"), "{text}");
}

#[test]
fn gradcheck_rejects_unknown_scope() {
    let status = ridnet()
        .args(["gradcheck", "--scope", "everything"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn sweep_emits_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let status = ridnet()
        .args([
            "sweep",
            "--axis",
            "k_neighbors",
            "--values",
            "2,4,8,12",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.trim().lines().collect();
    assert_eq!(lines.len(), 5, "header + 4 rows: {csv}");
    assert!(lines[0].starts_with("axis,value,psnr_db"));
}

#[test]
fn threads_env_var_is_validated() {
    let status = ridnet()
        .env("RIDNET_THREADS", "zero")
        .args(["gradcheck", "--scope", "ops"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}
