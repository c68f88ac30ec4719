use std::path::Path;
use std::process::{Command, Output};

fn lesionkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lesionkit"))
        .args(args)
        .current_dir(dir)
        .env_remove("LESIONKIT_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Small synthetic dataset plus ground-truth instances of one image.
fn dataset(dir: &Path) {
    let o = lesionkit(dir, &["synth", "--out", "ds", "--count", "3", "--size", "128", "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = lesionkit(
        dir,
        &["split-masks", "--mask", "ds/masks/synth_0001_ma.png", "--kind", "ma", "--image-id", "synth_0001", "--out", "gt.dets"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn eval_seg_perfect_predictions() {
    let d = tempfile::tempdir().unwrap();
    dataset(d.path());
    let o = lesionkit(d.path(), &["eval-seg", "--pred", "gt.dets", "--gt", "gt.dets", "--thresholds", "0.35,0.5,0.75"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "mAP_35 1.0000\nmAP_50 1.0000\nmAP_75 1.0000\n");
}

#[test]
fn json_mode_matches_text() {
    let d = tempfile::tempdir().unwrap();
    dataset(d.path());
    let o = lesionkit(d.path(), &["--json", "eval-seg", "--pred", "gt.dets", "--gt", "gt.dets"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    for k in ["mAP_35", "mAP_50", "mAP_75"] {
        assert_eq!(v["map"][k].as_f64(), Some(1.0));
    }
}

#[test]
fn grad_check_seed_7() {
    let d = tempfile::tempdir().unwrap();
    let o = lesionkit(d.path(), &["--json", "grad-check", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["max_rel_error"].as_f64().unwrap() < 1e-4);
    let o = lesionkit(d.path(), &["grad-check", "--seed", "7"]);
    assert!(stdout(&o).starts_with("max relative error "));
}

#[test]
fn usage_errors_exit_1() {
    let d = tempfile::tempdir().unwrap();
    let o = lesionkit(d.path(), &["eval-seg", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    let o = lesionkit(d.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    let o = lesionkit(d.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("grad-check"));
}

#[test]
fn bad_inputs_exit_1() {
    let d = tempfile::tempdir().unwrap();
    let o = lesionkit(d.path(), &["eval-seg", "--pred", "nope.dets", "--gt", "nope.dets"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error: "));

    std::fs::write(d.path().join("bad.toml"), "output_dir = \"o\"\nunknown_key = 3\n[dataset]\nmanifest = \"m\"\n").unwrap();
    let o = lesionkit(d.path(), &["run", "--config", "bad.toml"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let o = lesionkit(d.path(), &["grad-check", "--eps", "0.5"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn out_dir_from_environment() {
    let d = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_lesionkit"))
        .args(["synth", "--count", "2", "--size", "128"])
        .current_dir(d.path())
        .env("LESIONKIT_OUT_DIR", "from_env")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.path().join("from_env/manifest.jsonl").exists());
}

#[test]
fn run_is_idempotent() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(
        d.path().join("run.toml"),
        "seed = 2\noutput_dir = \"r\"\n[dataset.synthetic]\nimage_count = 12\n[preprocess]\ntarget_size = 128\n[train]\nepochs = 5\n",
    )
    .unwrap();
    let first = lesionkit(d.path(), &["run", "--config", "run.toml"]);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let a = std::fs::read(d.path().join("r/artifacts.json")).unwrap();
    let second = lesionkit(d.path(), &["--workers", "1", "run", "--config", "run.toml"]);
    assert_eq!(second.status.code(), Some(0), "{}", stderr(&second));
    let b = std::fs::read(d.path().join("r/artifacts.json")).unwrap();
    assert_eq!(a, b);
    assert_eq!(stdout(&first), stdout(&second));
    let manifest: serde_json::Value = serde_json::from_slice(&a).unwrap();
    let results = manifest
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["role"] == "phase2_result")
        .count();
    assert_eq!(results, 3);
}

#[test]
fn train_then_eval_severity() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(
        d.path().join("run.toml"),
        "output_dir = \"r\"\n[dataset.synthetic]\nimage_count = 12\n[preprocess]\ntarget_size = 128\n[train]\nepochs = 5\n",
    )
    .unwrap();
    let o = lesionkit(d.path(), &["train", "--config", "run.toml", "--ablation", "boxes_norm_masks"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("test accuracy"));
    let args = [
        "--json",
        "eval-severity",
        "--checkpoint",
        "r/phase2/boxes_norm_masks/model.ckpt",
        "--dets",
        "r/detect/predictions.dets",
        "--labels",
        "r/preprocess/splits.csv",
        "--ablation",
        "boxes_norm_masks",
        "--image-size",
        "128",
    ];
    let o = lesionkit(d.path(), &args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["total"], 12);
    let mut wrong = args.to_vec();
    wrong[9] = "boxes_norm";
    assert_eq!(lesionkit(d.path(), &wrong).status.code(), Some(1));
}
