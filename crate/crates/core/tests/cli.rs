use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[data]
train = 6
val = 4

[train]
epochs = 1
batch_size = 3
"#;

fn handseg(args: &[&str], out_root: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_handseg"));
    cmd.args(args).env_remove("HANDSEG_OUT");
    if let Some(root) = out_root {
        cmd.env("HANDSEG_OUT", root);
    }
    cmd.output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad_key = write(dir.path(), "bad.toml", "[train]\nepochz = 3\n");
    let bad_value = write(dir.path(), "neg.toml", "[train]\nlr = -1.0\n");
    let out = dir.path().join("x").to_str().unwrap().to_string();
    for args in [
        vec!["frobnicate"],
        vec!["gen", "--seed", "minus-one"],
        vec!["gen", "--config", "/nonexistent/run.toml", "--out", &out],
        vec!["gen", "--config", &bad_key, "--out", &out],
        vec!["gen", "--config", &bad_value, "--out", &out],
        vec!["train", "--variant", "wizard", "--out", &out],
        vec!["report"],
        vec!["report", "--out", &out],
    ] {
        let o = handseg(&args, None);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn help_exits_with_zero() {
    assert_eq!(handseg(&["--help"], None).status.code(), Some(0));
    assert_eq!(handseg(&["train", "--help"], None).status.code(), Some(0));
}

#[test]
fn diverging_training_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", &format!("{SMALL}lr = 1e30\n"));
    let o = handseg(&["train", "--config", &cfg, "--out", "run"], Some(dir.path()));
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-finite"));
}

#[test]
fn gen_train_eval_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let cfg = write(root, "run.toml", SMALL);

    let o = handseg(&["gen", "--config", &cfg, "--seed", "5", "--out", "data"], Some(root));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(root.join("data/train/manifest.json").exists());
    let summary = String::from_utf8_lossy(&o.stdout);
    assert!(summary.contains("train: 6 samples"), "{summary}");

    let o = handseg(
        &["train", "--config", &cfg, "--data", root.join("data").to_str().unwrap(), "--out", "model", "--variant", "segm-only"],
        Some(root),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ckpt = root.join("model/model.hsck");
    assert!(ckpt.exists());

    let o = handseg(
        &["eval", "--checkpoint", ckpt.to_str().unwrap(), "--data", root.join("data/val").to_str().unwrap(), "--out", "eval"],
        Some(root),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let before = std::fs::read(root.join("eval/report.csv")).unwrap();

    // a checkpoint checked against a config of another variant is refused
    let o = handseg(
        &[
            "eval", "--config", &cfg, "--checkpoint", ckpt.to_str().unwrap(),
            "--data", root.join("data/val").to_str().unwrap(), "--out", "eval2",
        ],
        Some(root),
    );
    assert_eq!(o.status.code(), Some(1));

    let o = handseg(&["report", "--out", "eval"], Some(root));
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("mpjpe_mm"));
    assert_eq!(std::fs::read(root.join("eval/report.csv")).unwrap(), before);
}

#[test]
fn absolute_out_ignores_the_output_root() {
    let root = tempfile::tempdir().unwrap();
    let elsewhere = tempfile::tempdir().unwrap();
    let cfg = write(root.path(), "run.toml", "[data]\ntrain = 0\nval = 0\n");
    let target = elsewhere.path().join("d");
    let o = handseg(&["gen", "--config", &cfg, "--out", target.to_str().unwrap()], Some(root.path()));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(target.join("train/manifest.json").exists());
    assert!(!root.path().join("d").exists());
}
