use std::fs;
use std::process::Command;

use leafbench::experiment::{ComparisonTable, ExperimentConfig};
use leafbench::model_zoo::BackboneScale;

fn leafbench(args: &[&str]) -> (bool, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_leafbench"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    (
        out.status.success(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn synth_eda_split_train_eval_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let p = |rel: &str| root.join(rel).to_str().unwrap().to_string();

    fs::write(root.join("synth.json"), r#"{"n_samples": 80, "image_side": 32}"#).unwrap();
    let (ok, stdout, stderr) = leafbench(&["synth", &p("synth.json"), &p("data"), "--seed", "4"]);
    assert!(ok, "{stderr}");
    assert!(stdout.contains("80 images"));

    let (ok, stdout, _) = leafbench(&["eda", &p("data/manifest.csv"), "--out", &p("eda")]);
    assert!(ok);
    assert!(stdout.contains("CMD") && stdout.contains("all 80 images decode"));
    assert!(root.join("eda/class_distribution.png").is_file());

    let mut cfg = ExperimentConfig {
        manifest: "data/manifest.csv".into(),
        out_dir: "runs".into(),
        architectures: vec!["ResNet50".into()],
        input_size: Some(32),
        backbone_scale: BackboneScale::DESK,
        pretrained: false,
        ..Default::default()
    };
    cfg.training.max_epochs = 2;
    cfg.save(&root.join("config.json")).unwrap();

    let (ok, stdout, stderr) = leafbench(&["split", "--config", &p("config.json")]);
    assert!(ok, "{stderr}");
    assert!(stdout.contains("train") && root.join("runs/resnet50/test.txt").is_file());

    let (ok, stdout, stderr) = leafbench(&["train", &p("config.json"), "--arch", "resnet50", "--out", &p("out")]);
    assert!(ok, "{stderr}");
    assert!(stdout.contains("weighted avg"));
    let report = fs::read_to_string(root.join("out/resnet50/report.txt")).unwrap();

    let (ok, stdout, stderr) = leafbench(&["eval", &p("config.json"), "--arch", "ResNet50", "--out", &p("out")]);
    assert!(ok, "{stderr}");
    assert!(stdout.starts_with(&report));

    let (ok, stdout, _) = leafbench(&["compare", &p("out"), "--out", &p("cmp")]);
    assert!(ok);
    assert!(stdout.contains("ResNet50"));
    let table = ComparisonTable::parse_csv(&fs::read_to_string(root.join("cmp/comparison.csv")).unwrap()).unwrap();
    assert_eq!(table.rows.len(), 1);
}

#[test]
fn failures_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.csv");
    let (ok, _, stderr) = leafbench(&["eda", missing.to_str().unwrap()]);
    assert!(!ok);
    assert!(stderr.contains("error"));

    let cfg = ExperimentConfig {
        architectures: vec!["ResNet50".into()],
        ..Default::default()
    };
    let path = tmp.path().join("c.json");
    cfg.save(&path).unwrap();
    let (ok, _, stderr) = leafbench(&["train", path.to_str().unwrap(), "--arch", "AlexNet"]);
    assert!(!ok);
    assert!(stderr.contains("known architectures"));

    let (ok, _, _) = leafbench(&["compare", tmp.path().to_str().unwrap()]);
    assert!(!ok);
    let (ok, _, _) = leafbench(&["train", "--arch", "ResNet50"]);
    assert!(!ok);
}
