use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use leafbench_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = lb_last_error_message();
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { lb_string_free(p) };
    s
}

fn write_manifest(dir: &Path, labels: &[usize]) -> CString {
    let mut body = String::from("image_id,label\n");
    for (i, l) in labels.iter().enumerate() {
        body.push_str(&format!("img_{i:04}.jpg,{l}\n"));
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, body).unwrap();
    c(path.to_str().unwrap())
}

#[test]
fn manifest_and_split_handles() {
    let dir = tempfile::tempdir().unwrap();
    let labels: Vec<usize> = (0..100).map(|i| [0, 1, 2, 3, 3, 3, 3, 4, 3, 3][i % 10]).collect();
    let path = write_manifest(dir.path(), &labels);
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(lb_manifest_load(path.as_ptr(), &mut m), LB_OK);
        assert_eq!(lb_manifest_len(m), 100);
        let mut counts = [0usize; 5];
        assert_eq!(lb_manifest_class_counts(m, counts.as_mut_ptr(), 5), LB_OK);
        assert_eq!(counts, [10, 10, 10, 60, 10]);
        assert_eq!(lb_manifest_class_counts(m, counts.as_mut_ptr(), 4), LB_ERR_BUFFER_TOO_SMALL);

        let mut s = ptr::null_mut();
        assert_eq!(lb_split_stratified(m, 0.7, 0.1, 0.2, 42, &mut s), LB_OK);
        let sizes = [LB_SPLIT_TRAIN, LB_SPLIT_VAL, LB_SPLIT_TEST].map(|k| lb_split_size(s, k));
        assert_eq!(sizes, [70, 10, 20]);
        let mut test = vec![0usize; 20];
        assert_eq!(lb_split_indices(s, LB_SPLIT_TEST, test.as_mut_ptr(), 20), LB_OK);
        assert!(test.iter().all(|&i| i < 100));
        assert_ne!(lb_split_indices(s, 7, test.as_mut_ptr(), 20), LB_OK);

        let out = c(dir.path().join("split").to_str().unwrap());
        assert_eq!(lb_split_write_files(s, m, out.as_ptr()), LB_OK);
        assert!(dir.path().join("split/test.txt").is_file());

        let mut bad = ptr::null_mut();
        assert_eq!(lb_split_stratified(m, 0.5, 0.1, 0.2, 0, &mut bad), leafbench::Error::InvalidSpec(String::new()).code());
        assert!(bad.is_null());
        lb_split_free(s);
        lb_manifest_free(m);
    }
}

#[test]
fn load_errors_carry_codes_and_messages() {
    let missing = c("/nonexistent/manifest.csv");
    let mut m = ptr::null_mut();
    unsafe {
        let code = lb_manifest_load(missing.as_ptr(), &mut m);
        assert_eq!(code, leafbench::Error::MissingFile(Default::default()).code());
        assert!(m.is_null());
        assert!(last_error().contains("nonexistent"));
        assert_eq!(lb_manifest_load(ptr::null(), &mut m), LB_ERR_NULL_POINTER);
        assert_eq!(lb_manifest_len(ptr::null()), 0);
        lb_manifest_free(ptr::null_mut());
    }
}

#[test]
fn confusion_summary_and_report() {
    let t = [0usize, 1, 2, 3, 3, 3, 4, 4];
    let p = [0usize, 1, 3, 3, 3, 2, 4, 0];
    unsafe {
        let mut cm = ptr::null_mut();
        assert_eq!(lb_confusion_new(t.as_ptr(), p.as_ptr(), t.len(), 5, &mut cm), LB_OK);
        assert_eq!(lb_confusion_get(cm, 3, 3), 2);
        assert_eq!(lb_confusion_get(cm, 9, 0), 0);
        let mut s = LbSummary::default();
        assert_eq!(lb_confusion_summary(cm, &mut s), LB_OK);
        assert_eq!(s.accuracy, 5.0 / 8.0);
        assert_eq!(s.weighted_recall, s.accuracy);
        let text = lb_confusion_report(cm);
        let body = CStr::from_ptr(text).to_str().unwrap().to_string();
        lb_string_free(text);
        assert!(body.contains("CMD") && body.contains("weighted avg"));
        lb_confusion_free(cm);

        let bad = [0usize, 7];
        let code = lb_confusion_new(bad.as_ptr(), bad.as_ptr(), 2, 5, &mut cm);
        assert_ne!(code, LB_OK);
        assert!(!last_error().is_empty());
    }
}

#[test]
fn model_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let arch = c("resnet50");
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(lb_model_create(arch.as_ptr(), 5, 32, false, 1, &mut m), LB_OK);
        assert!(lb_model_param_count(m) > 0);
        assert_eq!(lb_model_num_classes(m), 5);
        let pixels: Vec<f32> = (0..2 * 3 * 32 * 32).map(|i| ((i % 17) as f32 / 17.0) - 0.5).collect();
        let mut probs = [0.0f64; 10];
        assert_eq!(lb_model_predict(m, pixels.as_ptr(), 2, probs.as_mut_ptr(), 10), LB_OK);
        for row in probs.chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert_eq!(lb_model_predict(m, pixels.as_ptr(), 2, probs.as_mut_ptr(), 9), LB_ERR_BUFFER_TOO_SMALL);

        let path = c(dir.path().join("w.lbw").to_str().unwrap());
        assert_eq!(lb_model_save(m, path.as_ptr()), LB_OK);
        let mut other = ptr::null_mut();
        assert_eq!(lb_model_create(arch.as_ptr(), 5, 32, false, 2, &mut other), LB_OK);
        assert_eq!(lb_model_load(other, path.as_ptr()), LB_OK);
        let mut again = [0.0f64; 10];
        assert_eq!(lb_model_predict(other, pixels.as_ptr(), 2, again.as_mut_ptr(), 10), LB_OK);
        assert_eq!(again, probs);
        lb_model_free(other);
        lb_model_free(m);

        let unknown = c("alexnet");
        assert_eq!(
            lb_model_create(unknown.as_ptr(), 5, 32, false, 1, &mut m),
            leafbench::Error::UnknownArchitecture(String::new()).code()
        );
        assert_eq!(
            lb_model_create(arch.as_ptr(), 1, 32, false, 1, &mut m),
            leafbench::Error::InvalidClassCount(1).code()
        );
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(lb_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_interface_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/leafbench.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "typedef struct LbModel LbModel;",
        "lb_manifest_load",
        "lb_split_stratified",
        "lb_confusion_summary",
        "lb_model_predict",
        "lb_last_error_message",
        "lb_experiment_run",
        "#define LB_OK 0",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-x", "c", "-"])
        .stdin(std::fs::File::open(&header).unwrap())
        .status()
    else {
        eprintln!("no C compiler; syntax check skipped");
        return;
    };
    assert!(status.success());
}

#[test]
fn experiment_run_fills_summary() {
    use leafbench::dataset::ClassRegistry;
    use leafbench::experiment::{generate_synthetic, ExperimentConfig, SyntheticDatasetSpec};
    use leafbench::model_zoo::BackboneScale;

    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticDatasetSpec {
        n_samples: 80,
        image_side: 32,
        ..Default::default()
    };
    generate_synthetic(&spec, &dir.path().join("data"), &ClassRegistry::cassava()).unwrap();
    let mut cfg = ExperimentConfig {
        manifest: "data/manifest.csv".into(),
        out_dir: "runs".into(),
        architectures: vec!["ResNet50".into()],
        input_size: Some(32),
        backbone_scale: BackboneScale::DESK,
        pretrained: false,
        ..Default::default()
    };
    cfg.training.max_epochs = 1;
    let path = dir.path().join("config.json");
    cfg.save(&path).unwrap();

    let config = c(path.to_str().unwrap());
    let arch = c("ResNet50");
    let mut s = LbSummary::default();
    unsafe {
        assert_eq!(lb_experiment_run(config.as_ptr(), arch.as_ptr(), &mut s), LB_OK);
    }
    assert!((0.0..=1.0).contains(&s.accuracy));
    assert_eq!(s.weighted_recall, s.accuracy);
    assert!(dir.path().join("runs/resnet50/summary.json").is_file());

    let arch = c("LeNet");
    unsafe {
        assert_eq!(
            lb_experiment_run(config.as_ptr(), arch.as_ptr(), ptr::null_mut()),
            leafbench::Error::ConfigInvalid(String::new()).code()
        );
    }
}
