use std::ffi::{CStr, CString};
use std::ptr;

use kdlab_ffi::*;

const CONFIG: &str = r#"{
  "schema_version": 1,
  "seed": 2,
  "data": {
    "vocab": {"features": 4, "classes": 3, "patch_dim": 2},
    "splits": {"train": 120, "holdout": 30, "temperature_holdout": 30, "test": 60},
    "patches": 2
  },
  "teacher": {
    "architecture": {"kind": "generic-mlp", "hidden": [8]},
    "epochs": 3, "batch_size": 32, "mode": "soteacher",
    "lambda_lr": 1e-5, "lambda_cr_max": 1.0, "cr_schedule": "linear", "checkpoint_every": 1
  },
  "student": {
    "architecture": {"kind": "generic-mlp", "hidden": [4]},
    "epochs": 2, "batch_size": 32, "alpha": 0.5, "temperature": 4.0
  }
}"#;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(kdlab_last_error()) }.to_string_lossy().into_owned()
}

fn generate() -> *mut KdlabDataset {
    let cfg = c(CONFIG);
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { kdlab_dataset_generate(cfg.as_ptr(), &mut ds) }, KdlabStatus::KdlabOk);
    ds
}

#[test]
fn dataset_roundtrip_and_splits() {
    let ds = generate();
    let (mut n, mut m, mut b, mut k) = (0, 0, 0, 0);
    unsafe {
        assert_eq!(kdlab_dataset_shape(ds, &mut n, &mut m, &mut b, &mut k), KdlabStatus::KdlabOk);
        assert_eq!((n, m, b, k), (240, 2, 2, 3));
        let mut test = ptr::null_mut();
        assert_eq!(
            kdlab_dataset_split(ds, KdlabSplit::KdlabSplitTest as i32, &mut test),
            KdlabStatus::KdlabOk
        );
        let mut tn = 0;
        kdlab_dataset_shape(test, &mut tn, ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(tn, 60);
        let mut bad = ptr::null_mut();
        assert_eq!(kdlab_dataset_split(ds, 9, &mut bad), KdlabStatus::KdlabErrInvalid);
        assert!(bad.is_null());

        let dir = tempfile::tempdir().unwrap();
        let path = c(dir.path().to_str().unwrap());
        assert_eq!(kdlab_dataset_save(ds, path.as_ptr()), KdlabStatus::KdlabOk);
        let mut loaded = ptr::null_mut();
        assert_eq!(kdlab_dataset_load(path.as_ptr(), &mut loaded), KdlabStatus::KdlabOk);
        let mut a = vec![0.0; n * m * b];
        let mut bvals = vec![0.0; n * m * b];
        assert_eq!(kdlab_dataset_inputs(ds, a.as_mut_ptr(), a.len()), KdlabStatus::KdlabOk);
        assert_eq!(kdlab_dataset_inputs(loaded, bvals.as_mut_ptr(), bvals.len()), KdlabStatus::KdlabOk);
        assert_eq!(a, bvals);
        let mut labels = vec![0usize; n];
        assert_eq!(kdlab_dataset_labels(ds, labels.as_mut_ptr(), n), KdlabStatus::KdlabOk);
        assert!(labels.iter().all(|&y| y < 3));
        assert_eq!(kdlab_dataset_inputs(ds, a.as_mut_ptr(), 3), KdlabStatus::KdlabErrShape);

        kdlab_dataset_free(test);
        kdlab_dataset_free(loaded);
        kdlab_dataset_free(ds);
        kdlab_dataset_free(ptr::null_mut());
    }
}

#[test]
fn train_predict_distill_and_reload() {
    let ds = generate();
    let cfg = c(CONFIG);
    let dir = tempfile::tempdir().unwrap();
    unsafe {
        let mut teacher = ptr::null_mut();
        let mut record = ptr::null_mut();
        let out_dir = c(dir.path().join("run").to_str().unwrap());
        assert_eq!(
            kdlab_train_teacher(cfg.as_ptr(), ds, out_dir.as_ptr(), &mut teacher, &mut record),
            KdlabStatus::KdlabOk,
            "{}",
            last_error()
        );
        let rec: serde_json::Value = serde_json::from_str(CStr::from_ptr(record).to_str().unwrap()).unwrap();
        assert_eq!(rec["mode"], "soteacher");
        assert_eq!(rec["checkpoints"].as_array().unwrap().len(), 3);
        kdlab_string_free(record);

        let (mut w, mut k) = (0, 0);
        kdlab_network_shape(teacher, &mut w, &mut k);
        assert_eq!((w, k), (4, 3));
        let x = [0.1, -0.2, 0.3, 0.4, 1.0, 0.5, -0.5, 0.0];
        let mut p = [0.0; 6];
        assert_eq!(kdlab_network_predict(teacher, x.as_ptr(), 2, p.as_mut_ptr()), KdlabStatus::KdlabOk);
        for row in p.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        let ck = c(dir.path().join("run/checkpoints/epoch-0003").to_str().unwrap());
        let mut reloaded = ptr::null_mut();
        assert_eq!(kdlab_network_load(ck.as_ptr(), &mut reloaded), KdlabStatus::KdlabOk);
        let mut q = [0.0; 6];
        kdlab_network_predict(reloaded, x.as_ptr(), 2, q.as_mut_ptr());
        assert_eq!(p, q);

        let mut err = 0.0;
        assert_eq!(
            kdlab_distribution_error(teacher, ds, KdlabNorm::KdlabNormL1 as i32, &mut err),
            KdlabStatus::KdlabOk
        );
        assert!(err > 0.0 && err <= 2.0);

        let mut student = ptr::null_mut();
        let mut srec = ptr::null_mut();
        assert_eq!(
            kdlab_distill(cfg.as_ptr(), teacher, ds, &mut student, &mut srec),
            KdlabStatus::KdlabOk,
            "{}",
            last_error()
        );
        let rec: serde_json::Value = serde_json::from_str(CStr::from_ptr(srec).to_str().unwrap()).unwrap();
        assert_eq!(rec["alpha"], 0.5);
        kdlab_string_free(srec);

        let saved = c(dir.path().join("student").to_str().unwrap());
        assert_eq!(kdlab_network_save(student, saved.as_ptr()), KdlabStatus::KdlabOk);

        kdlab_network_free(student);
        kdlab_network_free(reloaded);
        kdlab_network_free(teacher);
        kdlab_dataset_free(ds);
    }
}

#[test]
fn error_codes_and_messages() {
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(kdlab_dataset_generate(ptr::null(), &mut ds), KdlabStatus::KdlabErrNull);
        assert!(last_error().contains("config_json"));

        let bad = c(&CONFIG.replace("\"seed\": 2,", "\"seed\": 2, \"extra\": true,"));
        assert_eq!(kdlab_dataset_generate(bad.as_ptr(), &mut ds), KdlabStatus::KdlabErrConfig);
        assert!(last_error().contains("extra"), "{}", last_error());
        assert!(ds.is_null());

        let weights = c(&CONFIG.replace("\"patch_dim\": 2}", "\"patch_dim\": 2, \"sampling_weights\": [1, 1, 0, 0]}"));
        assert_eq!(kdlab_dataset_generate(weights.as_ptr(), &mut ds), KdlabStatus::KdlabErrConfig);
        assert!(last_error().contains("data.vocab.sampling_weights"));

        let missing = c("/nonexistent/kdlab");
        assert_eq!(kdlab_dataset_load(missing.as_ptr(), &mut ds), KdlabStatus::KdlabErrMissing);
        let mut net = ptr::null_mut();
        assert_eq!(kdlab_network_load(missing.as_ptr(), &mut net), KdlabStatus::KdlabErrMissing);

        let ok = generate();
        assert_eq!(last_error(), "");
        kdlab_dataset_free(ok);
    }
}

#[test]
fn metric_closed_forms() {
    unsafe {
        let uniform = [0.25; 8];
        let labels = [0usize, 3];
        let mut v = 0.0;
        assert_eq!(kdlab_nll(uniform.as_ptr(), labels.as_ptr(), 2, 4, &mut v), KdlabStatus::KdlabOk);
        assert!((v - 4f64.ln()).abs() < 1e-10);

        let probs: Vec<f64> = (0..20).flat_map(|_| [0.75, 0.25]).collect();
        let y: Vec<usize> = (0..20).map(|i| usize::from(i >= 9)).collect();
        assert_eq!(kdlab_ece(probs.as_ptr(), y.as_ptr(), 20, 2, 15, &mut v), KdlabStatus::KdlabOk);
        assert_eq!(v, 0.3);

        let flat = [1.0; 6];
        let y = [0usize, 1, 2];
        assert_eq!(kdlab_fit_temperature(flat.as_ptr(), y.as_ptr(), 3, 2, &mut v), KdlabStatus::KdlabErrInvalid);
        assert_eq!(kdlab_fit_temperature(flat.as_ptr(), y[..2].as_ptr(), 2, 3, &mut v), KdlabStatus::KdlabOk);
        assert_eq!(v, 1.0);
    }
}

#[test]
fn cli_entry_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let args = [c("gen-data"), c("--out"), c(out.to_str().unwrap())];
    let ptrs: Vec<*const std::ffi::c_char> = args.iter().map(|a| a.as_ptr()).collect();
    assert_eq!(unsafe { kdlab_cli_run(ptrs.len() as i32, ptrs.as_ptr()) }, 0);
    assert!(out.join("manifest.json").exists());
    let bad = [c("no-such-command")];
    let ptrs: Vec<*const std::ffi::c_char> = bad.iter().map(|a| a.as_ptr()).collect();
    assert_eq!(unsafe { kdlab_cli_run(1, ptrs.as_ptr()) }, 2);
    let version = unsafe { CStr::from_ptr(kdlab_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_api_and_compiles() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/kdlab.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "kdlab_last_error",
        "kdlab_dataset_generate",
        "kdlab_train_teacher",
        "kdlab_distill",
        "kdlab_network_predict",
        "kdlab_string_free",
        "typedef struct KdlabDataset KdlabDataset",
        "KDLAB_ERR_MISSING = 4",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if let Ok(status) = std::process::Command::new(&cc)
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    {
        assert!(status.success(), "header does not compile as C");
    }
}
