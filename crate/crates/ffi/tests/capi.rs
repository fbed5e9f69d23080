use std::ffi::CString;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use cl2cm_core::corpus::{generate_corpus, CorpusConfig};
use cl2cm_core::encoders::{self, Language, ModelParams};
use cl2cm_core::trainer::TrainConfig;
use cl2cm_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0u8; 256];
    let n = unsafe { cl2cm_last_error_message(buf.as_mut_ptr() as *mut _, buf.len()) };
    buf.truncate(n.saturating_sub(1).min(255));
    String::from_utf8(buf).unwrap()
}

#[test]
fn sinkhorn_single_cell() {
    let s = [0.3];
    let mut plan = [0.0];
    let mut iters = 0usize;
    let st = unsafe { cl2cm_sinkhorn(s.as_ptr(), 1, 1, 0.0, 0, 0.0, plan.as_mut_ptr(), &mut iters) };
    assert_eq!(st, Cl2cmStatus::Ok);
    assert!((plan[0] - 1.0).abs() < 1e-12);
}

#[test]
fn sinkhorn_marginals_and_errors() {
    let s = [0.1, -0.4, 0.9, 0.2, 0.5, -0.3];
    let mut plan = [0.0; 6];
    let st = unsafe { cl2cm_sinkhorn(s.as_ptr(), 2, 3, 0.1, 500, 1e-9, plan.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(st, Cl2cmStatus::Ok);
    for r in 0..2 {
        let sum: f64 = plan[r * 3..r * 3 + 3].iter().sum();
        assert!((sum - 0.5).abs() < 1e-9);
    }

    let st = unsafe { cl2cm_sinkhorn(ptr::null(), 2, 3, 0.1, 500, 1e-6, plan.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(st, Cl2cmStatus::NullPointer);
    assert!(last_error().contains("null"));

    let st = unsafe { cl2cm_sinkhorn(s.as_ptr(), 0, 3, 0.1, 500, 1e-6, plan.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(st, Cl2cmStatus::InvalidArgument);

    let st = unsafe { cl2cm_sinkhorn(s.as_ptr(), 2, 3, 0.1, 1, 1e-15, plan.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(st, Cl2cmStatus::NotConverged);
}

#[test]
fn pseudo_labels_example() {
    let plan = [0.3, 0.3, 0.2, 0.05, 0.05, 0.1];
    let mut labels = [0.0; 6];
    let mut gamma = 0.0;
    let st = unsafe { cl2cm_pseudo_labels(plan.as_ptr(), 2, 3, labels.as_mut_ptr(), &mut gamma) };
    assert_eq!(st, Cl2cmStatus::Ok);
    assert!((gamma - 1.0 / 6.0).abs() < 1e-12);
    let expected = [0.375, 0.375, 0.25, 0.0, 0.0, 1.0];
    for (a, b) in labels.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn metrics_example() {
    let ranks = [1usize, 3, 7, 12];
    let mut m = Cl2cmMetrics::default();
    assert_eq!(unsafe { cl2cm_metrics(ranks.as_ptr(), 4, &mut m) }, Cl2cmStatus::Ok);
    assert_eq!((m.r1, m.r5, m.r10), (25.0, 50.0, 75.0));
    assert!((m.map - 38.99).abs() < 0.01);
    let bad = [0usize];
    assert_eq!(unsafe { cl2cm_metrics(bad.as_ptr(), 1, &mut m) }, Cl2cmStatus::InvalidArgument);
    assert_eq!(unsafe { cl2cm_metrics(bad.as_ptr(), 0, &mut m) }, Cl2cmStatus::InvalidArgument);
}

#[test]
fn model_handle_matches_core() {
    let cfg = CorpusConfig {
        concept_vocab: 20,
        source_vocab: 20,
        target_vocab: 22,
        latent_dim: 6,
        sizes: (10, 2, 2),
        ..CorpusConfig::default()
    };
    let corpus = generate_corpus(&cfg).unwrap();
    let params = ModelParams::init(TrainConfig::default().model_shape(&corpus.config), 9);
    let dir = tempfile::tempdir().unwrap();
    encoders::save_checkpoint(dir.path(), &params, 9, serde_json::Value::Null).unwrap();

    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut model: *mut Cl2cmModel = ptr::null_mut();
    assert_eq!(unsafe { cl2cm_model_load(path.as_ptr(), &mut model) }, Cl2cmStatus::Ok);
    assert!(!model.is_null());
    let d = unsafe { cl2cm_model_dim(model) };
    assert_eq!(d, params.shape().output_dim);
    assert_eq!(unsafe { cl2cm_model_feature_dim(model) }, 6);

    let rec = &corpus.test[0];
    let mut out = vec![0.0; d];
    let st = unsafe { cl2cm_model_encode_text(model, rec.target_tokens.as_ptr(), rec.target_tokens.len(), out.as_mut_ptr()) };
    assert_eq!(st, Cl2cmStatus::Ok);
    let expect = encoders::encode_text(&rec.target_tokens, Language::Target, &params).unwrap();
    assert_eq!(out, expect.sentence_rep.as_slice());

    let st = unsafe { cl2cm_model_encode_vision(model, rec.vision_feature.as_ptr(), 6, out.as_mut_ptr()) };
    assert_eq!(st, Cl2cmStatus::Ok);
    assert_eq!(out, encoders::encode_vision(&rec.vision(), &params).unwrap().as_slice());

    let oov = [22usize];
    let st = unsafe { cl2cm_model_encode_text(model, oov.as_ptr(), 1, out.as_mut_ptr()) };
    assert_eq!(st, Cl2cmStatus::InvalidArgument);
    let st = unsafe { cl2cm_model_encode_vision(model, rec.vision_feature.as_ptr(), 5, out.as_mut_ptr()) };
    assert_eq!(st, Cl2cmStatus::InvalidArgument);

    unsafe { cl2cm_model_free(model) };
    unsafe { cl2cm_model_free(ptr::null_mut()) };
    assert_eq!(unsafe { cl2cm_model_dim(ptr::null()) }, 0);
}

#[test]
fn model_load_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("missing").to_str().unwrap()).unwrap();
    let mut model: *mut Cl2cmModel = 1 as *mut _;
    assert_eq!(unsafe { cl2cm_model_load(path.as_ptr(), &mut model) }, Cl2cmStatus::Checkpoint);
    assert!(model.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { cl2cm_model_load(ptr::null(), &mut model) }, Cl2cmStatus::NullPointer);
}

#[test]
fn error_message_truncates() {
    unsafe { cl2cm_sinkhorn(ptr::null(), 1, 1, 0.1, 1, 1e-6, ptr::null_mut(), ptr::null_mut()) };
    let full = unsafe { cl2cm_last_error_message(ptr::null_mut(), 0) };
    let mut buf = [0x7fu8; 4];
    let n = unsafe { cl2cm_last_error_message(buf.as_mut_ptr() as *mut _, buf.len()) };
    assert_eq!(n, full);
    assert_eq!(buf[3], 0);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/cl2cm.h")).unwrap();
    for name in [
        "cl2cm_last_error_message",
        "cl2cm_sinkhorn",
        "cl2cm_pseudo_labels",
        "cl2cm_metrics",
        "cl2cm_model_load",
        "cl2cm_model_free",
        "cl2cm_model_dim",
        "cl2cm_model_feature_dim",
        "cl2cm_model_encode_text",
        "cl2cm_model_encode_vision",
        "CL2CM_STATUS_NOT_CONVERGED = 3",
        "typedef struct Cl2cmModel Cl2cmModel;",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

/// Builds a small C program against the header and the static library.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|p| p.parent()).unwrap().to_path_buf();
    let lib = profile_dir.join("libcl2cm_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "cl2cm.h"
int main(void) {
    double s[4] = {1.0, -1.0, -1.0, 1.0};
    double plan[4], labels[4], gamma;
    size_t ranks[4] = {1, 3, 7, 12};
    Cl2cmMetrics m;
    if (cl2cm_sinkhorn(s, 2, 2, 0.05, 500, 1e-6, plan, NULL) != CL2CM_STATUS_OK) return 1;
    if (cl2cm_pseudo_labels(plan, 2, 2, labels, &gamma) != CL2CM_STATUS_OK) return 2;
    if (cl2cm_metrics(ranks, 4, &m) != CL2CM_STATUS_OK) return 3;
    if (cl2cm_sinkhorn(NULL, 2, 2, 0.1, 10, 1e-6, plan, NULL) != CL2CM_STATUS_NULL_POINTER) return 4;
    char msg[64];
    cl2cm_last_error_message(msg, sizeof msg);
    printf("%.6f %.1f %.1f %.2f %s\n", plan[0], labels[0], m.r10, m.map, msg);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = tmp.path().join("smoke");
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("run cc");
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("0.500000 "), "{text}");
    assert!(text.contains(" 1.0 75.0 38.99 "), "{text}");
}
