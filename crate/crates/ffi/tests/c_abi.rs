use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use dgcnn_ffi::*;

fn new_desk(classes: usize, seed: u64) -> *mut DgcnnClassifier {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { dgcnn_classifier_new_desk(classes, seed, &mut h) }, DgcnnStatus::Ok);
    assert!(!h.is_null());
    h
}

fn cloud(n: usize) -> Vec<f64> {
    (0..3 * n).map(|i| ((i * 37) % 23) as f64 / 23.0 - 0.5).collect()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(dgcnn_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn knn_matches_the_core_builder() {
    let pts = cloud(20);
    let mut out = vec![0usize; 20 * 4];
    let status = unsafe { dgcnn_knn_graph(pts.as_ptr(), 20, 3, 4, false, out.as_mut_ptr(), out.len()) };
    assert_eq!(status, DgcnnStatus::Ok);
    let m = dgcnn::FeatureMatrix::new(20, 3, pts).unwrap();
    let g = dgcnn::graph::knn_graph(&m, 4, false).unwrap();
    assert_eq!(out, g.neighbors());
}

#[test]
fn size_and_null_errors_are_reported() {
    let pts = cloud(5);
    let mut out = vec![0usize; 3];
    let s = unsafe { dgcnn_knn_graph(pts.as_ptr(), 5, 3, 2, true, out.as_mut_ptr(), out.len()) };
    assert_eq!(s, DgcnnStatus::Dimension);
    assert!(last_error().contains("need n·k"));
    let s = unsafe { dgcnn_knn_graph(ptr::null(), 5, 3, 2, true, out.as_mut_ptr(), 10) };
    assert_eq!(s, DgcnnStatus::NullPointer);
    assert_eq!(last_error(), "points is null");
    assert_eq!(unsafe { dgcnn_classifier_num_classes(ptr::null()) }, 0);
    unsafe { dgcnn_classifier_free(ptr::null_mut()) };
}

#[test]
fn logits_and_prediction_agree() {
    let h = new_desk(4, 3);
    let pts = cloud(40);
    let mut logits = [0.0; 4];
    let mut class = usize::MAX;
    unsafe {
        assert_eq!(dgcnn_classifier_num_classes(h), 4);
        assert_eq!(dgcnn_classifier_logits(h, pts.as_ptr(), 40, 3, logits.as_mut_ptr(), 4), DgcnnStatus::Ok);
        assert_eq!(dgcnn_classifier_predict(h, pts.as_ptr(), 40, 3, &mut class), DgcnnStatus::Ok);
        // two channels where the model expects three
        assert_eq!(dgcnn_classifier_logits(h, pts.as_ptr(), 60, 2, logits.as_mut_ptr(), 4), DgcnnStatus::Dimension);
        dgcnn_classifier_free(h);
    }
    let best = (0..4).max_by(|&a, &b| logits[a].total_cmp(&logits[b])).unwrap();
    assert_eq!(class, best);
}

#[test]
fn checkpoints_round_trip_and_mismatches_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    let pts = cloud(32);
    let (a, b, other) = (new_desk(3, 1), new_desk(3, 2), new_desk(5, 1));
    let (mut la, mut lb) = ([0.0; 3], [0.0; 3]);
    unsafe {
        assert_eq!(dgcnn_classifier_save(a, path.as_ptr()), DgcnnStatus::Ok);
        assert_eq!(dgcnn_classifier_load(b, path.as_ptr()), DgcnnStatus::Ok);
        dgcnn_classifier_logits(a, pts.as_ptr(), 32, 3, la.as_mut_ptr(), 3);
        dgcnn_classifier_logits(b, pts.as_ptr(), 32, 3, lb.as_mut_ptr(), 3);
        assert_eq!(dgcnn_classifier_load(other, path.as_ptr()), DgcnnStatus::Checkpoint);
        let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
        assert_eq!(dgcnn_classifier_load(b, missing.as_ptr()), DgcnnStatus::Io);
        for h in [a, b, other] {
            dgcnn_classifier_free(h);
        }
    }
    assert_eq!(la, lb);
}

#[test]
fn open_reads_a_run_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "preset = \"desk\"\nseed = 5\n").unwrap();
    let cfg = CString::new(cfg.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(dgcnn_classifier_open(cfg.as_ptr(), ptr::null(), &mut h), DgcnnStatus::Ok);
        assert_eq!(dgcnn_classifier_num_classes(h), 4);
        dgcnn_classifier_free(h);
    }
    let seg = dir.path().join("seg.toml");
    std::fs::write(&seg, "preset = \"desk-segmentation\"\n").unwrap();
    let seg = CString::new(seg.to_str().unwrap()).unwrap();
    let s = unsafe { dgcnn_classifier_open(seg.as_ptr(), ptr::null(), &mut h) };
    assert_eq!(s, DgcnnStatus::InvalidArgument);
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/dgcnn.h")
}

#[test]
fn header_declares_every_entry_point() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "dgcnn_version",
        "dgcnn_last_error",
        "dgcnn_classifier_new_desk",
        "dgcnn_classifier_open",
        "dgcnn_classifier_load",
        "dgcnn_classifier_save",
        "dgcnn_classifier_num_classes",
        "dgcnn_classifier_logits",
        "dgcnn_classifier_predict",
        "dgcnn_classifier_free",
        "dgcnn_knn_graph",
        "typedef struct DgcnnClassifier DgcnnClassifier",
        "DGCNN_STATUS_CHECKPOINT = 6",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
}

/// Compiles `smoke.c` against the header and the static library built for
/// this test run. Skipped when no C compiler or archive is available.
#[test]
fn c_program_links_and_runs() {
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libdgcnn_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/smoke.c");
    let build = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(build.status.success(), "cc failed: {}", String::from_utf8_lossy(&build.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "smoke exited with {:?}", run.status.code());
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok 0.1.0"));
}
