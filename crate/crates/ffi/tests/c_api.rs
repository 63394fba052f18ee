use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use flames_ffi::*;

fn last_error() -> String {
    let p = flames_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn new_kernel(order: usize, inputs: usize, outputs: usize) -> *mut FlamesKernel {
    let mut k = ptr::null_mut();
    let status = unsafe { flames_kernel_new(order, inputs, outputs, 1.0, 7, 0.0, &mut k) };
    assert_eq!(status, FlamesStatus::Ok);
    assert!(!k.is_null());
    k
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(flames_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn kernel_lifecycle() {
    let k = new_kernel(4, 2, 3);
    let (mut n, mut m, mut p) = (0, 0, 0);
    assert_eq!(unsafe { flames_kernel_dims(k, &mut n, &mut m, &mut p) }, FlamesStatus::Ok);
    assert_eq!((n, m, p), (4, 2, 3));

    let mut x = [1.0; 4];
    let mut t = -1.0;
    assert_eq!(unsafe { flames_kernel_state(k, x.as_mut_ptr(), 4, &mut t) }, FlamesStatus::Ok);
    assert_eq!((x, t), ([0.0; 4], 0.0));

    let s = [1.0, 0.5];
    assert_eq!(unsafe { flames_kernel_step(k, 0.01, s.as_ptr(), 2) }, FlamesStatus::Ok);
    assert_eq!(unsafe { flames_kernel_state(k, x.as_mut_ptr(), 4, &mut t) }, FlamesStatus::Ok);
    assert_eq!(t, 0.01);
    assert!(x.iter().any(|v| *v != 0.0));

    let mut y = [0.0; 3];
    assert_eq!(unsafe { flames_kernel_readout(k, y.as_mut_ptr(), 3) }, FlamesStatus::Ok);
    assert!(y.iter().any(|v| *v != 0.0));

    assert_eq!(unsafe { flames_kernel_reset(k, 5.0) }, FlamesStatus::Ok);
    assert_eq!(unsafe { flames_kernel_state(k, x.as_mut_ptr(), 4, &mut t) }, FlamesStatus::Ok);
    assert_eq!((x, t), ([0.0; 4], 5.0));
    unsafe { flames_kernel_free(k) };
}

#[test]
fn error_codes() {
    let k = new_kernel(3, 1, 1);
    let s = [1.0];
    assert_eq!(unsafe { flames_kernel_step(k, 1.0, s.as_ptr(), 1) }, FlamesStatus::Ok);
    assert_eq!(unsafe { flames_kernel_step(k, 0.5, s.as_ptr(), 1) }, FlamesStatus::Temporal);
    assert!(last_error().contains("0.5"));
    assert_eq!(unsafe { flames_kernel_step(k, 2.0, s.as_ptr(), 0) }, FlamesStatus::Invalid);
    assert_eq!(unsafe { flames_kernel_step(k, 2.0, ptr::null(), 1) }, FlamesStatus::Null);
    let mut y = [0.0; 1];
    assert_eq!(unsafe { flames_kernel_state(k, y.as_mut_ptr(), 1, ptr::null_mut()) }, FlamesStatus::Invalid);
    assert!(last_error().contains("3 required"));
    assert_eq!(unsafe { flames_kernel_reset(ptr::null_mut(), 0.0) }, FlamesStatus::Null);
    unsafe { flames_kernel_free(k) };
    unsafe { flames_kernel_free(ptr::null_mut()) };

    let mut out = ptr::null_mut();
    assert_eq!(unsafe { flames_kernel_new(0, 1, 1, 1.0, 0, 0.0, &mut out) }, FlamesStatus::Invalid);
    assert!(out.is_null());
}

#[test]
fn legs_matrix_row_major() {
    let mut a = [0.0; 9];
    assert_eq!(unsafe { flames_hippo_legs(3, a.as_mut_ptr(), 9) }, FlamesStatus::Ok);
    assert_eq!(a[0], 1.0);
    assert_eq!(a[4], 2.0);
    assert_eq!(a[1], 0.0);
    assert!((a[3] + 3f64.sqrt()).abs() < 1e-12);
}

#[test]
fn convolve_against_direct_sum() {
    let taps = [1.0, -0.5, 0.25];
    let u = [1.0, 2.0, 0.0, -1.0, 3.0];
    let mut out = [0.0; 5];
    let status = unsafe { flames_fft_convolve(taps.as_ptr(), 3, u.as_ptr(), 5, out.as_mut_ptr()) };
    assert_eq!(status, FlamesStatus::Ok);
    for t in 0..5 {
        let direct: f64 = (0..=t.min(2)).map(|k| taps[k] * u[t - k]).sum();
        assert!((out[t] - direct).abs() < 1e-12, "t={t}");
    }
    let empty = unsafe { flames_fft_convolve(taps.as_ptr(), 0, u.as_ptr(), 5, out.as_mut_ptr()) };
    assert_eq!(empty, FlamesStatus::Invalid);
}

#[test]
fn model_run_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.evt");
    std::fs::write(&path, "#geometry 4 4\n0.001,1,2,1\n0.002,3,0,1\n").unwrap();
    let cfg = CString::new("{}").unwrap();
    let p = CString::new(path.to_str().unwrap()).unwrap();
    let mut json = ptr::null_mut();
    let status = unsafe { flames_model_run(cfg.as_ptr(), p.as_ptr(), 0, &mut json) };
    assert_eq!(status, FlamesStatus::Ok, "{}", last_error());
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_string();
    unsafe { flames_string_free(json) };
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["scores"].as_array().unwrap().len(), 256);
    assert_eq!(v["input_batches"], 2);

    let bad = CString::new(r#"{"order": -1}"#).unwrap();
    let status = unsafe { flames_model_run(bad.as_ptr(), p.as_ptr(), 0, &mut json) };
    assert_eq!(status, FlamesStatus::Invalid);
    assert!(last_error().contains("order"));

    let missing = CString::new(dir.path().join("nope.evt").to_str().unwrap()).unwrap();
    let status = unsafe { flames_model_run(cfg.as_ptr(), missing.as_ptr(), 0, &mut json) };
    assert_eq!(status, FlamesStatus::Io);
    assert!(last_error().contains("nope.evt"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("flames.h")
}

#[test]
fn header_declares_api() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "FLAMES_STATUS_OK",
        "FLAMES_STATUS_PANIC",
        "typedef struct FlamesKernel FlamesKernel",
        "flames_kernel_new",
        "flames_kernel_step",
        "flames_model_run",
        "flames_last_error",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler on PATH; header syntax not checked");
        return;
    };
    assert!(cc.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"flames.h\"\n\
         int main(void) {\n\
           FlamesKernel *k = 0;\n\
           FlamesStatus s = flames_kernel_new(4, 1, 1, 1.0, 0, 0.0, &k);\n\
           double u = 1.0;\n\
           if (s == FLAMES_STATUS_OK) s = flames_kernel_step(k, 0.1, &u, 1);\n\
           flames_kernel_free(k);\n\
           return s == FLAMES_STATUS_OK ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let include = header().parent().unwrap().to_path_buf();
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
