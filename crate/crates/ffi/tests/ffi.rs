use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use haartest_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ht_last_error()).to_string_lossy().into_owned() }
}

fn grid(dim: usize, lv: u32) -> *mut HtGrid {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { ht_grid_new(dim, lv, &mut g) }, HtStatus::Ok);
    g
}

fn measure(g: *const HtGrid, spec: &str) -> *mut HtMeasure {
    let mut m = ptr::null_mut();
    let s = CString::new(spec).unwrap();
    assert_eq!(unsafe { ht_measure_new(g, s.as_ptr(), &mut m) }, HtStatus::Ok, "{}", last_error());
    m
}

#[test]
fn testing_through_handles() {
    let g = grid(1, 7);
    assert_eq!(unsafe { ht_grid_cell_count(g) }, 128);
    let s = measure(g, "doubling:2:1");
    let w = measure(g, "lebesgue");
    let mut op = ptr::null_mut();
    let k = CString::new("hilbert").unwrap();
    assert_eq!(unsafe { ht_operator_new(g, k.as_ptr(), 0.0, &mut op) }, HtStatus::Ok);
    let mut c = HtComparability::default();
    assert_eq!(unsafe { ht_comparability(op, s, w, 5, 1, 0, &mut c) }, HtStatus::Ok);
    let (mut h, mut hd) = (0.0, 0.0);
    unsafe {
        assert_eq!(ht_haar_testing(op, s, w, 5, false, &mut h), HtStatus::Ok);
        assert_eq!(ht_haar_testing(op, s, w, 5, true, &mut hd), HtStatus::Ok);
    }
    assert_eq!((h, hd), (c.testing, c.testing_dual));
    assert!(c.ratio >= 0.5 - 1e-9 && c.converged);
    let mut a2 = 0.0;
    assert_eq!(unsafe { ht_a2_lambda(w, w, 0.0, 5, &mut a2) }, HtStatus::Ok);
    assert!((a2 - 1.0).abs() < 1e-12);
    unsafe {
        ht_operator_free(op);
        ht_measure_free(s);
        ht_measure_free(w);
        ht_grid_free(g);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { ht_grid_new(0, 4, &mut g) }, HtStatus::InvalidArgument);
    assert!(g.is_null() && !last_error().is_empty());
    assert_eq!(unsafe { ht_grid_new(1, 4, ptr::null_mut()) }, HtStatus::NullPointer);
    let g = grid(1, 4);
    let mut m = ptr::null_mut();
    let bad = CString::new("nope").unwrap();
    assert_eq!(unsafe { ht_measure_new(g, bad.as_ptr(), &mut m) }, HtStatus::Config);
    assert!(last_error().contains("nope"), "{}", last_error());
    let masses = [1.0; 8];
    assert_eq!(unsafe { ht_measure_from_cells(g, masses.as_ptr(), 8, &mut m) }, HtStatus::InvalidArgument);
    let masses = [0.5; 16];
    assert_eq!(unsafe { ht_measure_from_cells(g, masses.as_ptr(), 16, &mut m) }, HtStatus::Ok);
    let mut t = 0.0;
    assert_eq!(unsafe { ht_measure_total(m, &mut t) }, HtStatus::Ok);
    assert_eq!(t, 8.0);
    assert!(last_error().is_empty());
    let mut h = 0.0;
    assert_eq!(unsafe { ht_haar_testing(ptr::null(), m, m, 2, false, &mut h) }, HtStatus::NullPointer);
    unsafe {
        ht_measure_free(m);
        ht_grid_free(g);
        ht_grid_free(ptr::null_mut());
    }
}

#[test]
fn run_json_reports_and_check_failures() {
    let cfg = CString::new("command = \"matrix-demo\"\ngamma = 0.7\nladder = \"4:8\"\n").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { ht_run_json(cfg.as_ptr(), &mut out) }, HtStatus::Ok);
    let body = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_owned();
    unsafe { ht_string_free(out) };
    let doc: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(doc["report"]["growth"].as_array().unwrap().len(), 5);
    assert!(doc["metadata"].is_null());

    let empty = CString::new("").unwrap();
    assert_eq!(unsafe { ht_run_json(empty.as_ptr(), &mut out) }, HtStatus::Config);
    assert!(out.is_null());

    let halo = CString::new("command = \"experiment\"\nexperiment = \"halo\"\nmeasures = [\"lebesgue\"]\ntrials = 2\n[grid]\nmax_level = 8\n").unwrap();
    assert_eq!(unsafe { ht_run_json(halo.as_ptr(), &mut out) }, HtStatus::CheckFailed);
    assert!(!out.is_null() && last_error().contains("halo_cover"));
    unsafe { ht_string_free(out) };
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/haartest.h")
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let h = header();
    for (cc, std) in [("cc", "-std=c99"), ("c++", "-std=c++11")] {
        let lang = if cc == "cc" { "c" } else { "c++" };
        let out = Command::new(cc).args(["-fsyntax-only", "-Wall", "-Werror", std, "-x", lang]).arg(&h).output().unwrap();
        assert!(out.status.success(), "{cc}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn c_program_links_against_the_static_library() {
    // target/<profile>/deps/<test> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap();
    let lib = lib_dir.join("libhaartest_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("demo.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include <string.h>
#include "haartest.h"
int main(void) {
    HtGrid *g = NULL;
    HtMeasure *m = NULL;
    double t = 0.0;
    if (ht_grid_new(2, 3, &g) != HT_STATUS_OK) return 1;
    if (ht_measure_new(g, "doubling:2:3", &m) != HT_STATUS_OK) return 2;
    if (ht_measure_total(m, &t) != HT_STATUS_OK) return 3;
    if (ht_measure_new(g, "wat", &m) != HT_STATUS_CONFIG || strlen(ht_last_error()) == 0) return 4;
    printf("%zu %.3f %s\n", ht_grid_cell_count(g), t, ht_version());
    ht_measure_free(m);
    ht_grid_free(g);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("demo");
    let out = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let line = String::from_utf8(run.stdout).unwrap();
    assert!(line.starts_with("64 "), "{line}");
}
