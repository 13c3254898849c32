use std::ffi::{c_char, c_int, CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use superinfo::data::{save_container, DatasetContainer, SampleShape};
use superinfo::tensor::Tensor;
use superinfo_ffi::*;

fn last_error() -> String {
    let p = si_last_error();
    assert!(!p.is_null());
    // SAFETY: non-null error strings are NUL-terminated.
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn joint_from_csv(csv: &str) -> *mut SiJoint {
    let text = CString::new(csv).unwrap();
    let mut j = ptr::null_mut();
    // SAFETY: valid string and out-pointer.
    assert_eq!(unsafe { si_joint_from_csv(text.as_ptr(), &mut j) }, SiStatus::Ok);
    j
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn information_measures() {
    let j = joint_from_csv("var:a:2,var:b:2,p\n0,0,0.5\n1,1,0.5\n");
    let (mut h, mut i) = (0.0, 0.0);
    // SAFETY: live handle and valid strings and out-pointers throughout.
    unsafe {
        assert_eq!(si_entropy(j, c("a").as_ptr(), &mut h), SiStatus::Ok);
        assert_eq!(si_mutual_info(j, c("a").as_ptr(), c("b").as_ptr(), &mut i), SiStatus::Ok);
        let mut n = 0;
        assert_eq!(si_joint_num_variables(j, &mut n), SiStatus::Ok);
        assert_eq!(n, 2);
        let mut x = 0.0;
        assert_eq!(si_mutual_info(j, c("a").as_ptr(), c("zz").as_ptr(), &mut x), SiStatus::InvalidArgument);
        assert!(last_error().contains("zz"));
        si_joint_free(j);
    }
    assert!((h - std::f64::consts::LN_2).abs() < 1e-15);
    assert!((i - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn joint_new_and_conditional_measures() {
    // XOR: a, b fair coins, c = a xor b.
    let names = [c("a"), c("b"), c("c")];
    let name_ptrs: Vec<*const c_char> = names.iter().map(|n| n.as_ptr()).collect();
    let cards = [2usize, 2, 2];
    let mut probs = [0.0; 8];
    for a in 0..2 {
        for b in 0..2 {
            probs[a * 4 + b * 2 + (a ^ b)] = 0.25;
        }
    }
    let mut j = ptr::null_mut();
    let (mut cmi, mut ii) = (0.0, 0.0);
    // SAFETY: arrays sized as declared; live handle afterwards.
    unsafe {
        assert_eq!(si_joint_new(name_ptrs.as_ptr(), cards.as_ptr(), 3, probs.as_ptr(), 8, &mut j), SiStatus::Ok);
        assert_eq!(si_conditional_mi(j, c("a").as_ptr(), c("b").as_ptr(), c("c").as_ptr(), &mut cmi), SiStatus::Ok);
        assert_eq!(si_interaction_info(j, c("a").as_ptr(), c("b").as_ptr(), c("c").as_ptr(), &mut ii), SiStatus::Ok);
        si_joint_free(j);
    }
    assert!((cmi - std::f64::consts::LN_2).abs() < 1e-12);
    assert!((ii + std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn invalid_inputs_report_status_codes() {
    let mut j = ptr::null_mut();
    let bad = c("var:a:2,p\n0,0.3\n1,0.6\n");
    // SAFETY: valid pointers or deliberate nulls, which the API rejects.
    unsafe {
        assert_eq!(si_joint_from_csv(bad.as_ptr(), &mut j), SiStatus::InvalidDistribution);
        assert!(j.is_null());
        assert_eq!(si_joint_from_csv(ptr::null(), &mut j), SiStatus::NullPointer);
        assert_eq!(si_entropy(ptr::null(), c("a").as_ptr(), &mut 0.0), SiStatus::NullPointer);
        let mut v = 0.0;
        assert_eq!(si_gaussian_linear_mi(1.0, -1.0, &mut v), SiStatus::InvalidArgument);
        assert_eq!(si_gaussian_linear_mi(1.0, 1.0, ptr::null_mut()), SiStatus::NullPointer);
        let mut flag: c_int = -1;
        assert_eq!(si_run_mi_checks(0, 1, &mut flag), SiStatus::InvalidArgument);
        assert_eq!(si_run_mi_checks(2, 1, &mut flag), SiStatus::Ok);
        assert_eq!(flag, 1);
        si_joint_free(ptr::null_mut());
        si_dataset_free(ptr::null_mut());
    }
}

#[test]
fn loss_functions() {
    let z = [1.0, 0.0, -1.0, 0.0];
    let (mut nt, mut kl, mut total) = (0.0, 0.0, 0.0);
    // SAFETY: buffers sized as declared.
    unsafe {
        assert_eq!(si_nt_xent(z.as_ptr(), z.as_ptr(), 2, 2, 0.5, &mut nt), SiStatus::Ok);
        assert_eq!(si_gaussian_kl([1.0].as_ptr(), [0.0].as_ptr(), 1, 1, &mut kl), SiStatus::Ok);
        let parts = [1.0, 2.0, 2.0, 3.0, 3.0];
        assert_eq!(si_superinfo_total(parts.as_ptr(), [0.01, 0.01, 0.1, 0.1].as_ptr(), &mut total), SiStatus::Ok);
        assert_eq!(si_superinfo_total(parts.as_ptr(), [0.01, -1.0, 0.1, 0.1].as_ptr(), &mut total), SiStatus::InvalidArgument);
        assert_eq!(si_nt_xent(z.as_ptr(), z.as_ptr(), 1, 4, 0.5, &mut nt), SiStatus::InvalidArgument);
    }
    assert!((nt - (1.0 + 2.0 * (-4.0f64).exp()).ln()).abs() < 1e-12);
    assert!((kl - 0.5).abs() < 1e-15);
    assert!((total - 1.64).abs() < 1e-12);
}

#[test]
fn dataset_handles() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.sids");
    let c0 = DatasetContainer::new(
        SampleShape::Vector(3),
        Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
        Some(vec![0, 1]),
    )
    .unwrap();
    save_container(&c0, &path).unwrap();
    let p = c(path.to_str().unwrap());
    let mut d = ptr::null_mut();
    let (mut n, mut dim, mut has) = (0, 0, 0);
    let mut samples = [0f32; 6];
    let mut labels = [9u32; 2];
    // SAFETY: valid path and buffers sized as declared.
    unsafe {
        assert_eq!(si_dataset_load(p.as_ptr(), &mut d), SiStatus::Ok);
        assert_eq!(si_dataset_shape(d, &mut n, &mut dim, &mut has), SiStatus::Ok);
        assert_eq!(si_dataset_samples(d, samples.as_mut_ptr(), 6), SiStatus::Ok);
        assert_eq!(si_dataset_samples(d, samples.as_mut_ptr(), 5), SiStatus::InvalidArgument);
        assert_eq!(si_dataset_labels(d, labels.as_mut_ptr(), 2), SiStatus::Ok);
        si_dataset_free(d);
        let missing = c(dir.path().join("none.sids").to_str().unwrap());
        assert_eq!(si_dataset_load(missing.as_ptr(), &mut d), SiStatus::Io);
        std::fs::write(dir.path().join("bad.sids"), b"NOPE").unwrap();
        let bad = c(dir.path().join("bad.sids").to_str().unwrap());
        assert_eq!(si_dataset_load(bad.as_ptr(), &mut d), SiStatus::Format);
    }
    assert_eq!((n, dim, has), (2, 3, 1));
    assert_eq!(samples, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    assert_eq!(labels, [0, 1]);
}

#[test]
fn version_string() {
    // SAFETY: static NUL-terminated string.
    let v = unsafe { CStr::from_ptr(si_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include").join("superinfo.h")
}

#[test]
fn header_declares_the_api() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "typedef struct SiJoint SiJoint;",
        "typedef struct SiDataset SiDataset;",
        "SI_STATUS_OK = 0",
        "SI_STATUS_PANIC = 7",
        "si_last_error(void)",
        "si_joint_new(",
        "si_mutual_info(",
        "si_nt_xent(",
        "si_dataset_load(",
    ] {
        assert!(text.contains(name), "missing {name}");
    }
}

const C_PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "superinfo.h"

int main(void) {
    SiJoint *j = NULL;
    if (si_joint_from_csv("var:a:2,var:b:2,p\n0,0,0.5\n1,1,0.5\n", &j) != SI_STATUS_OK) return 1;
    double mi = 0.0;
    if (si_mutual_info(j, "a", "b", &mi) != SI_STATUS_OK) return 2;
    si_joint_free(j);
    if (fabs(mi - log(2.0)) > 1e-12) return 3;
    if (si_joint_from_csv("var:a:2,p\n0,0.3\n1,0.6\n", &j) != SI_STATUS_INVALID_DISTRIBUTION) return 4;
    if (si_last_error() == NULL) return 5;
    printf("ok\n");
    return 0;
}
"#;

/// Compiles and runs a C program against the header and static library when
/// a C compiler and the archive are available.
#[test]
fn c_program_links_and_runs() {
    let Ok(exe) = std::env::current_exe() else { return };
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap().to_path_buf();
    let archive = profile_dir.join("libsuperinfo_ffi.a");
    let has_cc = Command::new("cc").arg("--version").output().is_ok_and(|o| o.status.success());
    if !has_cc || !archive.exists() {
        eprintln!("skipping: cc or {} not available", archive.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let bin = dir.path().join("main");
    let out = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&archive)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert_eq!(run.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&run.stdout), "ok\n");
}
