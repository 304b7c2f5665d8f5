use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use qsdlab_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(qsdlab_last_error()) }.to_string_lossy().into_owned()
}

const HAWK_DOVE: [f64; 4] = [-1.0, 2.0, 0.0, 1.0];

#[test]
fn solve_through_handles() {
    unsafe {
        let mut grid = ptr::null_mut();
        assert_eq!(qsdlab_grid_new(2, 20, &mut grid), QsdlabStatus::Ok);
        assert_eq!(qsdlab_grid_len(grid), 21);
        assert_eq!(qsdlab_grid_interior_len(grid), 19);
        let mut x = [0.0; 2];
        assert_eq!(qsdlab_grid_coords(grid, 5, x.as_mut_ptr(), 2), QsdlabStatus::Ok);
        assert!((x[0] + x[1] - 1.0).abs() < 1e-15);

        let mut protocol = ptr::null_mut();
        let s = qsdlab_protocol_aspiration_uniform(HAWK_DOVE.as_ptr(), 2, 0.5, &mut protocol);
        assert_eq!(s, QsdlabStatus::Ok);
        let mut f = [0.0; 2];
        let half = [0.5, 0.5];
        assert_eq!(qsdlab_protocol_mean_field(protocol, half.as_ptr(), 2, f.as_mut_ptr()), QsdlabStatus::Ok);
        assert!(f[0].abs() < 1e-15);

        let mut kernel = ptr::null_mut();
        assert_eq!(qsdlab_kernel_new(protocol, grid, &mut kernel), QsdlabStatus::Ok);
        let mut sol = ptr::null_mut();
        assert_eq!(qsdlab_qsd_solve(kernel, 0.0, 0, &mut sol), QsdlabStatus::Ok);
        let mut summary = QsdlabQsdSummary::default();
        assert_eq!(qsdlab_qsd_summary(sol, &mut summary), QsdlabStatus::Ok);
        assert!(summary.rho > 0.0 && summary.rho < 1.0);
        assert!(summary.residual <= 1e-12);
        assert!((summary.rho + summary.one_minus_rho - 1.0).abs() < 1e-12);

        let mut needed = 0usize;
        assert_eq!(qsdlab_qsd_mu(sol, ptr::null_mut(), 0, &mut needed), QsdlabStatus::Ok);
        assert_eq!(needed, 19);
        let mut small = [0.0; 3];
        assert_eq!(qsdlab_qsd_mu(sol, small.as_mut_ptr(), 3, ptr::null_mut()), QsdlabStatus::BufferTooSmall);
        assert!(last_error().contains("19"));
        let mut mu = vec![0.0; needed];
        assert_eq!(qsdlab_qsd_mu(sol, mu.as_mut_ptr(), mu.len(), ptr::null_mut()), QsdlabStatus::Ok);
        assert!((mu.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(last_error(), "");

        qsdlab_qsd_free(sol);
        qsdlab_kernel_free(kernel);
        qsdlab_protocol_free(protocol);
        qsdlab_grid_free(grid);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut grid = ptr::null_mut();
        assert_eq!(qsdlab_grid_new(1, 5, &mut grid), QsdlabStatus::InvalidArgument);
        assert!(grid.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(qsdlab_grid_new(2, 5, ptr::null_mut()), QsdlabStatus::NullPointer);
        assert_eq!(qsdlab_grid_len(ptr::null()), 0);

        let bad = CString::new("[model]\nprotocol = \"pairwise_proportional\"\n").unwrap();
        let mut protocol = ptr::null_mut();
        assert_eq!(qsdlab_protocol_from_toml(bad.as_ptr(), &mut protocol), QsdlabStatus::Config);
        assert!(last_error().contains("model.payoff"), "{}", last_error());

        let good = CString::new("[model]\npayoff = [[-1.0, 2.0], [0.0, 1.0]]\n").unwrap();
        assert_eq!(qsdlab_protocol_from_toml(good.as_ptr(), &mut protocol), QsdlabStatus::Ok);
        let mut grid3 = ptr::null_mut();
        assert_eq!(qsdlab_grid_new(3, 5, &mut grid3), QsdlabStatus::Ok);
        let mut kernel = ptr::null_mut();
        assert_eq!(qsdlab_kernel_new(protocol, grid3, &mut kernel), QsdlabStatus::Numerical);
        assert!(kernel.is_null());
        qsdlab_grid_free(grid3);
        qsdlab_protocol_free(protocol);
        qsdlab_kernel_free(ptr::null_mut());

        let v = CStr::from_ptr(qsdlab_version()).to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/qsdlab.h")
}

#[test]
fn header_declares_the_api() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "typedef struct QsdlabGrid QsdlabGrid;",
        "QSDLAB_STATUS_NUMERICAL = 4",
        "qsdlab_qsd_solve(",
        "qsdlab_last_error(void)",
    ] {
        assert!(text.contains(name), "missing {name}");
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "qsdlab.h"

int main(void) {
    double payoff[4] = {-1.0, 2.0, 0.0, 1.0};
    QsdlabGrid *grid = NULL;
    QsdlabProtocol *protocol = NULL;
    QsdlabKernel *kernel = NULL;
    QsdlabQsd *sol = NULL;
    QsdlabQsdSummary s;
    if (qsdlab_grid_new(2, 30, &grid) != QSDLAB_STATUS_OK) return 1;
    if (qsdlab_protocol_aspiration_uniform(payoff, 2, 0.5, &protocol) != QSDLAB_STATUS_OK) return 2;
    if (qsdlab_kernel_new(protocol, grid, &kernel) != QSDLAB_STATUS_OK) return 3;
    if (qsdlab_qsd_solve(kernel, 0.0, 0, &sol) != QSDLAB_STATUS_OK) return 4;
    qsdlab_qsd_summary(sol, &s);
    printf("%.6e\n", s.one_minus_rho);
    qsdlab_qsd_free(sol);
    qsdlab_kernel_free(kernel);
    qsdlab_protocol_free(protocol);
    qsdlab_grid_free(grid);
    return 0;
}
"#;

/// Directory holding the staticlib built alongside this test binary.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_staticlib() {
    let lib = artifact_dir().join("libqsdlab_ffi.a");
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    assert!(lib.exists(), "{} missing", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let bin = dir.path().join("main");
    let status = Command::new(cc)
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let value: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!(value > 0.0 && value < 1e-4, "{value}");
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
