//! Builds `smoke.c` against the generated header and the shared library.

use std::path::{Path, PathBuf};
use std::process::Command;

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

/// Directory holding the built `libngfreg_ffi` next to this test binary.
fn lib_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(manifest().join("include/ngfreg.h")).unwrap();
    for name in [
        "ngfreg_last_error", "ngfreg_image_read", "ngfreg_image_create", "ngfreg_image_write", "ngfreg_image_free",
        "ngfreg_config_new", "ngfreg_register", "ngfreg_warp", "ngfreg_deformation_write", "ngfreg_landmark_error",
        "typedef struct NgfregImage NgfregImage", "NGFREG_STATUS_GRID_MISMATCH = 4",
    ] {
        assert!(h.contains(name), "{name} missing from header");
    }
}

#[test]
fn c_program_links_and_runs() {
    let lib = lib_dir();
    let has_lib = ["libngfreg_ffi.so", "libngfreg_ffi.dylib"].iter().any(|n| lib.join(n).exists());
    if Command::new("cc").arg("--version").output().is_err() || !has_lib {
        eprintln!("skipped: no C compiler or shared library");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(manifest().join("tests/smoke.c"))
        .arg("-I")
        .arg(manifest().join("include"))
        .arg("-L")
        .arg(&lib)
        .arg(format!("-Wl,-rpath,{}", lib.display()))
        .arg("-lngfreg_ffi")
        .arg("-o")
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("max_displacement 0"));
}
