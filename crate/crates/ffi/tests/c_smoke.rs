//! Compile a C program against the generated header and the static library.

use std::path::{Path, PathBuf};
use std::process::Command;

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

/// `target/<profile>/` holding `libhqnn_ffi.a`, found from the test binary path.
fn profile_dir() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    exe.parent()?.parent().map(Path::to_path_buf)
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(manifest_dir().join("include/hqnn.h")).unwrap();
    for name in [
        "hqnn_last_error",
        "hqnn_density_new",
        "hqnn_density_apply_gate",
        "hqnn_density_apply_channel",
        "hqnn_density_expect_z",
        "hqnn_density_free",
        "hqnn_channel_completeness",
        "hqnn_model_new",
        "hqnn_model_forward",
        "hqnn_model_save",
        "hqnn_model_load",
        "hqnn_model_free",
        "typedef struct HqnnModel HqnnModel",
        "HQNN_STATUS_NULL_POINTER",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

#[test]
fn c_program_links_and_runs() {
    let Some(dir) = profile_dir() else { return };
    let lib = dir.join("libhqnn_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: static library or C compiler unavailable");
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let status = Command::new("cc")
        .arg(manifest_dir().join("tests/smoke.c"))
        .arg("-I")
        .arg(manifest_dir().join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile/link failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok 0.400000");
}
