use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("hamstat.h")
}

fn cc() -> Option<&'static str> {
    ["cc", "gcc", "clang"].into_iter().find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
}

#[test]
fn header_declares_api() {
    let h = fs::read_to_string(header()).unwrap();
    for sym in [
        "typedef struct HamstatMesh HamstatMesh;",
        "HAMSTAT_STATUS_OK = 0",
        "HAMSTAT_STATUS_PANIC = 6",
        "hamstat_last_error(void)",
        "hamstat_mesh_new(",
        "hamstat_example_report(",
        "hamstat_rigidity(",
        "hamstat_run_cli(",
    ] {
        assert!(h.contains(sym), "missing {sym}");
    }
}

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "hamstat.h"

int main(void) {
    HamstatMesh *m = NULL;
    if (hamstat_mesh_new(2, 8, 1.0, &m) != HAMSTAT_STATUS_OK) return 10;
    size_t n = 0, t = 0;
    double h = 0.0;
    if (hamstat_mesh_info(m, &n, &t, &h) != HAMSTAT_STATUS_OK || n != 17 || t != 24) return 11;
    HamstatExample *e = NULL;
    if (hamstat_example_new("torus", &e) != HAMSTAT_STATUS_INVALID_ARGUMENT || e != NULL) return 12;
    if (strstr(hamstat_last_error(), "torus") == NULL) return 13;
    if (hamstat_example_new("sw:1,2", &e) != HAMSTAT_STATUS_OK) return 14;
    double deg = 0.0, flux = 1.0;
    if (hamstat_example_singular_mass(e, 0.0, 0.0, &deg, &flux) != HAMSTAT_STATUS_OK) return 15;
    printf("%.12f %.3e\n", deg, flux);
    hamstat_example_free(e);
    hamstat_mesh_free(m);
    return 0;
}
"#;

#[test]
fn c_program_links_against_cdylib() {
    let Some(cc) = cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    // tests run from target/<profile>/deps
    let lib_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    if !lib_dir.join("libhamstat_ffi.so").exists() && !lib_dir.join("libhamstat_ffi.dylib").exists() {
        eprintln!("cdylib not found in {}; skipping", lib_dir.display());
        return;
    }
    let t = tempfile::tempdir().unwrap();
    let src = t.path().join("main.c");
    fs::write(&src, PROGRAM).unwrap();
    let exe = t.path().join("main");
    let inc = header().parent().unwrap().to_path_buf();
    let st = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(&src)
        .arg(format!("-I{}", inc.display()))
        .arg(format!("-L{}", lib_dir.display()))
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .arg("-lhamstat_ffi")
        .output()
        .unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let line = String::from_utf8(run.stdout).unwrap();
    let deg: f64 = line.split_whitespace().next().unwrap().parse().unwrap();
    assert!((deg.abs() - 1.0).abs() < 1e-8, "{line}");
}
