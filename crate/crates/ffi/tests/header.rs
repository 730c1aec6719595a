use std::path::{Path, PathBuf};
use std::process::Command;

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

/// The static library sits next to the test binary's deps directory.
fn static_lib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let profile_dir = exe.parent()?.parent()?;
    let lib = profile_dir.join("liblgmjoint_ffi.a");
    lib.exists().then_some(lib)
}

fn compiler() -> String {
    std::env::var("CC").unwrap_or_else(|_| "cc".into())
}

#[test]
fn header_declares_the_public_surface() {
    let h = std::fs::read_to_string(manifest_dir().join("include/lgmjoint.h")).unwrap();
    for sym in [
        "typedef struct LgmFit LgmFit;",
        "LGM_STATUS_VALIDATION = 3",
        "LGM_STATUS_NUMERICAL = 4",
        "lgm_fit(",
        "lgm_fit_free(",
        "lgm_fit_summary(",
        "lgm_predict(",
        "lgm_verify(",
        "lgm_last_error(",
        "lgm_string_free(",
    ] {
        assert!(h.contains(sym), "header lacks {sym}");
    }
}

#[test]
fn header_compiles_as_c99() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("check.c");
    std::fs::write(&src, "#include \"lgmjoint.h\"\nint main(void) { return LGM_STATUS_OK; }\n").unwrap();
    let status = Command::new(compiler())
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(manifest_dir().join("include"))
        .arg(&src)
        .status()
        .expect("a C compiler");
    assert!(status.success());
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "lgmjoint.h"

int main(void) {
    const char *config = "{\"id\":\"id\",\"longitudinal\":[{\"response\":\"y\",\"family\":\"gaussian\","
                         "\"fixed\":[\"1\"],\"random\":[\"1\"]}],\"control\":{\"int_strategy\":\"eb\"}}";
    const char *data = "id,y\n1,0.1\n1,0.3\n2,1.2\n2,0.9\n3,-0.2\n3,0.1\n4,0.5\n4,0.8\n";
    LgmFit *fit = NULL;
    if (lgm_fit(config, data, NULL, LGM_STRATEGY_FROM_CONFIG, &fit) != LGM_STATUS_OK) {
        fprintf(stderr, "%s\n", lgm_last_error());
        return 1;
    }
    double mean = 0, sd = 0;
    if (lgm_fit_marginal(fit, "Intercept_L1", &mean, &sd, NULL, NULL) != LGM_STATUS_OK) return 2;
    char *text = NULL;
    if (lgm_fit_summary(fit, NULL, LGM_FORMAT_TEXT, &text) != LGM_STATUS_OK) return 3;
    int has_heading = strstr(text, "Longitudinal outcome (L1, gaussian)") != NULL;
    lgm_string_free(text);
    if (lgm_fit(config, NULL, NULL, LGM_STRATEGY_EB, &fit) == LGM_STATUS_OK) return 4;
    lgm_fit_free(fit);
    printf("%.6f %.6f %d\n", mean, sd, has_heading);
    return has_heading ? 0 : 5;
}
"#;

fn run_c(lib: &Path) -> std::process::Output {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let status = Command::new(compiler())
        .args(["-std=c99", "-O1", "-I"])
        .arg(manifest_dir().join("include"))
        .arg(&src)
        .arg(lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("a C compiler");
    assert!(status.success(), "linking against {}", lib.display());
    Command::new(&exe).output().unwrap()
}

#[test]
fn c_program_fits_through_the_static_library() {
    let lib = static_lib().expect("cargo test builds liblgmjoint_ffi.a alongside the test binary");
    let out = run_c(&lib);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "exit {:?}: {stdout} {}", out.status, String::from_utf8_lossy(&out.stderr));
    let fields: Vec<f64> = stdout.split_whitespace().map(|v| v.parse().unwrap()).collect();
    assert!(fields[0].is_finite() && fields[1] > 0.0);
}
