use std::path::{Path, PathBuf};
use std::process::Command;

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

/// Directory holding the static library built alongside this test binary.
fn lib_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(crate_dir().join("include/sverl.h")).unwrap();
    let src = std::fs::read_to_string(crate_dir().join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 10);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}

#[test]
fn c_program_links_and_explains() {
    let dir = std::env::temp_dir().join(format!("sverl-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let src = dir.join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "sverl.h"

int main(void) {
    SverlExplainer *h = NULL;
    if (sverl_explainer_open("roadsign", &h) != SVERL_STATUS_OK) return 10;
    double phi[2];
    SverlSummary sum;
    SverlStatus st = sverl_explain_exact(h, SVERL_TARGET_PREDICTION, "direction=L,distance=2", NULL,
                                         SVERL_REMOVAL_CONDITIONAL, phi, 2, &sum);
    if (st != SVERL_STATUS_OK) return 11;
    printf("%.6f %.6f %.6f %.6f\n", phi[0], phi[1], sum.baseline, sum.grand);
    sverl_explainer_free(h);
    SverlExplainer *bad = NULL;
    if (sverl_explainer_open("missing", &bad) != SVERL_STATUS_UNKNOWN_ENVIRONMENT) return 12;
    printf("%s\n", sverl_last_error());
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.join("smoke");
    let lib = lib_dir().join("libsverl_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&exe)
        .status()
        .expect("a C compiler is available as `cc`");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("0.250000 0.250000 8.500000 9.000000"));
    assert!(lines.next().unwrap().contains("missing"));
    std::fs::remove_dir_all(&dir).ok();
}
