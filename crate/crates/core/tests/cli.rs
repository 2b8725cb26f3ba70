use std::fs;
use std::path::Path;
use std::process::Command;

use homog_core::report::parse_series_csv;

fn homog(dir: &Path, args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_homog"))
        .args(args)
        .env("HOMOG_OUTPUT_ROOT", dir)
        .output()
        .expect("binary runs")
        .status
        .code()
        .expect("exit code")
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

const SMALL_STUDY: &[&str] = &[
    "study",
    "--set",
    "grids.eps_inv=[4, 8]",
    "--set",
    "grids.elements_per_period=16",
    "--set",
    "study.reference_n=32",
    "--set",
    "study.reference_m=32",
    "--set",
    "study.kinds=[\"convergence\", \"potential_pairing\"]",
];

#[test]
fn study_output_is_byte_identical_across_runs() {
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let c1 = homog(d1.path(), SMALL_STUDY);
    let c2 = homog(d2.path(), SMALL_STUDY);
    assert_eq!(c1, c2);
    assert!(c1 == 0 || c1 == 1, "exit {c1}");
    let (t1, t2) = (read_tree(d1.path()), read_tree(d2.path()));
    assert!(t1.iter().any(|(n, _)| n == "manifest.json"));
    assert_eq!(t1, t2);
    let csv = t1
        .iter()
        .find(|(n, _)| n.starts_with("convergence_") && n.ends_with(".csv"))
        .unwrap();
    let rows = parse_series_csv(std::str::from_utf8(&csv.1).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
}

#[test]
fn exit_codes_follow_the_error_class() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    assert_eq!(homog(dir, &["validate"]), 0);
    assert_eq!(homog(dir, &["validate", "--set", "problem.p=1.5"]), 2);
    assert_eq!(homog(dir, &["validate", "--set", "problem.f=\"sin(\""]), 2);
    assert_eq!(homog(dir, &["validate", "--set", "nope.key=1"]), 2);
    assert_eq!(homog(dir, &["validate", "--config", "/nonexistent/run.toml"]), 2);
    assert_eq!(homog(dir, &["validate", "--set", "fields.v=\"1 + sin(2*pi*y)\""]), 3);
    assert_eq!(homog(dir, &["validate", "--set", "fields.a=\"sin(2*pi*y)\""]), 3);
    assert_eq!(homog(dir, &["frobnicate"]), 2);
    assert_eq!(homog(dir, &["--help"]), 0);
}

#[test]
fn solver_failure_exits_four() {
    let d = tempfile::tempdir().unwrap();
    let code = homog(
        d.path(),
        &[
            "solve-cell",
            "--set",
            "problem.p=3",
            "--set",
            "solver.max_iter=1",
            "--set",
            "solver.delta_schedule=[1e-8]",
        ],
    );
    assert_eq!(code, 4);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(d.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["exit_code"], 4);
    assert!(manifest["error"].is_string());
}

#[test]
fn config_file_and_manifest_hash() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.toml");
    fs::write(&cfg, "[problem]\np = 3\n\n[cell]\ntheta = -1.0\nxi = [0.5, 0.0]\n").unwrap();
    let out = d.path().join("out");
    assert_eq!(homog(&out, &["solve-cell", "--config", cfg.to_str().unwrap()]), 0);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["problem"]["p"], 3.0);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    for art in manifest["artifacts"].as_array().unwrap() {
        let bytes = fs::read(out.join(art["path"].as_str().unwrap())).unwrap();
        assert_eq!(art["sha256"], homog_core::report::sha256_hex(&bytes));
    }
    let cell: serde_json::Value = serde_json::from_slice(&fs::read(out.join("cell.json")).unwrap()).unwrap();
    assert_eq!(cell["theta"], -1.0);
}
