use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use ghost_imaging::cli::{self, exit, RunManifest, MANIFEST_NAME};
use serde_json::Value;

fn shipped(name: &str) -> Value {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(format!("{name}.json"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

/// Runs the CLI in process; returns the exit code and the parsed `key=value` lines.
fn invoke(args: &[&str]) -> (i32, Vec<(String, String)>) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["ghostimg"];
    argv.extend_from_slice(args);
    let code = cli::run(argv, &mut out, &mut err);
    let lines = String::from_utf8(out)
        .unwrap()
        .lines()
        .map(|l| {
            let (k, v) = l.split_once('=').unwrap_or_else(|| panic!("not key=value: {l}"));
            (k.to_string(), v.to_string())
        })
        .collect();
    (code, lines)
}

fn get<'a>(lines: &'a [(String, String)], key: &str) -> Option<&'a str> {
    lines.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn small_raw(realizations: u64) -> Value {
    let mut v = shipped("raw-correlation");
    v["realizations"] = realizations.into();
    v
}

#[test]
fn version_reports_tool_and_schema() {
    let (code, lines) = invoke(&["version"]);
    assert_eq!(code, exit::OK);
    assert_eq!(get(&lines, "tool"), Some("ghostimg"));
    assert_eq!(get(&lines, "schema_version"), Some("1"));
}

#[test]
fn malformed_json_is_a_config_error_with_position() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.json");
    std::fs::write(&p, "{\n  \"schema_version\": 1,\n  \"scenario\": \n}").unwrap();
    let (code, lines) = invoke(&["run", p.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code, exit::CONFIG);
    assert_eq!(get(&lines, "status"), Some("config-error"));
    assert!(get(&lines, "error_line").is_some());
}

#[test]
fn invalid_field_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = small_raw(200);
    v["geometry"]["d2"] = (-0.05).into();
    let p = write_config(tmp.path(), "neg.json", &v);
    let (code, lines) = invoke(&["run", p.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code, exit::CONFIG);
    assert_eq!(get(&lines, "error_field"), Some("geometry.d2"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let (code, lines) = invoke(&["run", "x.json", "--bogus"]);
    assert_eq!(code, exit::CONFIG);
    assert_eq!(get(&lines, "status"), Some("usage-error"));
}

#[test]
fn aliased_grid_fails_strict_sampling_and_is_recorded_otherwise() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = small_raw(200);
    v["reference"]["dx"] = 2e-4.into();
    let p = write_config(tmp.path(), "alias.json", &v);
    let out = tmp.path().join("o");
    let (code, lines) = invoke(&["run", p.to_str().unwrap(), "--out", out.to_str().unwrap(), "--strict-sampling"]);
    assert_eq!(code, exit::SAMPLING);
    assert_eq!(get(&lines, "status"), Some("sampling-violation"));
    assert!(!out.join(MANIFEST_NAME).exists());

    let (code, lines) = invoke(&["run", p.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, exit::OK);
    assert!(get(&lines, "sampling_violation").unwrap().contains("reference"));
    let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(out.join(MANIFEST_NAME)).unwrap()).unwrap();
    assert!(!m.sampling_violations.is_empty());

    let (code, lines) = invoke(&["verify", p.to_str().unwrap()]);
    assert_eq!(code, exit::INTERNAL);
    assert_eq!(get(&lines, "check.sampling"), Some("fail"));
}

#[test]
fn single_realization_run_is_an_internal_error_and_verify_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_config(tmp.path(), "m1.json", &small_raw(1));
    let (code, lines) = invoke(&["run", p.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code, exit::INTERNAL);
    assert_eq!(get(&lines, "status"), Some("error"));

    let (code, lines) = invoke(&["verify", p.to_str().unwrap()]);
    assert_eq!(code, exit::INTERNAL);
    assert_eq!(get(&lines, "status"), Some("fail"));
    assert_eq!(get(&lines, "check.mc_vs_closed_form"), Some("fail"));
    assert_eq!(get(&lines, "check.kernel_composition"), Some("pass"));
}

#[test]
fn unmatched_geometry_runs_with_a_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = small_raw(200);
    v["geometry"]["dr"] = 0.12.into();
    let p = write_config(tmp.path(), "unmatched.json", &v);
    let out = tmp.path().join("o");
    let (code, lines) = invoke(&["run", p.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, exit::OK);
    assert!(lines.iter().any(|(k, v)| k == "warning" && v.contains("geometry")));
    let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(out.join(MANIFEST_NAME)).unwrap()).unwrap();
    assert!(m.warnings.iter().any(|w| w.contains("geometry")));
}

#[test]
fn manifest_lists_every_output_with_its_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_config(tmp.path(), "raw.json", &small_raw(256));
    let out = tmp.path().join("o");
    let (code, lines) = invoke(&["run", p.to_str().unwrap(), "--out", out.to_str().unwrap(), "--workers", "2"]);
    assert_eq!(code, exit::OK);
    let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(out.join(MANIFEST_NAME)).unwrap()).unwrap();
    assert_eq!(get(&lines, "content_hash"), Some(m.content_hash.as_str()));
    assert_eq!(m.worker_count, 2);
    let names: BTreeMap<_, _> = m.outputs.iter().map(|o| (o.path.as_str(), o)).collect();
    for name in ["dii.f64", "dii.json", "closed_form_dii.f64", "report.json"] {
        assert!(names.contains_key(name), "missing {name}");
    }
    for o in &m.outputs {
        assert_eq!(ghost_imaging::io::sha256_file(&out.join(&o.path)).unwrap(), o.sha256);
    }
    assert!(get(&lines, "metric.rel_l2_mc_vs_cf").is_some());
}

#[test]
fn verify_passes_on_shipped_raw_config() {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/raw-correlation.json");
    let (code, lines) = invoke(&["verify", p.to_str().unwrap()]);
    assert_eq!(code, exit::OK, "{lines:?}");
    assert_eq!(get(&lines, "check.matched_pearson"), Some("skip"));
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_ghostimg");
    let status = Command::new(bin).arg("version").output().unwrap().status;
    assert_eq!(status.code(), Some(exit::OK));
    let status = Command::new(bin).args(["run", "/nonexistent/config.json"]).output().unwrap();
    assert_eq!(status.status.code(), Some(exit::CONFIG));
    assert!(String::from_utf8_lossy(&status.stdout).contains("status=config-error"));
}
