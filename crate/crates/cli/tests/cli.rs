use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use chkp_cli::RunConfig;
use serde_json::Value;

const SMALL: &[&str] = &["--l-dom", "20", "--n", "128", "--n-range", "4:16"];

fn chkp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chkp"))
        .args(args)
        .env_remove("CHKP_OUTPUT_DIR")
        .output()
        .expect("run chkp")
}

fn with_small<'a>(cmd: &'a str, out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd, "--output-dir", out];
    v.extend_from_slice(SMALL);
    v.extend_from_slice(extra);
    v
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

#[test]
fn print_defaults_round_trips() {
    let out = chkp(&["print-defaults"]);
    assert!(out.status.success());
    let cfg: RunConfig = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cfg, RunConfig::default());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\"c\": 3.0000000000000000e0"));
}

#[test]
fn soliton_writes_profile_and_creates_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("a/b/c");
    let out = chkp(&["soliton", "--output-dir", target.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["soliton_profile.csv", "soliton.json", "manifest_soliton.json"] {
        assert!(target.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(target.join("soliton_profile.csv")).unwrap();
    assert!(!csv.contains('\r'));
    assert!(csv.starts_with("x,q,qx,qxx\n"));
    assert_eq!(csv.lines().count(), 1 + 1025);
    let manifest = read_json(&target.join("manifest_soliton.json"));
    assert_eq!(manifest["command"], "soliton");
    assert_eq!(manifest["files"].as_array().unwrap().len(), 2);
}

#[test]
fn threshold_speed_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = chkp(&["soliton", "--c", "2", "--kappa", "1", "--output-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("c > 2*kappa"), "{err}");
}

#[test]
fn malformed_configuration_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(chkp(&["soliton", "--output-dir", d, "--n-range", "1:8"]).status.code(), Some(2));
    assert_eq!(chkp(&["soliton", "--output-dir", d, "--family", "chebyshev"]).status.code(), Some(2));
    assert_eq!(chkp(&["soliton", "--output-dir", d, "--tol", "0"]).status.code(), Some(2));
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"speed": 3.0}"#).unwrap();
    let out = chkp(&["soliton", "--output-dir", d, "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    let out = chkp(&["soliton", "--output-dir", d, "--config", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"c": 4.0, "n": 256, "l_dom": 30.0}"#).unwrap();
    let target = dir.path().join("o");
    let out = chkp(&[
        "soliton",
        "--config",
        cfg.to_str().unwrap(),
        "--n",
        "200",
        "--output-dir",
        target.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = read_json(&target.join("manifest_soliton.json"));
    assert_eq!(manifest["config"]["c"].as_f64(), Some(4.0));
    assert_eq!(manifest["config"]["n"].as_u64(), Some(200));
    assert_eq!(manifest["config"]["l_dom"].as_f64(), Some(30.0));
    let summary = read_json(&target.join("soliton.json"));
    assert_eq!(summary["summary"]["crest"].as_f64(), Some(2.0));
}

#[test]
fn output_root_from_environment_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let env_dir = dir.path().join("env");
    let flag_dir = dir.path().join("flag");
    let run = |extra: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_chkp"))
            .arg("soliton")
            .args(extra)
            .env("CHKP_OUTPUT_DIR", &env_dir)
            .output()
            .unwrap()
    };
    assert!(run(&[]).status.success());
    assert!(env_dir.join("soliton.json").exists());
    assert!(run(&["--output-dir", flag_dir.to_str().unwrap()]).status.success());
    assert!(flag_dir.join("soliton.json").exists());
}

#[test]
fn tiny_domain_fails_the_truncation_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = chkp(&["verify", "--output-dir", d, "--l-dom", "5", "--n", "64", "--n-range", "4:16"]);
    assert_eq!(out.status.code(), Some(4));
    let report = read_json(&dir.path().join("verify_report.json"));
    assert_eq!(report["passed"], false);
    let verdicts = report["verdicts"].as_array().unwrap();
    let trunc = verdicts.iter().find(|v| v["name"] == "domain.truncation").unwrap();
    assert_eq!(trunc["pass"], false);
    assert!(trunc["measured"].as_f64().unwrap() > 1e-2);
    for v in verdicts {
        assert!(v["pass"].is_boolean());
        assert!(v.get("measured").is_some());
        assert!(v["tolerance"].is_string());
        assert!(v["anchor"].is_string());
    }
    let names: Vec<&str> = verdicts.iter().map(|v| v["name"].as_str().unwrap()).collect();
    let unique: std::collections::BTreeSet<_> = names.iter().collect();
    assert_eq!(unique.len(), names.len());
}

#[test]
fn short_branch_is_a_single_point() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = chkp(&with_small("branch", d, &["--s-max", "5e-4"]));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("branch.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(dir.path().join("fields/point_0001.csv").exists());
    assert!(dir.path().join("manifest_branch.json").exists());
}

#[test]
fn branch_table_starts_at_onset_frequency() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = chkp(&with_small("branch", d, &["--s-max", "0.01", "--field-every", "5"]));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("branch_report.json"));
    let omega0 = report["omega0"].as_f64().unwrap();
    let mut rdr = csv::Reader::from_path(dir.path().join("branch.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 10);
    let s: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert!(s.windows(2).all(|w| w[1] > w[0]));
    let omega: f64 = rows[0][1].parse().unwrap();
    assert!((omega - omega0).abs() <= 1e-4);
    assert!((omega0 - report["lambda"].as_f64().unwrap().abs().sqrt()).abs() < 1e-15);
    // First point, every fifth, and the last.
    let fields: Vec<String> = std::fs::read_dir(dir.path().join("fields"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(fields.len(), 3);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("omega"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("run");
    let t = target.to_str().unwrap();
    let mut snaps = Vec::new();
    for _ in 0..2 {
        let v = chkp(&with_small("verify", t, &[]));
        assert_eq!(v.status.code(), Some(4));
        let br = chkp(&with_small("branch", t, &["--s-max", "0.005"]));
        assert_eq!(br.status.code(), Some(0));
        snaps.push(snapshot(&target));
        std::fs::remove_dir_all(&target).unwrap();
    }
    let (sa, sb) = (&snaps[0], &snaps[1]);
    assert!(sa.contains_key("verify_report.json"));
    assert!(sa.contains_key("branch.csv"));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in sa {
        assert!(v == &sb[k], "{k} differs between reruns");
    }
}
