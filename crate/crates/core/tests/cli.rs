use std::path::Path;
use std::process::{Command, Output};

use roughflow::cli::Manifest;
use roughflow::densitylab::YAMATO_FIELD_FILE;

fn roughflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roughflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn sample_fbm_writes_paths_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let r = roughflow(&["--out", out, "sample-fbm", "--hurst", "0.4", "--n-points", "257", "--paths", "10"]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let dir = tmp.path().join("sample-fbm-seed0");
    let m = manifest(&dir);
    let csvs = m.files.iter().filter(|f| f.file.ends_with(".csv")).count();
    assert_eq!(csvs, 10);
    assert!(m.files.iter().any(|f| f.file == "metadata.json"));
    for f in &m.files {
        let bytes = std::fs::read(dir.join(&f.file)).unwrap();
        assert_eq!(roughflow::cli::sha256_hex(&bytes), f.sha256);
    }
    let stdout = String::from_utf8(r.stdout).unwrap();
    assert!(stdout.starts_with('{') && stdout.contains("\"experiment\": \"sample-fbm\""));
}

#[test]
fn echoed_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let r = roughflow(&["--out", a.to_str().unwrap(), "signature", "--mesh-exp", "6", "--level", "3", "--seed", "4"]);
    assert_eq!(r.status.code(), Some(0));
    let cfg = a.join("signature-seed4/config.json");
    let r = roughflow(&["--out", b.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(manifest(&a.join("signature-seed4")), manifest(&b.join("signature-seed4")));
}

#[test]
fn check_fields_reports_and_signals_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let vf = tmp.path().join("yamato.vf");
    std::fs::write(&vf, YAMATO_FIELD_FILE).unwrap();
    let out = tmp.path().join("out");
    let args = |extra: &[&str]| {
        let mut v = vec!["--out", out.to_str().unwrap(), "check-fields", vf.to_str().unwrap()];
        v.extend_from_slice(extra);
        v.into_iter().map(String::from).collect::<Vec<_>>()
    };
    let ok = Command::new(env!("CARGO_BIN_EXE_roughflow"))
        .args(args(&["--nilpotent", "3", "--hormander", "0,0,0", "--constant-brackets"]))
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let report = std::fs::read_to_string(out.join("check-fields/report.json")).unwrap();
    assert!(report.contains("\"all_pass\": true"));
    let bad = Command::new(env!("CARGO_BIN_EXE_roughflow"))
        .args(args(&["--nilpotent", "2"]))
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("nilpotency"));
}

#[test]
fn invalid_input_exits_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(roughflow(&["--out", out, "sample-fbm", "--hurst", "1.5"]).status.code(), Some(2));
    assert_eq!(roughflow(&["--out", out, "sample-fbm", "--bogus"]).status.code(), Some(2));
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"experiment": "sample-fbm", "hurst": 0.4}"#).unwrap();
    assert_eq!(roughflow(&["--out", out, "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(
        roughflow(&["--out", out, "solve", "--fields", "/nonexistent.vf", "--initial", "0"]).status.code(),
        Some(2)
    );
    assert_eq!(roughflow(&["--out", out]).status.code(), Some(2));
}

#[test]
fn density_refusal_exits_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let vf = tmp.path().join("line.vf");
    std::fs::write(&vf, "2 1\n1\n0\n").unwrap();
    let r = roughflow(&[
        "--out",
        tmp.path().to_str().unwrap(),
        "density",
        "--fields",
        vf.to_str().unwrap(),
        "--functional",
        "0,1",
        "--paths",
        "200",
    ]);
    assert_eq!(r.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&r.stderr).contains("Hörmander"));
}
