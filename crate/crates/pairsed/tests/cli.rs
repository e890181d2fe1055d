use std::path::Path;
use std::process::{Command, Output};

use pairsed::manifest::{verify_manifest, RunManifest, MANIFEST_FILE};
use pairsed::RunError;
use pairsed_core::Error;

const SMALL_MICRO: &str = r#"
seed = 3
n = 24
r0 = 0.05
dt = 0.05
t_end = 0.2
save_every = 2

[rho0]
kind = "uniform_ball"
radius = 1.0
"#;

fn pairsed(args: &[&str], config: Option<&str>, dir: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pairsed"));
    cmd.args(args).arg("--out").arg(dir.join("out"));
    if let Some(text) = config {
        let p = dir.join("cfg.toml");
        std::fs::write(&p, text).unwrap();
        cmd.arg("--config").arg(p);
    }
    cmd.output().unwrap()
}

fn manifest(dir: &Path) -> (Vec<u8>, RunManifest) {
    let bytes = std::fs::read(dir.join("out").join(MANIFEST_FILE)).unwrap();
    let m = serde_json::from_slice(&bytes).unwrap();
    (bytes, m)
}

#[test]
fn micro_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let out = pairsed(&["micro"], Some(SMALL_MICRO), d.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let (ma, parsed) = manifest(a.path());
    assert_eq!(ma, manifest(b.path()).0);
    let names: Vec<&str> = parsed.files.iter().map(|f| f.name.as_str()).collect();
    for want in ["config.resolved.json", "report.json", "snapshots.jsonl", "trajectory.csv"] {
        assert!(names.contains(&want), "{names:?}");
    }
    assert!(verify_manifest(&a.path().join("out"), &parsed).unwrap().is_empty());
    assert!(a.path().join("out/timing.json").exists());

    let c = tempfile::tempdir().unwrap();
    pairsed(&["micro", "--seed", "4"], Some(SMALL_MICRO), c.path());
    let (_, other) = manifest(c.path());
    assert_ne!(other.config_hash, parsed.config_hash);
    assert_eq!(other.seed, 4);
}

#[test]
fn kernels_check_succeeds_without_config() {
    let d = tempfile::tempdir().unwrap();
    let out = pairsed(&["kernels-check"], None, d.path());
    assert!(out.status.success());
    let report = std::fs::read_to_string(d.path().join("out/report.json")).unwrap();
    assert!(report.contains("pair_inversion_sum"));
}

#[test]
fn config_errors_exit_with_two() {
    let d = tempfile::tempdir().unwrap();
    let cases = [
        ("n = 0\n", "N >= 1"),
        ("[thresholds]\nm1 = 1.2\nm2 = 1.5\n", "m1 > m2 > 1"),
        ("bogus = 1\n", "bogus"),
        ("mode = \"meso_kinetic\"\n", "mode"),
    ];
    for (text, needle) in cases {
        let out = pairsed(&["micro"], Some(text), d.path());
        assert_eq!(out.status.code(), Some(2), "{text}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(needle), "{err}");
    }
    // Line numbers refer to the file as written.
    let out = pairsed(&["micro"], Some("seed = 1\nn = \"many\"\n"), d.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn missing_config_file_is_an_io_error() {
    let d = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pairsed"))
        .args(["micro", "--config"])
        .arg(d.path().join("absent.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exit_codes_by_failure_family() {
    let sim = |source| RunError::Sim { context: "x".into(), source };
    assert_eq!(sim(Error::BlowUp { time: 1.0, reason: "r".into() }).exit_code(), 3);
    assert_eq!(sim(Error::NonConvergence { iterations: 3, history: vec![] }).exit_code(), 4);
    assert_eq!(RunError::ChecksFailed(vec!["a".into()]).exit_code(), 5);
    assert_eq!(RunError::Io(std::io::Error::other("x")).exit_code(), 1);
}

#[test]
fn single_rung_converge_has_no_slopes() {
    let d = tempfile::tempdir().unwrap();
    let text = r#"
r0 = 0.1
[rho0]
kind = "uniform_ball"
radius = 1.0
[converge]
n_list = [64]
replicates = 2
probes = 6
"#;
    let out = pairsed(&["converge"], Some(text), d.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("out/report.json")).unwrap()).unwrap();
    assert!(report["slopes"]["e0_vs_w_inf"].is_null());
    assert_eq!(report["means"].as_array().unwrap().len(), 1);
    let rates = std::fs::read_to_string(d.path().join("out/rates.csv")).unwrap();
    assert_eq!(rates.lines().count(), 4);
}

#[test]
fn correlated_run_writes_a_readable_grid() {
    let d = tempfile::tempdir().unwrap();
    let text = r#"
m = 200
dt = 0.1
t_end = 0.2
[rho0]
kind = "uniform_ball"
radius = 1.0
[meso]
ensemble = "samples"
grid = [8, 8, 8]
"#;
    let out = pairsed(&["correlated"], Some(text), d.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (f, t) = pairsed::formats::read_grid(&d.path().join("out/field.fgrd")).unwrap();
    assert_eq!(t, 0.2);
    assert!(f.values.iter().all(|v| v.is_finite()));
}
