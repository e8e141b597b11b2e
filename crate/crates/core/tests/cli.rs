use std::fs;
use std::process::Command;

fn distmem() -> Command {
    Command::new(env!("CARGO_BIN_EXE_distmem"))
}

#[test]
fn run_then_bounds_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "n_agents = 5\nhorizon = 30\nseeds = 2\n").unwrap();
    let out = dir.path().join("out");
    let status = distmem()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    for f in ["manifest.txt", "trace_ogd.csv", "trace_cdogd.csv", "trace_damtogd.csv", "constants.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let bounds = distmem().args(["bounds", "--manifest"]).arg(out.join("manifest.txt")).output().unwrap();
    assert!(bounds.status.success());
    let csv = fs::read_to_string(out.join("bounds.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
}

#[test]
fn sweep_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.cfg");
    fs::write(&cfg, "n_agents = 4\nhorizon = 20\nseeds = 2\nprotocols = ogd,damtogd\n").unwrap();
    let out = dir.path().join("out");
    let status = distmem()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--axis", "rho", "--values", "0.2,0.5,0.8", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = fs::read_to_string(out.join("sweep_rho.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 2 * 2);
}

#[test]
fn invalid_config_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "n_agents = 5\nhorizon = 10\nrho = 1.5\n").unwrap();
    let status = distmem().args(["run", "--config"]).arg(&cfg).arg("--out").arg(dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn missing_config_file_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let status = distmem()
        .args(["run", "--config"])
        .arg(dir.path().join("absent.cfg"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn selftest_passes() {
    let out = distmem().arg("selftest").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(String::from_utf8_lossy(&out.stdout).matches("PASS").count(), 5);
}
