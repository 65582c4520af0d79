use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pcn(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pcn")).args(args).arg("--out").arg(out).output().expect("spawn pcn")
}

fn config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn missing_config_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = pcn(&["allocate", "--config", "/nonexistent/run.toml"], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot read"));
}

#[test]
fn unknown_field_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[allocation]\ncandidats = 4\n");
    let o = pcn(&["allocate", "--config", &cfg], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_protocol_config_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[protocol.net]\nhubs = 1\n");
    let o = pcn(&["protocol-sim", "--config", &cfg], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_flag_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = pcn(&["allocate", "--no-such-flag"], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn dry_run_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for cmd in ["allocate", "route-sim", "protocol-sim", "deadlock-demo", "ccbt", "choice-study", "sweep"] {
        let o = pcn(&[cmd, "--dry-run"], &out);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(!out.exists());
}

#[test]
fn large_instance_needs_approx() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[allocation]\nnodes = 100\ncandidates = 50\nclients = 20\n");
    let out = dir.path().join("out");
    let o = pcn(&["allocate", "--config", &cfg], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--approx"));

    let o = pcn(&["allocate", "--config", &cfg, "--approx"], &out);
    assert!(o.status.success());
    let csv = fs::read_to_string(out.join("allocation.csv")).unwrap();
    let row = csv.lines().nth(1).unwrap();
    assert!(row.ends_with(",double_greedy,NA"), "{row}");
}

#[test]
fn timing_fills_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert!(pcn(&["allocate", "--timing"], &out).status.success());
    let csv = fs::read_to_string(out.join("allocation.csv")).unwrap();
    let wall = csv.lines().nth(1).unwrap().rsplit(',').next().unwrap();
    assert!(wall.parse::<f64>().is_ok_and(|w| w >= 0.0), "{wall}");
}

#[test]
fn empty_sweep_gives_header_only_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "[sweep]\nomega = []\ntau = []\n");
    let out = dir.path().join("out");
    assert!(pcn(&["sweep", "--config", &cfg], &out).status.success());
    assert_eq!(fs::read_to_string(out.join("tau.dat")).unwrap(), "# price interval sweep\n# tau tsr\n");
    assert!(!out.join("omega.dat").exists());
}

#[test]
fn deadlock_demo_writes_requested_modes() {
    let dir = tempfile::tempdir().unwrap();
    let both = dir.path().join("both");
    assert!(pcn(&["deadlock-demo"], &both).status.success());
    for f in ["deadlock_off.dat", "deadlock_share.dat", "deadlock_off_trace.csv", "deadlock_share_pairs.csv"] {
        assert!(both.join(f).exists(), "{f}");
    }
    let share = dir.path().join("share");
    assert!(pcn(&["deadlock-demo", "--control", "share"], &share).status.success());
    assert!(share.join("deadlock_share.dat").exists());
    assert!(!share.join("deadlock_off.dat").exists());
}

#[test]
fn explicit_protocol_requests_complete() {
    let dir = tempfile::tempdir().unwrap();
    let cfg =
        config(dir.path(), "[[protocol.requests]]\nsender = 2\nrecipient = 4\namount = 10.0\nnonce = 0\nat = 0.0\n");
    let out = dir.path().join("out");
    let o = pcn(&["protocol-sim", "--config", &cfg], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("protocol.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].ends_with(",10,completed,3,true"), "{}", rows[0]);
}
