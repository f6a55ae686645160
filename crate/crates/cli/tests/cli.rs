use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resilient-cbf")).args(args).current_dir(cwd).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["run", "preset:desk_arena", "--seed", "4", "--out", "r", "--override", "horizon=1.5"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["seed"], 4);
    assert!(report["max_h_tot"].as_f64().unwrap() <= 0.0);
    for f in ["trace.csv", "report.json", "scenario.json"] {
        assert!(dir.path().join("r").join(f).exists(), "{f} missing");
    }
    let v = cli(&["verify", "r"], dir.path());
    assert_eq!(v.status.code(), Some(0), "{}", stdout(&v));
}

#[test]
fn verify_exits_two_on_violation() {
    let dir = tempfile::tempdir().unwrap();
    // without the margin an early seed collides
    let mut found = false;
    for seed in ["0", "1", "2", "3"] {
        let out = format!("s{seed}");
        let o = cli(&["run", "preset:sim1_unicycles", "--seed", seed, "--out", &out, "--override", "eta=0"], dir.path());
        assert!(o.status.success());
        let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        if report["first_violation"].is_null() {
            continue;
        }
        assert_eq!(cli(&["verify", &out], dir.path()).status.code(), Some(2));
        found = true;
        break;
    }
    assert!(found, "no violating seed among 0..4");
}

#[test]
fn margins_reports_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["margins", "preset:head_on"], dir.path());
    assert!(o.status.success());
    let m: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(m["config"]["provenance"]["c_h"], "user_supplied");
    assert!(m["eta"][0].as_f64().unwrap() > 0.0);
}

#[test]
fn check_t3_distinguishes_presets() {
    let dir = tempfile::tempdir().unwrap();
    let holds = |name: &str| {
        let o = cli(&["check-t3", &format!("preset:{name}"), "--resolution", "21"], dir.path());
        assert!(o.status.success());
        let r: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        r["holds"].as_bool().unwrap()
    };
    assert!(!holds("head_on"));
    assert!(holds("strong_authority"));
}

#[test]
fn sweep_writes_one_directory_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_resilient-cbf"))
        .args(["sweep", "preset:solo", "--seeds", "0..3", "--out", "sw"])
        .env("RESILIENT_CBF_THREADS", "2")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 3);
    for s in 0..3 {
        assert!(dir.path().join(format!("sw/seed{s}/trace.csv")).exists());
    }
}

#[test]
fn export_round_trips_through_run() {
    let dir = tempfile::tempdir().unwrap();
    assert!(cli(&["export", "solo", "--out", "solo.json"], dir.path()).status.success());
    let o = cli(&["run", "solo.json", "--out", "r"], dir.path());
    assert!(o.status.success());
}

#[test]
fn bad_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(&["run", "preset:nope"], dir.path()).status.code(), Some(1));
    assert_eq!(cli(&["run", "preset:solo", "--override", "colour=red"], dir.path()).status.code(), Some(1));
    assert_eq!(cli(&["sweep", "preset:solo", "--seeds", "3..3"], dir.path()).status.code(), Some(1));
}
