use std::path::Path;
use std::process::{Command, Output};

fn small_scenario(dir: &Path) -> std::path::PathBuf {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/reference.toml"))
        .unwrap()
        .replace("n = 100", "n = 30")
        .replace("N = 5000", "N = 300")
        .replace("D = 100", "D = 10")
        .replace("M = 5", "M = 1")
        .replace("runs = 100", "runs = 4");
    let path = dir.join("small.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adr-maint"))
        .args(args)
        .env("ADR_MAINT_CACHE_DIR", dir.join("cache"))
        .output()
        .unwrap()
}

fn csv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn malformed_scenario_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[model]\nlambda = 1.0\nc = 3.0\nbogus = 1\n").unwrap();
    let out_path = dir.path().join("out.csv");
    let out = run(dir.path(), &["threshold", "--scenario", bad.to_str().unwrap(), "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"));
    assert!(!out_path.exists());

    let missing = dir.path().join("nope.toml");
    let out = run(dir.path(), &["periodic", "--scenario", missing.to_str().unwrap(), "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn computation_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(small_scenario(dir.path()))
        .unwrap()
        .replace(r#"cost_mode = { kind = "identical" }"#, r#"cost_mode = { kind = "uniform", max_multiple = 6.5 }"#);
    let path = dir.path().join("mixed.toml");
    std::fs::write(&path, text).unwrap();
    let out_path = dir.path().join("out.csv");
    let out = run(dir.path(), &["simulate", "--scenario", path.to_str().unwrap(), "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unwritable_output_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let scn = small_scenario(dir.path());
    let out_path = dir.path().join("no/such/dir/out.csv");
    let out = run(dir.path(), &["periodic", "--scenario", scn.to_str().unwrap(), "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn periodic_marks_best_period() {
    let dir = tempfile::tempdir().unwrap();
    let scn = small_scenario(dir.path());
    let out_path = dir.path().join("periodic.csv");
    let out = run(dir.path(), &["periodic", "--scenario", scn.to_str().unwrap(), "--out", out_path.to_str().unwrap()]);
    assert!(out.status.success());
    let rows = csv(&out_path);
    assert_eq!(rows[0], ["q", "value", "optimal", "version"]);
    let best: Vec<_> = rows[1..].iter().filter(|r| r[2] == "true").collect();
    assert_eq!(best.len(), 1);
    assert_eq!(best[0][0], "18");
}

#[test]
fn whittle_table_ends_at_zero() {
    let dir = tempfile::tempdir().unwrap();
    let scn = small_scenario(dir.path());
    let out_path = dir.path().join("whittle.csv");
    let out = run(dir.path(), &["whittle", "--scenario", scn.to_str().unwrap(), "--out", out_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv(&out_path);
    assert_eq!(rows[0], ["k", "belief", "index", "version"]);
    assert_eq!(rows.len(), 32);
    let index: Vec<f64> = rows[1..].iter().map(|r| r[2].parse().unwrap()).collect();
    assert_eq!(*index.last().unwrap(), 0.0);
    assert!(index.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let scn = small_scenario(dir.path());
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (path, extra) in [(&a, None), (&b, Some("--no-cache"))] {
        let mut args = vec!["simulate", "--scenario", scn.to_str().unwrap(), "--out", path.to_str().unwrap()];
        args.extend(extra);
        let out = run(dir.path(), &args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let rows = csv(&a);
    assert_eq!(rows.len(), 1 + 3 * 4);
    assert_eq!(rows[0][..4], ["snr", "policy", "reference", "err_percent"]);

    let c = dir.path().join("c.csv");
    let out = run(dir.path(), &["simulate", "--scenario", scn.to_str().unwrap(), "--out", c.to_str().unwrap(), "--seed", "7"]);
    assert!(out.status.success());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}
