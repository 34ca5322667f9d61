use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anisolab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn thresholds_equal_exponents() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["thresholds", "--p", "2,3,4", "--delta", "10", "--gamma", "10"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("\"theoremApplicable\": \"Thm3_4\""));
    let v = json(&dir.path().join("thresholds.json"));
    assert_eq!(v["theoremApplicable"], "Thm3_4");
    assert_eq!(v["regionI.lo"], 9.0);
    assert!(dir.path().join("config.resolved.toml").exists());
}

#[test]
fn truncation_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["truncation-check", "--p", "2,3", "--k", "2", "--alpha", "3"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&dir.path().join("truncation.json"));
    assert_eq!(v["passed"], true);
}

#[test]
fn negative_delta_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["thresholds", "--delta", "-1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
}

#[test]
fn malformed_config_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "problem.delta = -3.0\n").unwrap();
    let o = run(&["thresholds", "--config", cfg.to_str().unwrap()], &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(2));
    fs::write(&cfg, "grid.resolution = 3\n").unwrap();
    let o = run(&["thresholds", "--config", cfg.to_str().unwrap()], &dir.path().join("o"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solve_writes_fields_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let o = run(&["solve", "--p", "2,3", "--res", "16", "--n-max", "3"], &first);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for n in 1..=3 {
        assert!(first.join(format!("u_{n}.txt")).exists());
    }
    let report = json(&first.join("ladder.json"));
    assert_eq!(report["levels"].as_array().unwrap().len(), 3);

    // rerun from the archived config into a second directory
    let cfg = first.join("config.resolved.toml");
    let second = dir.path().join("b");
    let o = run(&["solve", "--config", cfg.to_str().unwrap()], &second);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        fs::read_to_string(first.join("ladder.json")).unwrap(),
        fs::read_to_string(second.join("ladder.json")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(first.join("u_3.txt")).unwrap(),
        fs::read_to_string(second.join("u_3.txt")).unwrap()
    );
}

#[test]
fn stability_of_solved_field() {
    let dir = tempfile::tempdir().unwrap();
    let solved = dir.path().join("s");
    let o = run(&["solve", "--p", "2,2", "--res", "16", "--n-max", "2"], &solved);
    assert_eq!(o.status.code(), Some(0));
    let field = solved.join("u_2.txt");
    let o = run(
        &["stability", "--p", "2,2", "--res", "16", "--field", field.to_str().unwrap(), "--lambda", "0"],
        &dir.path().join("st"),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&dir.path().join("st/stability.json"));
    assert_eq!(v["stable"], true);
    // continuum first eigenvalue of the unit square is 2 pi^2
    assert!((v["gap"].as_f64().unwrap() - 2.0 * std::f64::consts::PI.powi(2)).abs() < 0.2);
}

#[test]
fn sweep_exponential_case() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["sweep", "--p", "2,3,4", "--res", "24", "--lo", "-8", "--hi", "8", "--radii", "0.5,1,2,4"];
    let ok = dir.path().join("ok");
    let mut args = common.to_vec();
    args.extend(["--cap", "0.2", "--u-const", "0.2"]);
    let o = run(&args, &ok);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(ok.join("sweep.csv")).unwrap();
    assert!(csv.starts_with("R,lhs,rhs,ratio\n"));
    assert_eq!(csv.lines().count(), 5);
    let cert = json(&ok.join("certificate.json"));
    assert!(cert["firstViolatingR"].is_number());

    let mut args = common.to_vec();
    args.extend(["--cap", "0.5", "--u-const", "0.5"]);
    let o = run(&args, &dir.path().join("refused"));
    assert_eq!(o.status.code(), Some(4));
}
