use std::path::Path;
use std::process::{Command, Output};

fn tamper(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tamper")).args(args).output().expect("spawn tamper")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const BIAS: &str = r#"kind = "bias"
space = "uniform_bits(15)"
objective = "majority"

[params]
seed = 21
trials = 60
mode = "monte_carlo"
tau = 0.1
gamma = 0.04
"#;

#[test]
fn bounds_prints_the_value() {
    let o = tamper(&["bounds", "--formula", "theorem_budget", "--n", "100", "--mu", "0.5", "--rho", "0.99"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("92.07"), "{}", stdout(&o));

    let o = tamper(&["bounds", "--formula", "ideal_budget", "--n", "10", "--mu", "0.5", "--tau", "0.1"]);
    assert_eq!(stdout(&o).trim().parse::<f64>().unwrap(), 5.0);
}

#[test]
fn bounds_rejects_missing_inputs() {
    assert_eq!(tamper(&["bounds", "--formula", "theorem_budget", "--n", "100"]).status.code(), Some(2));
    assert_eq!(tamper(&["bounds", "--formula", "tribes", "--n", "100"]).status.code(), Some(2));
    assert_eq!(tamper(&["bounds"]).status.code(), Some(2));
}

#[test]
fn validate_reports_a_missing_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &BIAS.replace("seed = 21\n", ""));
    let o = tamper(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("params.seed required"));

    let ok = write(dir.path(), "ok.toml", BIAS);
    assert_eq!(tamper(&["validate", "--config", &ok]).status.code(), Some(0));
}

#[test]
fn validate_warns_but_passes_on_small_tau() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &BIAS.replace("tau = 0.1", "tau = 0.05"));
    let o = tamper(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("warning"));
}

#[test]
fn unreadable_or_mismatched_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(tamper(&["bias", "--config", "/nonexistent/x.toml"]).status.code(), Some(2));
    let cfg = write(dir.path(), "c.toml", BIAS);
    assert_eq!(tamper(&["evasion", "--config", &cfg]).status.code(), Some(2));
    let bad = write(dir.path(), "bad.toml", "kind = \"bias\"\nobjectiv = \"and(2)\"\n");
    assert_eq!(tamper(&["bias", "--config", &bad]).status.code(), Some(2));
}

#[test]
fn verify_exact_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = tamper(&["verify-exact", "--out", out.to_str().unwrap(), "--check"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("0 failed"));
    let cases = std::fs::read_to_string(out.join("cases.csv")).unwrap();
    assert_eq!(cases.lines().count(), 1 + 10 * 6 * 5);
    assert!(out.join("summary.json").exists());
}

#[test]
fn trials_csv_does_not_depend_on_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", BIAS);
    let mut csvs = Vec::new();
    for w in ["1", "4"] {
        let out = dir.path().join(format!("w{w}"));
        let o = tamper(&["bias", "--config", &cfg, "--workers", w, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        csvs.push(std::fs::read(out.join("trials.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    assert_eq!(String::from_utf8_lossy(&csvs[0]).lines().count(), 62);
}

#[test]
fn seed_and_trials_flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", BIAS);
    let out = dir.path().join("o");
    let o = tamper(&["bias", "--config", &cfg, "--seed", "4", "--trials", "5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(out.join("trials.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.lines().nth(1).unwrap().starts_with("0,4,15,"));
}

#[test]
fn check_flag_exits_3_on_a_failed_comparator() {
    // A wrong initial mean makes the bias bound unreachable.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        r#"kind = "bias"
space = "uniform_bits(10)"
objective = "and(10)"

[params]
seed = 1
trials = 50
mode = "exact"
tau = 0.05
mu = 0.9
"#,
    );
    let o = tamper(&["bias", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0));
    let o = tamper(&["bias", "--config", &cfg, "--check"]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
}

#[test]
fn external_objective_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        r#"kind = "bias"
space = "uniform_bits(4)"
objective = "external"
command = ["sh", "-c", "read line; echo garbage"]

[params]
seed = 1
trials = 2
mode = "monte_carlo"
tau = 0.2
gamma = 0.3
"#,
    );
    let o = tamper(&["bias", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}
