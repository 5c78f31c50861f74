use std::process::{Command, Output};

fn dprp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dprp")).args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn unknown_override_key_is_rejected() {
    let out = dprp(&["ldp-curve", "--set", "rho=3"]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("rho"), "{msg}");
    assert!(out.stdout.is_empty());
}

#[test]
fn invalid_value_names_the_override() {
    let out = dprp(&["conv-curve", "--set", "lambda=-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("lambda=-1"), "{}", stderr(&out));
}

#[test]
fn config_file_errors_name_the_file() {
    let dir = std::env::temp_dir().join(format!("dprp-cli-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.toml");
    std::fs::write(&path, "n = 10\nd = \"wide\"\n").unwrap();
    let out = dprp(&["tradeoff", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bad.toml"), "{}", stderr(&out));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn unknown_preset_is_rejected() {
    let out = dprp(&["ldp-curve", "--preset", "huge"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("huge"));
}

#[test]
fn out_file_matches_stdout() {
    let dir = std::env::temp_dir().join(format!("dprp-cli-out-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("ldp.csv");
    let to_file = dprp(&["ldp-curve", "--preset", "small", "--out", path.to_str().unwrap()]);
    assert!(to_file.status.success());
    assert!(to_file.stdout.is_empty());
    let to_stdout = dprp(&["ldp-curve", "--preset", "small"]);
    assert_eq!(std::fs::read(&path).unwrap(), to_stdout.stdout);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn seed_flag_changes_simulation_and_fingerprint() {
    let a = dprp(&["simulate", "--seed", "1", "--set", "rounds=20"]);
    let b = dprp(&["simulate", "--seed", "2", "--set", "rounds=20"]);
    assert!(a.status.success() && b.status.success());
    assert_ne!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("fingerprint,scheme,iteration,gap,bound,epsilon_spent"));
    assert_eq!(text.lines().filter(|l| l.contains(",dprp,")).count(), 20);
    assert_eq!(text.lines().filter(|l| l.contains(",baseline,")).count(), 20);
}

#[test]
fn resolved_config_goes_to_stderr() {
    let out = dprp(&["tradeoff", "--set", "eps_target=7.5"]);
    assert!(out.status.success());
    assert!(stderr(&out).contains("eps_target = 7.5"), "{}", stderr(&out));
}

#[test]
fn allocate_json_is_valid() {
    let out = dprp(&["allocate"]);
    assert!(out.status.success());
    let value: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(value["result"]["r_star"].as_u64().unwrap() >= 1);
    assert_eq!(value["problem"]["kappas"].as_array().unwrap().len(), 1000);
}

#[test]
fn corrupted_tolerances_fail_verification() {
    let out = dprp(&["verify", "--set", "verify_trials=10000", "--corrupt-tolerance", "-1"]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stdout).unwrap();
    let norm: Vec<&str> = text.lines().filter(|l| l.contains("norm preservation")).collect();
    assert_eq!(norm.len(), 4);
    assert!(norm.iter().all(|l| l.ends_with(",false")), "{text}");
}

#[test]
fn allocation_below_the_jl_dimension_is_an_error() {
    let out = dprp(&["allocate", "--preset", "small"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("JL condition"), "{}", stderr(&out));
}
