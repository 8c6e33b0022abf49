//! End-to-end runs of the `subsidy-search` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subsidy-search"))
        .args(args)
        .arg("--output-dir")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const MARKET: [&str; 10] = [
    "--dist", "uniform", "--n", "10", "--c", "0.5", "--p", "1.0", "--u", "1",
];

#[test]
fn solve_reproduces_both_regimes() {
    let dir = tempfile::tempdir().unwrap();
    let high = dir.path().join("high");
    let out = run(
        &[
            "solve", "--dist", "uniform", "--n", "10", "--c", "0.5", "--p", "1.8", "--u", "1",
        ],
        &high,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        json(&high.join("solution.json"))["pooling_active"],
        Value::Bool(false)
    );

    let low = dir.path().join("low");
    let mut args = vec!["solve"];
    args.extend(MARKET);
    assert!(run(&args, &low).status.success());
    let sol = json(&low.join("solution.json"));
    assert_eq!(sol["pooling_active"], Value::Bool(true));
    let t_bar = sol["t_upper"].as_f64().unwrap();

    // two whitespace-separated columns; abscissae repeat only at the two jumps
    let rows: Vec<(f64, f64)> = fs::read_to_string(low.join("schedule.dat"))
        .unwrap()
        .lines()
        .map(|l| {
            let cols: Vec<f64> = l.split_whitespace().map(|x| x.parse().unwrap()).collect();
            assert_eq!(cols.len(), 2);
            (cols[0], cols[1])
        })
        .collect();
    let repeats: Vec<f64> = rows
        .windows(2)
        .filter(|w| w[1].0 == w[0].0)
        .map(|w| w[0].0)
        .collect();
    assert!(rows.windows(2).all(|w| w[1].0 >= w[0].0));
    assert_eq!(repeats, vec![0.25, t_bar]);
    let jump = rows.iter().position(|r| r.0 == t_bar).unwrap();
    assert!(rows[jump].1 < 0.5);
    assert_eq!(rows[jump + 1].1, 0.5);
}

#[test]
fn outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["simulate", "platform", "sweep", "welfare"] {
        let mut args = vec![
            cmd,
            "--replications",
            "2000",
            "--seed",
            "7",
            "--points",
            "11",
            "--coarse-grid",
            "8",
        ];
        if cmd != "platform" {
            args.truncate(5);
        }
        args.extend(MARKET);
        let (a, b) = (
            dir.path().join(format!("{cmd}-a")),
            dir.path().join(format!("{cmd}-b")),
        );
        let mut threaded = args.clone();
        threaded.extend(["--threads", "1"]);
        assert!(run(&args, &a).status.success());
        assert!(run(&threaded, &b).status.success());
        let mut names: Vec<_> = fs::read_dir(&a)
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert!(names.len() >= 3, "{cmd}: {names:?}");
        for name in names {
            assert_eq!(
                fs::read(a.join(&name)).unwrap(),
                fs::read(b.join(&name)).unwrap(),
                "{cmd}: {name:?}"
            );
        }
    }
}

#[test]
fn config_file_and_env_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("market.json");
    fs::write(
        &cfg,
        r#"{"distribution": {"kind": "beta", "alpha": 2, "beta": 3}, "n": 6, "c": 0.6, "p": 9.0}"#,
    )
    .unwrap();
    let target = dir.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_subsidy-search"))
        .args(["welfare", "--config", cfg.to_str().unwrap(), "--p", "1.2"])
        .env("SUBSIDY_SEARCH_OUTPUT_DIR", &target)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let used = json(&target.join("run_config.json"));
    assert_eq!(used["params"]["p"].as_f64(), Some(1.2));
    assert_eq!(used["distribution"]["kind"], "beta");
    let csv = fs::read_to_string(target.join("welfare.csv")).unwrap();
    assert_eq!(
        csv.lines().next(),
        Some("Q,phi,m,C,CS,PS,W,t_lower,t_upper")
    );
}

#[test]
fn bad_configuration_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solve", "--n", "10", "--c", "5", "--p", "1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    let out = run(&["solve", "--n", "10", "--c", "0.5"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_suite_is_green_on_the_reference_market() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["verify"];
    args.extend(MARKET);
    args.extend(["--seed", "42", "--replications", "100000"]);
    let out = run(&args, dir.path());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(0), "{stderr}");
    assert!(stderr.lines().all(|l| l.starts_with("PASS")));
    assert_eq!(
        json(&dir.path().join("verification.json"))["passed"],
        Value::Bool(true)
    );
}
