use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = r#"{
    "distances_m": [300, 420, 260],
    "antennas": 2,
    "total_cache": 90,
    "train_samples": 4,
    "test_samples": 6,
    "schemes": ["no-cache", "uniform", "proportional", "most-popular", "optimized", "rank-one", "bound"]
}"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cran-cache"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn data_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn gen_channels_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", TINY);
    let cfg = cfg.to_str().unwrap();
    for out in ["a", "b"] {
        assert_success(&run(tmp.path(), &["gen-channels", "--config", cfg, "--out", out]));
    }
    assert_success(&run(tmp.path(), &["gen-channels", "--config", cfg, "--out", "c", "--seed", "9"]));
    let read = |d: &str| fs::read(tmp.path().join(d).join("channels/test_file0.json")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    let text = String::from_utf8(read("a")).unwrap();
    assert!(text.contains("\"config_sha256\"") && text.contains("\"seed\": 1"));
}

#[test]
fn invalid_configs_exit_with_code_two() {
    let tmp = TempDir::new().unwrap();
    let cases = [
        r#"{"antenas": 4}"#,
        r#"{"total_cache": 1000}"#,
        r#"{"num_files": 2, "objective": "rate"}"#,
        r#"{"popularity": {"explicit": {"probabilities": [0.5, 0.5]}}}"#,
        "not json",
    ];
    for (i, body) in cases.iter().enumerate() {
        let cfg = write_config(tmp.path(), &format!("bad{i}.json"), body);
        let out = run(tmp.path(), &["optimize", "--config", cfg.to_str().unwrap(), "--out", "o"]);
        assert_eq!(out.status.code(), Some(2), "case {body}");
        assert!(!out.stderr.is_empty());
    }
    let out = run(tmp.path(), &["compare", "--scheme", "greedy", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compare_rows_respect_budget_and_rerun_identically() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", TINY);
    let cfg = cfg.to_str().unwrap();
    assert_success(&run(tmp.path(), &["compare", "--config", cfg, "--out", "a", "--parallel", "1"]));
    assert_success(&run(tmp.path(), &["compare", "--config", cfg, "--out", "b", "--parallel", "2"]));
    let a = fs::read_to_string(tmp.path().join("a/compare.csv")).unwrap();
    let b = fs::read_to_string(tmp.path().join("b/compare.csv")).unwrap();
    assert_eq!(a, b);
    assert!(a.starts_with("# tool=cran-cache"));
    assert!(a.contains("# config_sha256=") && a.contains("# seed=1"));

    let rows = data_rows(&a);
    let labels: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(
        labels,
        ["NoCache", "Uniform", "Proportional", "MostPopular", "Optimized", "Rank-One", "LowerBound"]
    );
    // scheme, mean, p10, p50, p90, mean rate, total, then L x K cells.
    for row in &rows {
        let total: f64 = row[6].parse().unwrap();
        assert!(total <= 90.0 + 1e-3, "{row:?}");
        if row[0] != "LowerBound" {
            let cells: f64 = row[7..].iter().map(|c| c.parse::<f64>().unwrap()).sum();
            assert!((cells - total).abs() < 1e-3, "{row:?}");
        }
    }
    let mean = |label: &str| -> f64 { rows.iter().find(|r| r[0] == label).unwrap()[1].parse().unwrap() };
    assert!(mean("LowerBound") <= mean("Optimized") + 1e-9);
    assert!(mean("Optimized") <= mean("NoCache"));
    for scheme in ["no-cache", "optimized", "bound"] {
        let cdf = fs::read_to_string(tmp.path().join(format!("a/cdf_{scheme}.csv"))).unwrap();
        assert_eq!(data_rows(&cdf).len(), 6);
    }
    assert_eq!(
        fs::read(tmp.path().join("a/compare.json")).unwrap(),
        fs::read(tmp.path().join("b/compare.json")).unwrap()
    );
}

#[test]
fn optimize_then_evaluate_round_trip() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", TINY);
    let cfg = cfg.to_str().unwrap();
    assert_success(&run(tmp.path(), &["optimize", "--config", cfg, "--out", "o"]));
    let log = fs::read_to_string(tmp.path().join("o/iterations.jsonl")).unwrap();
    assert!(log.lines().next().unwrap().contains("config_sha256"));
    assert!(log.lines().count() >= 2);

    assert_success(&run(tmp.path(), &["gen-channels", "--config", cfg, "--out", "o"]));
    assert_success(&run(
        tmp.path(),
        &[
            "evaluate",
            "--config",
            cfg,
            "--out",
            "o",
            "--allocation",
            "o/allocation.json",
            "--channels",
            "o/channels/test_file0.json",
        ],
    ));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("o/evaluation.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["per_sample_time"].as_array().unwrap().len(), 6);

    // Regenerating the test set from the seed gives the same report.
    assert_success(&run(
        tmp.path(),
        &["evaluate", "--config", cfg, "--out", "p", "--allocation", "o/allocation.json"],
    ));
    let again: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("p/evaluation.json")).unwrap()).unwrap();
    assert_eq!(report["report"], again["report"]);

    // An allocation for a different system is a configuration error.
    let other = write_config(tmp.path(), "a.json", r#"{"num_bs":2,"num_files":1,"sizes":[1,2]}"#);
    let out = run(
        tmp.path(),
        &["evaluate", "--config", cfg, "--out", "q", "--allocation", other.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zipf_sweep_reports_every_alpha_and_scheme() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "z.json",
        r#"{
            "distances_m": [300, 420, 260],
            "antennas": 2,
            "num_files": 2,
            "total_cache": 150,
            "train_samples": 3,
            "test_samples": 4,
            "zipf_alphas": [0, 1.5]
        }"#,
    );
    assert_success(&run(tmp.path(), &["zipf-sweep", "--config", cfg.to_str().unwrap(), "--out", "z"]));
    let csv = fs::read_to_string(tmp.path().join("z/zipf_sweep.csv")).unwrap();
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 8);
    for row in &rows {
        let total: f64 = row[4].parse().unwrap();
        assert!(total <= 150.0 + 1e-3);
    }
    // Uniform ignores popularity, so its time is the same at every alpha.
    let uniform: Vec<&Vec<String>> = rows.iter().filter(|r| r[1] == "Uniform").collect();
    assert_eq!(uniform[0][2], uniform[1][2]);
    // At alpha = 1.5 the most popular file is cached whole.
    let mp = rows.iter().find(|r| r[0] == "1.5" && r[1] == "MostPopular").unwrap();
    assert_eq!(mp[5], "150");
}
