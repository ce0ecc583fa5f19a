//! End-to-end checks of the installed binary: exit codes, output
//! contracts, and reproducibility across thread counts.

use std::io::Write;
use std::path::Path;
use std::process::{Command, Output};

use endoprobit::simulation::{preset, simulate_dataset};

fn endoprobit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_endoprobit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// One replication of the shipped Gaussian study design as a CSV file.
fn write_sample_csv(path: &Path, n: usize, rep: usize) {
    let mut scenario = preset("table1-gaussian").expect("preset exists");
    scenario.n = n;
    let data = simulate_dataset(&scenario, rep).expect("simulation succeeds");
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).unwrap());
    writeln!(f, "y,d,x1,z1").unwrap();
    for i in 0..data.n() {
        writeln!(
            f,
            "{},{},{},{}",
            data.y()[i] as u8,
            data.d()[i] as u8,
            data.x_row(i)[0],
            data.z_row(i)[0]
        )
        .unwrap();
    }
}

#[test]
fn estimate_recovers_design_parameters_within_three_se() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sample.csv");
    let out = dir.path().join("est.jsonl");
    write_sample_csv(&csv, 500, 0);

    let run = endoprobit(&[
        "estimate",
        csv.to_str().unwrap(),
        "--model",
        "parametric",
        "--pin",
        "-1",
        "--x-eval",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "stderr: {}", stderr(&run));

    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    let config: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(config["record"], "config");
    assert_eq!(config["command"], "estimate");
    assert!(config["version"].is_string());
    let fit: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(fit["record"], "fit");
    assert_eq!(fit["converged"], true);

    // Design truths: gamma 0.8, delta1 1.1, Gaussian rho matching
    // Spearman 0.5 is 0.5176, treatment effect at x = 0 is 0.3643.
    for (name, truth) in [
        ("gamma[0]", 0.8),
        ("delta1", 1.1),
        ("rho", 0.5176),
        ("ate", 0.3643),
    ] {
        let row = fit["estimates"]
            .as_array()
            .unwrap()
            .iter()
            .find(|r| r["name"] == name)
            .unwrap_or_else(|| panic!("row {name} present"));
        let value = row["value"].as_f64().unwrap();
        let se = row["se"].as_f64().expect("asymptotic SE present");
        assert!(
            (value - truth).abs() < 3.0 * se,
            "{name}: {value:.4} vs truth {truth} (se {se:.4})"
        );
    }
}

#[test]
fn estimate_prints_one_block_per_model_with_sieve_degree() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sample.csv");
    write_sample_csv(&csv, 400, 1);

    let run = endoprobit(&[
        "estimate",
        csv.to_str().unwrap(),
        "--model",
        "parametric",
        "--model",
        "sieve",
        "--pin",
        "-1",
    ]);
    assert!(run.status.success(), "stderr: {}", stderr(&run));
    let text = stdout(&run);
    assert!(text.contains("== parametric(gaussian) =="), "{text}");
    assert!(text.contains("== sieve(gaussian, k="), "{text}");
    assert!(text.contains("a_eps[1]"), "{text}");
}

#[test]
fn estimate_rejects_missing_column_with_its_name() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    std::fs::write(&csv, "y,treat,x1,z1\n1,0,0.3,-0.2\n0,1,-0.1,0.4\n").unwrap();

    let run = endoprobit(&["estimate", csv.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));
    assert!(stderr(&run).contains("'d'"), "stderr: {}", stderr(&run));
}

#[test]
fn estimate_requires_pin_for_sieve() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sample.csv");
    write_sample_csv(&csv, 200, 2);

    let run = endoprobit(&["estimate", csv.to_str().unwrap(), "--model", "sieve"]);
    assert_eq!(run.status.code(), Some(2));
    assert!(stderr(&run).contains("--pin"), "stderr: {}", stderr(&run));
}

#[test]
fn simulate_unknown_preset_exits_2_and_lists_names() {
    let run = endoprobit(&["simulate", "not-a-preset"]);
    assert_eq!(run.status.code(), Some(2));
    let err = stderr(&run);
    assert!(err.contains("table1-gaussian"), "stderr: {err}");
}

#[test]
fn simulate_list_names_the_shipped_designs() {
    let run = endoprobit(&["simulate", "--list"]);
    assert!(run.status.success());
    let text = stdout(&run);
    for name in ["table1-gaussian", "table2-frank", "cop1", "coverage-boot"] {
        assert!(text.lines().any(|l| l == name), "missing {name}: {text}");
    }
}

#[test]
fn simulate_output_is_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("t1.jsonl");
    let out2 = dir.path().join("t2.jsonl");
    for (threads, out) in [("1", &out1), ("2", &out2)] {
        let run = endoprobit(&[
            "--threads",
            threads,
            "simulate",
            "table1-gaussian",
            "--reps",
            "3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(run.status.success(), "stderr: {}", stderr(&run));
    }
    let b1 = std::fs::read(&out1).unwrap();
    let b2 = std::fs::read(&out2).unwrap();
    assert_eq!(b1, b2, "JSONL differs between --threads 1 and --threads 2");
    assert!(!b1.is_empty());
}

#[test]
fn simulate_honors_threads_env_var() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("env.jsonl");
    let run = Command::new(env!("CARGO_BIN_EXE_endoprobit"))
        .env("ENDOPROBIT_THREADS", "2")
        .args([
            "simulate",
            "table1-gaussian",
            "--reps",
            "2",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(run.status.success(), "stderr: {}", stderr(&run));
    assert!(out.exists());
}

#[test]
fn identlab_binary_counterexample_passes() {
    let run = endoprobit(&["identlab", "binary-counterexample"]);
    assert!(run.status.success());
    let text = stdout(&run);
    assert!(text.contains("max discrepancy"), "{text}");
    assert!(text.contains("PASS"), "{text}");
}

#[test]
fn identlab_failure_distribution_writes_plot_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fd.csv");
    let run = endoprobit(&[
        "identlab",
        "failure-distribution",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "stderr: {}", stderr(&run));
    assert!(stdout(&run).contains("PASS"));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next(), Some("x,f_tilde,normal"));
    assert_eq!(text.lines().count(), 202); // header + 201 grid points
}

#[test]
fn identlab_unknown_demo_exits_2() {
    let run = endoprobit(&["identlab", "nope"]);
    assert_eq!(run.status.code(), Some(2));
    assert!(stderr(&run).contains("binary-counterexample"));
}

#[test]
fn copula_spearman_matches_contract_example() {
    let run = endoprobit(&["copula", "spearman", "gaussian", "0.5176"]);
    assert!(run.status.success());
    assert_eq!(stdout(&run).trim(), "0.5000");
}

#[test]
fn copula_from_spearman_round_trips() {
    let run = endoprobit(&["copula", "from-spearman", "gaussian", "0.5"]);
    assert!(run.status.success());
    assert_eq!(stdout(&run).trim(), "0.5176");
}

#[test]
fn copula_rejects_out_of_range_rho() {
    let run = endoprobit(&["copula", "spearman", "gaussian", "1.5"]);
    assert_eq!(run.status.code(), Some(2));
}
