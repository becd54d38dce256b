use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use dpngs::linalg::SymmetricMatrix;
use dpngs_cli::io::{load_matrix_csv, read_trace_jsonl, save_matrix_csv, DatasetKind};
use dpngs_cli::{run_cli_with, EXIT_CONVERGED, EXIT_FAILURE, EXIT_IO, EXIT_ITERATION_CAP, EXIT_USAGE};
use proptest::prelude::*;
use tempfile::TempDir;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut full = vec!["dpngs"];
    full.extend_from_slice(args);
    let code = run_cli_with(full, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn samples_csv(seed: u64, p: usize, m: usize) -> String {
    let truth = dpngs_oracles::sparse_precision(seed, p, 0.3);
    let rows = dpngs_oracles::gaussian_samples(seed, &truth, m);
    let mut text: String = (0..p).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",") + "\n";
    for r in rows {
        text += &r.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",");
        text += "\n";
    }
    text
}

#[test]
fn identity_covariance_end_to_end() {
    let dir = TempDir::new().unwrap();
    let cov = write(dir.path(), "id3.csv", "1,0,0\n0,1,0\n0,0,1\n");
    let out = dir.path().join("theta.csv");
    let trace = dir.path().join("run.jsonl");
    let (code, _, err) = run(&["solve", "--covariance", s(&cov), "--rho", "0.5", "--out", s(&out), "--trace", s(&trace)]);
    assert_eq!(code, EXIT_CONVERGED, "{err}");
    let theta = load_matrix_csv(&out, DatasetKind::Covariance).unwrap().covariance_matrix().unwrap();
    let gap = theta.linear_combination(1.0, &SymmetricMatrix::identity(3), -2.0 / 3.0).unwrap();
    assert!(gap.max_abs() < 1e-6);
    let records = read_trace_jsonl(&fs::read_to_string(&trace).unwrap()).unwrap();
    assert!(!records.is_empty());
    assert!(records.iter().all(|r| r.objective.is_none()));
}

#[test]
fn samples_pipeline_and_trace_shape() {
    let dir = TempDir::new().unwrap();
    let x = write(dir.path(), "x.csv", &samples_csv(1, 6, 30));
    let out = dir.path().join("theta.csv");
    let trace = dir.path().join("run.jsonl");
    let (code, _, err) =
        run(&["solve", "--samples", s(&x), "--rho", "0.1", "--out", s(&out), "--trace", s(&trace), "--diagnostics"]);
    assert_eq!(code, EXIT_CONVERGED, "{err}");
    let records = read_trace_jsonl(&fs::read_to_string(&trace).unwrap()).unwrap();
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r.iter, i);
        assert!(r.objective.is_some());
        assert_eq!(r.alpha, 1.0 / (1.0 + r.lambda));
        if i + 1 < records.len() {
            assert!(r.lambda > 1e-6);
        }
    }
    assert!(records.last().unwrap().lambda <= 1e-6);
    let theta = load_matrix_csv(&out, DatasetKind::Covariance).unwrap();
    assert_eq!((theta.rows, theta.cols), (6, 6));
}

#[test]
fn runs_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let x = write(dir.path(), "x.csv", &samples_csv(2, 5, 20));
    let mut traces = Vec::new();
    for k in 0..2 {
        let trace = dir.path().join(format!("t{k}.jsonl"));
        let out = dir.path().join(format!("o{k}.csv"));
        let (code, _, _) = run(&["solve", "--samples", s(&x), "--rho", "0.2", "--out", s(&out), "--trace", s(&trace)]);
        assert_eq!(code, EXIT_CONVERGED);
        traces.push(read_trace_jsonl(&fs::read_to_string(&trace).unwrap()).unwrap());
    }
    assert_eq!(traces[0].len(), traces[1].len());
    for (a, b) in traces[0].iter().zip(&traces[1]) {
        assert!((a.lambda - b.lambda).abs() <= 1e-12);
        assert!((a.alpha - b.alpha).abs() <= 1e-12);
    }
}

#[test]
fn solution_goes_to_stdout_without_out() {
    let dir = TempDir::new().unwrap();
    let cov = write(dir.path(), "c.csv", "2,0\n0,2\n");
    let (code, stdout, _) = run(&["solve", "--covariance", s(&cov), "--rho", "0.5"]);
    assert_eq!(code, EXIT_CONVERGED);
    let rows: Vec<Vec<f64>> =
        stdout.lines().map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert!((rows[0][0] - 0.4).abs() < 1e-6 && rows[0][1] == 0.0);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let cov = write(dir.path(), "c.csv", "1,0.3\n0.3,1\n");
    assert_eq!(run(&["solve", "--rho", "0.1"]).0, EXIT_USAGE);
    assert_eq!(run(&["solve", "--covariance", s(&cov), "--rho", "abc"]).0, EXIT_USAGE);
    assert_eq!(run(&["solve", "--covariance", s(&cov), "--rho", "-1"]).0, EXIT_USAGE);
    assert_eq!(run(&["solve", "--covariance", s(&cov), "--rho", "0.1", "--variant", "inexact:5", "--inner-kmax", "9"]).0, EXIT_USAGE);
    assert_eq!(run(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(run(&["--help"]).0, EXIT_CONVERGED);

    let missing = dir.path().join("nope.csv");
    let (code, _, err) = run(&["solve", "--covariance", s(&missing), "--rho", "0.1"]);
    assert_eq!(code, EXIT_IO);
    assert!(err.contains("nope.csv"));
    let unwritable = dir.path().join("no_such_dir").join("theta.csv");
    assert_eq!(run(&["solve", "--covariance", s(&cov), "--rho", "0.1", "--out", s(&unwritable)]).0, EXIT_IO);

    let ragged = write(dir.path(), "r.csv", "1,2\n3\n");
    let (code, _, err) = run(&["solve", "--samples", s(&ragged), "--rho", "0.1"]);
    assert_eq!(code, EXIT_FAILURE);
    assert!(err.contains("line 2"), "{err}");
    let asym = write(dir.path(), "a.csv", "1,0.3\n0.2,1\n");
    assert_eq!(run(&["solve", "--covariance", s(&asym), "--rho", "0.1"]).0, EXIT_FAILURE);

    let x = write(dir.path(), "x.csv", &samples_csv(3, 6, 18));
    let (code, _, _) = run(&["solve", "--samples", s(&x), "--rho", "0.05", "--eps", "1e-12", "--max-iters", "2"]);
    assert_eq!(code, EXIT_ITERATION_CAP);
}

#[test]
fn theta0_and_sparsify_flags() {
    let dir = TempDir::new().unwrap();
    let cov = write(dir.path(), "id3.csv", "1,0,0\n0,1,0\n0,0,1\n");
    let start = write(dir.path(), "t0.csv", "1,0.1,0\n0.1,1,0\n0,0,1\n");
    let out = dir.path().join("theta.csv");
    let (code, _, err) = run(&[
        "solve", "--covariance", s(&cov), "--rho", "0.5", "--theta0", s(&start), "--sparsify", "1e-4", "--out", s(&out),
    ]);
    assert_eq!(code, EXIT_CONVERGED, "{err}");
    let theta = load_matrix_csv(&out, DatasetKind::Covariance).unwrap().covariance_matrix().unwrap();
    assert_eq!(theta.get(0, 1), 0.0);
    assert!((theta.get(0, 0) - 2.0 / 3.0).abs() < 1e-6);

    let indefinite = write(dir.path(), "bad.csv", "1,2,0\n2,1,0\n0,0,1\n");
    assert_eq!(run(&["solve", "--covariance", s(&cov), "--rho", "0.5", "--theta0", s(&indefinite)]).0, EXIT_FAILURE);
    let wrong = write(dir.path(), "w.csv", "1,0\n0,1\n");
    assert_eq!(run(&["solve", "--covariance", s(&cov), "--rho", "0.5", "--theta0", s(&wrong)]).0, EXIT_FAILURE);
}

#[test]
fn binary_exit_code() {
    let dir = TempDir::new().unwrap();
    let cov = write(dir.path(), "id3.csv", "1,0,0\n0,1,0\n0,0,1\n");
    let status = Command::new(env!("CARGO_BIN_EXE_dpngs"))
        .args(["solve", "--covariance", s(&cov), "--rho", "0.5"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0));
    let status = Command::new(env!("CARGO_BIN_EXE_dpngs")).args(["solve"]).output().unwrap();
    assert_eq!(status.status.code(), Some(EXIT_USAGE));
}

proptest! {
    #[test]
    fn solution_csv_round_trips(entries in proptest::collection::vec(-1e3f64..1e3, 10), scale in -300i32..300) {
        let f = 10f64.powi(scale / 10);
        let rows = vec![
            vec![entries[0] * f, entries[1], entries[2], entries[3]],
            vec![entries[1], entries[4] * f, entries[5], entries[6]],
            vec![entries[2], entries[5], entries[7], entries[8] / f],
            vec![entries[3], entries[6], entries[8] / f, entries[9]],
        ];
        let m = SymmetricMatrix::from_rows(&rows).unwrap();
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("m.csv");
        save_matrix_csv(&path, &m).unwrap();
        let back = load_matrix_csv(&path, DatasetKind::Covariance).unwrap().covariance_matrix().unwrap();
        prop_assert!(back.linear_combination(1.0, &m, -1.0).unwrap().frobenius_norm() <= 1e-12);
        prop_assert_eq!(back, m);
    }
}

#[test]
fn covariance_matches_two_pass_oracle() {
    let truth = dpngs_oracles::sparse_precision(5, 4, 0.5);
    let rows = dpngs_oracles::gaussian_samples(5, &truth, 50);
    let data = dpngs_cli::io::Dataset { kind: DatasetKind::Samples, rows: 50, cols: 4, values: rows.clone() };
    let ours = dpngs_cli::io::empirical_covariance(&data, false).unwrap();
    let oracle = dpngs_oracles::two_pass_covariance(&rows);
    assert!(ours.linear_combination(1.0, &oracle, -1.0).unwrap().max_abs() <= 1e-12);
}
