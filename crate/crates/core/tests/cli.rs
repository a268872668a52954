mod common;

use std::process::{Command, Output};

use common::{fixture_sigma, sparse_from_fixture};
use hybrid_svds::cli::RunReport;
use hybrid_svds::matio::read_matrix_market;
use hybrid_svds::svds::compute_svd_residual;

fn fixture_path() -> String {
    format!("{}/tests/fixtures/rect50x30.mtx", env!("CARGO_MANIFEST_DIR"))
}

fn hsvds(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hsvds")).args(args).output().unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn fixture_top_five_match_committed_values() {
    let path = fixture_path();
    let out = hsvds(&["--matrix", &path, "--num-svals", "5", "--tol", "1e-8", "--format", "json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let exact = fixture_sigma("rect50x30.sigma");
    let v = json(&out);
    assert_eq!(v["converged_count"], 5);
    assert_eq!(v["request"]["rows"], 50);
    for (i, t) in v["triplets"].as_array().unwrap().iter().enumerate() {
        let s = t["sigma"].as_f64().unwrap();
        assert!((s - exact[i]).abs() <= 1e-7 * exact[i]);
        assert_eq!(t["converged"], true);
    }
}

#[test]
fn written_vectors_reproduce_reported_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let vecs = dir.path().join("vecs.mtx");
    let path = fixture_path();
    let out = hsvds(&[
        "--matrix",
        &path,
        "--num-svals",
        "3",
        "--target",
        "smallest",
        "--tol",
        "1e-10",
        "--format",
        "json",
        "--write-vectors",
        vecs.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let a = sparse_from_fixture("rect50x30.mtx");
    let stacked = read_matrix_market(&vecs).unwrap().to_dense();
    assert_eq!((stacked.rows(), stacked.cols()), (80, 3));
    for (j, t) in v["triplets"].as_array().unwrap().iter().enumerate() {
        let col = stacked.col(j);
        let (u, vv) = col.split_at(50);
        let sigma = t["sigma"].as_f64().unwrap();
        let reported = t["rnorm"].as_f64().unwrap();
        let fresh = compute_svd_residual(&a, sigma, u, vv).unwrap();
        assert!(fresh <= 2.0 * reported.max(1e-15 * sigma.max(1.0)), "{fresh:e} vs {reported:e}");
    }
}

#[test]
fn json_report_round_trips() {
    let out = hsvds(&["--synth", "cond:100:60x40", "--num-svals", "2", "--target", "smallest", "--format", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let report: RunReport = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report.triplets.len(), 2);
    assert!(report.complete());
    let again = serde_json::to_value(&report).unwrap();
    assert_eq!(again, json(&out));
}

#[test]
fn condition_mode_reports_kappa() {
    let out = hsvds(&["--synth", "cond:100:80x50", "--mode", "cond", "--format", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let kappa = json(&out)["condition"]["kappa"].as_f64().unwrap();
    assert!((kappa - 100.0).abs() < 10.0, "{kappa}");
}

#[test]
fn text_output_is_identical_apart_from_timing() {
    let args = ["--synth", "cond:1000:80x50", "--num-svals", "3", "--target", "smallest", "--seed", "4"];
    let strip = |o: &Output| {
        String::from_utf8(o.stdout.clone())
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("seconds"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let (a, b) = (hsvds(&args), hsvds(&args));
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(strip(&a), strip(&b));
    assert!(strip(&a).contains("converged 3/3"));
}

#[test]
fn missing_file_is_an_error() {
    let out = hsvds(&["--matrix", "/nonexistent/none.mtx"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn partial_convergence_exits_with_two() {
    let out = hsvds(&[
        "--synth",
        "cond:1000:200x150",
        "--num-svals",
        "3",
        "--target",
        "smallest",
        "--max-matvecs",
        "60",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_arguments_are_rejected() {
    assert_eq!(hsvds(&["--synth", "cond:10:20x10", "--num-svals", "11"]).status.code(), Some(1));
    assert_ne!(hsvds(&["--num-svals", "1"]).status.code(), Some(0));
    assert_eq!(hsvds(&["--help"]).status.code(), Some(0));
}
