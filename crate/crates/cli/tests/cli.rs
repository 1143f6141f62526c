use std::fs;
use std::path::Path;

use serde_json::Value;
use sparse_pca_cli::run;
use tempfile::TempDir;

const DIAG: &str = "3,0,0\n0,2,0\n0,0,1\n";

fn invoke(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("sparse-pca").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn write_input(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn json_ok(args: &[&str]) -> Value {
    let (code, out, err) = invoke(args);
    assert_eq!(code, 0, "stderr: {err}");
    serde_json::from_str(&out).unwrap()
}

fn support(report: &Value) -> Vec<u64> {
    report["components"][0]["support"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect()
}

#[test]
fn oracle_picks_largest_diagonal() {
    let dir = TempDir::new().unwrap();
    let input = write_input(&dir, "d.csv", DIAG);
    let r = json_ok(&["oracle", "--input", &input, "--k", "1"]);
    assert_eq!(support(&r), vec![1]);
    assert!((r["components"][0]["variance"].as_f64().unwrap() - 3.0).abs() < 1e-12);
}

#[test]
fn greedy_at_cardinality_two() {
    let dir = TempDir::new().unwrap();
    let input = write_input(&dir, "d.csv", DIAG);
    let r = json_ok(&["solve", "--input", &input, "--method", "greedy", "--k", "2"]);
    assert_eq!(support(&r), vec![1, 2]);
    assert!((r["components"][0]["variance"].as_f64().unwrap() - 3.0).abs() < 1e-12);
}

#[test]
fn dspca_large_penalty_gives_zero() {
    let dir = TempDir::new().unwrap();
    let input = write_input(&dir, "d.csv", DIAG);
    let r = json_ok(&["solve", "--input", &input, "--method", "dspca", "--rho", "3.5"]);
    assert!(support(&r).is_empty());
    assert_eq!(r["components"][0]["penalized_objective"].as_f64(), Some(0.0));
}

#[test]
fn dspca_writes_report_file() {
    let dir = TempDir::new().unwrap();
    let input = write_input(&dir, "d.csv", "4,1,0\n1,3,0\n0,0,1\n");
    let dest = dir.path().join("report.json");
    let (code, out, _) = invoke(&[
        "solve", "--input", &input, "--method", "dspca", "--rho", "0.5", "--seed", "11", "--out",
        dest.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert!(out.is_empty());
    let r: Value = serde_json::from_str(&fs::read_to_string(&dest).unwrap()).unwrap();
    assert_eq!(r["seed"].as_u64(), Some(11));
    assert_eq!(support(&r), vec![1, 2]);
    assert!(r["bounds"]["gap"].as_f64().unwrap() <= 1e-3);
}

#[test]
fn usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let input = write_input(&dir, "d.csv", DIAG);
    assert_eq!(invoke(&["solve", "--input", &input]).0, 2);
    assert_eq!(invoke(&["solve", "--input", &input, "--method", "dspca"]).0, 2);
    assert_eq!(invoke(&["solve", "--input", &input, "--method", "greedy", "--k", "4"]).0, 2);
    assert_eq!(invoke(&["frobnicate"]).0, 2);
}

#[test]
fn bad_input_reports_json_diagnostic() {
    let dir = TempDir::new().unwrap();
    let input = write_input(&dir, "a.csv", "1,2\n0,1\n");
    let (code, _, err) = invoke(&["oracle", "--input", &input, "--k", "1"]);
    assert_eq!(code, 1);
    let diag: Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(diag["error"], "AsymmetricInput");

    let missing = dir.path().join("missing.csv");
    let (code, _, err) = invoke(&["oracle", "--input", missing.to_str().unwrap(), "--k", "1"]);
    assert_eq!(code, 1);
    assert!(err.contains("\"error\""));
}

#[test]
fn header_names_reach_the_report() {
    let dir = TempDir::new().unwrap();
    let input = write_input(&dir, "named.csv", "alpha,beta,gamma\n3,0,0\n0,2,0\n0,0,1\n");
    let r = json_ok(&["solve", "--input", &input, "--method", "greedy", "--k", "2"]);
    let names: Vec<&str> = r["components"][0]["support_names"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(names, ["alpha", "beta"]);
}

#[test]
fn path_variances_never_decrease() {
    let dir = TempDir::new().unwrap();
    let input = write_input(
        &dir,
        "c.csv",
        "4,1,0.5,0\n1,3,0.2,0.1\n0.5,0.2,2,0.3\n0,0.1,0.3,1\n",
    );
    let (code, out, _) = invoke(&["path", "--input", &input]);
    assert_eq!(code, 0);
    let mut reader = csv::Reader::from_reader(out.as_bytes());
    let variances: Vec<f64> = reader
        .records()
        .map(|r| r.unwrap()[1].parse().unwrap())
        .collect();
    assert_eq!(variances.len(), 4);
    assert!(variances.windows(2).all(|w| w[1] >= w[0] - 1e-12));
}

#[test]
fn certify_diagonal_pattern() {
    let dir = TempDir::new().unwrap();
    let input = write_input(&dir, "d.csv", DIAG);
    let r = json_ok(&["certify", "--input", &input, "--pattern", "1"]);
    assert_eq!(r["bounds"]["certified"], Value::Bool(true));
    let rho = r["params"]["rho_star"].as_f64().unwrap();
    assert!((rho - 1.5).abs() < 1e-9);
}

#[test]
fn data_input_and_deflation() {
    let dir = TempDir::new().unwrap();
    let input = write_input(&dir, "x.csv", "1,2,0\n2,4,1\n3,6,0\n4,8,1\n");
    let r = json_ok(&[
        "deflate", "--input", &input, "--input-kind", "data", "--components", "2", "--k", "1",
    ]);
    let comps = r["components"].as_array().unwrap();
    assert_eq!(comps.len(), 2);
    assert_ne!(comps[0]["support"], comps[1]["support"]);
}

#[test]
fn bounds_experiment_writes_csv() {
    let dir = TempDir::new().unwrap();
    let dest = dir.path().join("bounds.csv");
    let (code, _, err) = invoke(&[
        "experiment", "bounds", "--n", "5", "--q", "5", "--grid-points", "4", "--out",
        dest.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let text = fs::read_to_string(Path::new(&dest)).unwrap();
    assert_eq!(text.lines().count(), 6);
}
