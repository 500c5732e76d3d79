use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use covshrink::io::read_matrix_csv;
use covshrink::methods::{EstimateContext, Method};
use covshrink::sim::{make_sigma, sample_mvn, ModelSpec};

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covshrink")).args(args).current_dir(dir).output().expect("spawn covshrink")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn simulate_then_estimate_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "simulate",
            "--model",
            "2",
            "--p",
            "8",
            "--n",
            "25",
            "--seed",
            "4",
            "-o",
            "x.csv",
            "--sigma-output",
            "sigma.csv",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));

    let x = read_matrix_csv(dir.path().join("x.csv")).unwrap().data;
    let sigma = make_sigma(&ModelSpec::new(2, 8)).unwrap();
    assert_eq!(x.values(), sample_mvn(&sigma, 25, 4).unwrap().values());
    let s = read_matrix_csv(dir.path().join("sigma.csv")).unwrap().data;
    assert_eq!(s.values(), sigma.values());

    let o = run(
        &["estimate", "-i", "x.csv", "-m", "msgcor", "--seed", "2", "-o", "est.csv", "--fit-report", "fit.json"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let got = read_matrix_csv(dir.path().join("est.csv")).unwrap().data;
    let want = "msgcor"
        .parse::<Method>()
        .unwrap()
        .estimate(&x, &EstimateContext { seed: 2, ..Default::default() })
        .unwrap()
        .estimate;
    assert_eq!(got.values(), want.values());

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fit.json")).unwrap()).unwrap();
    assert!(report["loglik_trace"].as_array().unwrap().len() >= 2);
}

#[test]
fn estimate_to_stdout_and_oracle_truth() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(
        &["simulate", "--model", "1", "--p", "6", "--n", "12", "-o", "x.csv", "--sigma-output", "s.csv"],
        dir.path()
    )
    .status
    .success());
    let o = run(&["estimate", "-i", "x.csv", "-m", r#"{"name":"adap","delta":1.0}"#], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let m = covshrink::io::parse_matrix_csv(o.stdout.as_slice()).unwrap();
    assert_eq!(m.data.p(), 6);

    let o = run(&["estimate", "-i", "x.csv", "-m", "oracle_nonlin"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["estimate", "-i", "x.csv", "-m", "oracle_nonlin", "--truth", "s.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("ragged.csv"), "1,2,3\n4,5\n").unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"models": [], "n": 10, "replicates": 2, "methods": ["sample"]}"#)
        .unwrap();

    let code = |args: &[&str]| run(args, dir.path()).status.code();
    assert_eq!(code(&["estimate", "-i", "ragged.csv", "-m", "sample"]), Some(3));
    assert_eq!(code(&["estimate", "-i", "missing.csv"]), Some(3));
    assert_eq!(code(&["estimate", "-i", "ragged.csv", "-m", "qis"]), Some(2));
    assert_eq!(code(&["benchmark", "-c", "bad.json"]), Some(2));
    assert_eq!(code(&["simulate", "--model", "7", "--p", "4", "--n", "3"]), Some(2));
    assert_eq!(code(&["--threads", "0", "simulate", "--model", "1", "--p", "4", "--n", "3"]), Some(2));
    assert_eq!(code(&["no-such-command"]), Some(2));
    assert_eq!(code(&["--version"]), Some(0));
}

#[test]
fn benchmark_overrides_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"models": [{"model_id": 3, "p": 6}], "n": 20, "replicates": 3, "methods": ["sample", {"name": "nercome", "splits": 5}], "seed": 1}"#;
    fs::write(dir.path().join("cfg.json"), cfg).unwrap();
    let o = run(
        &[
            "benchmark",
            "-c",
            "cfg.json",
            "--no-timing",
            "--replicates",
            "4",
            "--n",
            "2",
            "--failures",
            "fail.json",
            "-o",
            "out.csv",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("out.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("model,p,n,method,median,q25,q75,replicates,mean_seconds"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("3,6,2,sample,"));
    assert!(rows[0].ends_with(",4,0.0"));
    // n = 2 leaves no valid NERCOME split size, so every replicate fails
    assert!(rows[1].starts_with("3,6,2,nercome,NaN,NaN,NaN,0,"));
    let failures: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("fail.json")).unwrap()).unwrap();
    assert_eq!(failures.as_array().unwrap().len(), 4);
    assert!(stderr(&o).contains("4 replicate fits failed"));
}

#[test]
fn split_eval_eigen_diag_and_network() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["simulate", "--model", "2", "--p", "10", "--n", "15", "--seed", "3", "-o", "x.csv"], dir.path())
        .status
        .success());

    let o = run(
        &["split-eval", "-i", "x.csv", "--repeats", "5", "--methods", "sample,linear", "-o", "split.csv"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let split = fs::read_to_string(dir.path().join("split.csv")).unwrap();
    assert_eq!(split.lines().count(), 3);
    assert!(split.lines().nth(1).unwrap().starts_with("data,10,10,sample,"));

    let o = run(&["eigen-diag", "--model", "6", "--p", "10", "--n", "40", "--replicates", "3"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("6,10,40,eigvec_distance,"));

    assert!(run(&["estimate", "-i", "x.csv", "-m", "sample", "-o", "s.csv"], dir.path()).status.success());
    let o = run(&["export-network", "-i", "s.csv", "--edges", "4", "-o", "edges.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let edges = fs::read_to_string(dir.path().join("edges.csv")).unwrap();
    assert_eq!(edges.lines().next(), Some("feature_i,feature_j,weight"));
    assert_eq!(edges.lines().count(), 5);
    assert_eq!(
        run(&["export-network", "-i", "s.csv", "--edges", "46", "-o", "e.csv"], dir.path()).status.code(),
        Some(2)
    );
}
