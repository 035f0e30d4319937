use std::path::PathBuf;
use std::process::Command;

use serde_json::Value;

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_mapfluct"))
        .args(args)
        .env_remove("MAPFLUCT_THREADS")
        .output()
        .expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8(out.stdout).unwrap())
}

fn run_json(args: &[&str]) -> (i32, Value) {
    let (code, out) = run(args);
    (
        code,
        serde_json::from_str(&out).unwrap_or_else(|e| panic!("{e}: {out}")),
    )
}

fn model(name: &str) -> String {
    let p: PathBuf = [
        env!("CARGO_MANIFEST_DIR"),
        "..",
        "core",
        "models",
        &format!("{name}.json"),
    ]
    .iter()
    .collect();
    p.to_string_lossy().into_owned()
}

fn temp_model(name: &str, text: &str) -> String {
    let p = std::env::temp_dir().join(format!("mapfluct-cli-{}-{name}.json", std::process::id()));
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn lambda_of_scalar_brownian_motion() {
    let (code, r) = run_json(&["lambda", "--model", &model("bm"), "--q", "0"]);
    assert_eq!(code, 0);
    let lambda = r["results"]["Lambda"].as_array().unwrap();
    assert_eq!(lambda.len(), 1);
    assert!((lambda[0][0].as_f64().unwrap() + 2.0).abs() < 1e-12, "{r}");
    assert_eq!(r["schema"], 1);
    assert_eq!(r["model"]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn verify_reports_agreement_and_residual() {
    let (code, r) = run_json(&["verify", "--model", &model("mmbm2_neg"), "--q", "0.5"]);
    assert_eq!(code, 0);
    let res = &r["results"];
    assert!(res["max_residual"].as_f64().unwrap() < 1e-8, "{res}");
    assert!(res["max_difference"].as_f64().unwrap() < 1e-7);
    assert_eq!(res["agree"], true);
    // Scalar rate from the quadratic ψ(θ) = q, independent of either route.
    let (code, r) = run_json(&["verify", "--model", &model("bm"), "--q", "0.5"]);
    assert_eq!(code, 0);
    let m = r["results"]["fixed_point"]["M"][0][0].as_f64().unwrap();
    assert!((m + 1.0 + 2f64.sqrt()).abs() < 1e-10);
}

#[test]
fn verify_skips_the_fixed_point_route_with_subordinator_states() {
    let (code, r) = run_json(&["verify", "--model", "builtin:sub3", "--q", "0.5"]);
    assert_eq!(code, 0);
    assert!(r["results"]["fixed_point"]["skipped"].is_string());
}

#[test]
fn malformed_generator_names_the_row() {
    let path = temp_model(
        "rowsum",
        r#"{"schema":1,"Q":[[-1,1],[1,-0.5]],"states":[{"drift":1,"sigma":1},{"drift":-2,"sigma":1}]}"#,
    );
    let (code, r) = run_json(&["lambda", "--model", &path]);
    assert_eq!(code, 2);
    assert_eq!(r["status"], "invalid");
    let errors = r["errors"].as_array().unwrap();
    assert_eq!(errors.len(), 1);
    assert_eq!(errors[0]["kind"], "row_sum");
    assert_eq!(errors[0]["row"], 1);
    assert!(errors[0]["message"].as_str().unwrap().contains("row 1"));
}

#[test]
fn unreadable_model_is_a_validation_error() {
    let (code, r) = run_json(&["spectrum", "--model", "/nonexistent/model.json"]);
    assert_eq!(code, 2);
    assert_eq!(r["errors"][0]["kind"], "io");
}

#[test]
fn merged_zeros_are_a_numerical_failure() {
    let (code, r) = run_json(&["lambda", "--model", "builtin:hyper2", "--tol-cluster", "0.9"]);
    assert_eq!(code, 3);
    assert_eq!(r["status"], "numerical_failure");
    assert_eq!(r["errors"][0]["kind"], "count_mismatch");
    assert!(r["diagnostics"]["spectrum"].is_array());
}

#[test]
fn every_subcommand_echoes_tolerances() {
    let bm = model("mmbm2_neg");
    let cases: Vec<Vec<&str>> = vec![
        vec!["lambda"],
        vec!["spectrum"],
        vec!["reflect-one"],
        vec!["reflect-two", "--b", "1"],
        vec!["scale", "--a", "1", "--b", "1"],
        vec!["verify"],
        vec![
            "simulate",
            "--mode",
            "passage",
            "--x",
            "0.5",
            "--paths",
            "200",
            "--horizon",
            "10",
        ],
    ];
    for mut args in cases {
        args.extend(["--model", &bm, "--tol-cluster", "2e-6", "--tol-rank", "3e-10"]);
        let (code, r) = run_json(&args);
        assert_eq!(code, 0, "{args:?}: {r}");
        assert_eq!(r["config"]["tolerances"]["cluster"], 2e-6, "{args:?}");
        assert_eq!(r["config"]["tolerances"]["rank"], 3e-10, "{args:?}");
    }
}

#[test]
fn driftless_scale_halves() {
    let path = temp_model(
        "driftless",
        r#"{"schema":1,"Q":[[0]],"states":[{"drift":0,"sigma":1.5}]}"#,
    );
    let (code, r) = run_json(&["scale", "--model", &path, "--a", "2", "--b", "2"]);
    assert_eq!(code, 0);
    assert!((r["results"]["C"][0][0].as_f64().unwrap() - 0.5).abs() < 1e-10);
    assert!((r["results"]["D"][0][0].as_f64().unwrap() - 0.5).abs() < 1e-10);
}

#[test]
fn one_sided_density_csv() {
    let (code, out) = run(&[
        "reflect-one",
        "--model",
        "builtin:bm",
        "--x",
        "2",
        "--points",
        "5",
        "--format",
        "csv",
    ]);
    assert_eq!(code, 0);
    let lines: Vec<_> = out.lines().collect();
    assert_eq!(lines[0], "x,p_1");
    assert_eq!(lines.len(), 6);
    // Exp(2) density.
    for line in &lines[1..] {
        let (x, p) = line.split_once(',').unwrap();
        let (x, p): (f64, f64) = (x.parse().unwrap(), p.parse().unwrap());
        assert!((p - 2.0 * (-2.0 * x).exp()).abs() < 1e-12, "{line}");
    }
}

#[test]
fn two_sided_local_times_balance_the_drift() {
    let (code, r) = run_json(&[
        "reflect-two",
        "--model",
        "builtin:mmbm2_zero",
        "--b",
        "2",
        "--alpha=-1,0.5",
    ]);
    assert_eq!(code, 0);
    let sum = |k: &str| {
        r["results"][k]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .sum::<f64>()
    };
    assert!((sum("u") - sum("l") - r["results"]["kappa"].as_f64().unwrap()).abs() < 1e-10);
    assert_eq!(r["results"]["transform"].as_array().unwrap().len(), 2);
}

#[test]
fn simulation_is_reproducible_and_respects_the_thread_cap() {
    let args = [
        "simulate",
        "--model",
        "builtin:mmbm2_neg",
        "--mode",
        "passage",
        "--x",
        "0.5",
        "--q",
        "0.5",
        "--seed",
        "9",
        "--paths",
        "3000",
        "--horizon",
        "50",
    ];
    let (_, a) = run_json(&args);
    let out = Command::new(env!("CARGO_BIN_EXE_mapfluct"))
        .args(args)
        .env("MAPFLUCT_THREADS", "1")
        .output()
        .unwrap();
    let b: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(a["results"], b["results"]);
    assert_eq!(b["config"]["threads"], 1);
    assert!(a["diagnostics"]["max_abs_z"].as_f64().unwrap() < 5.0);
}

#[test]
fn bad_thread_cap_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_mapfluct"))
        .args(["lambda", "--model", "builtin:bm"])
        .env("MAPFLUCT_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_flag_is_a_usage_error() {
    let (code, _) = run(&["scale", "--model", "builtin:bm", "--a", "1"]);
    assert_eq!(code, 2);
}
