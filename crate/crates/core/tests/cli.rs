mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::data_path;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_miivgraph"))
        .args(args)
        .env_remove("MIIVGRAPH_SEED")
        .output()
        .unwrap()
}

fn model(name: &str) -> String {
    data_path(name).to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

fn equation<'a>(report: &'a serde_json::Value, name: &str) -> &'a serde_json::Value {
    report["equations"].as_array().unwrap().iter().find(|e| e["equation"] == name).unwrap()
}

#[test]
fn validate_exit_codes() {
    assert_eq!(run(&["validate", &model("democracy.lav")]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let cyclic = dir.path().join("cyc.lav");
    std::fs::write(&cyclic, "y1 ~ y2\ny2 ~ y1\n").unwrap();
    let o = run(&["validate", cyclic.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("cyc.lav:2:") && err.contains("cycle"), "{err}");

    let o = run(&["validate", dir.path().join("missing.lav").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn identify_reports_partial_conditional_and_aliased_cases() {
    let o = run(&["--format", "json", "identify", &model("correlated_indicator_errors.lav")]);
    assert!(o.status.success());
    let y3 = equation(&json(&o), "y3").clone();
    assert_eq!(y3["status"], "PartiallyIdentified");
    assert!(y3["choices"].as_array().unwrap().iter().any(|c| c["instruments"] == serde_json::json!(["y5"])));

    let o = run(&["--format", "json", "identify", &model("common_cause_covariate.lav")]);
    let y3 = equation(&json(&o), "y3").clone();
    assert!(y3["choices"].as_array().unwrap().iter().any(|c| {
        c["strategy"] == "conditional"
            && c["instruments"] == serde_json::json!(["y5"])
            && c["conditioning"] == serde_json::json!(["y6"])
    }));

    let o = run(&["--format", "json", "identify", &model("schooling_aliasing.lav")]);
    let y4 = equation(&json(&o), "y4").clone();
    assert_eq!(y4["status"], "IdentifiedButAliased");
    let combos: Vec<&str> = y4["estimable_combinations"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(combos.contains(&"λ14+λ34") && combos.contains(&"λ24"), "{combos:?}");
    assert!(!y4["identified"].as_array().unwrap().iter().any(|v| v == "λ34"));

    let text = stdout(&run(&["identify", &model("schooling_aliasing.lav")]));
    assert!(text.contains("IdentifiedButAliased"));
}

#[test]
fn transform_emits_dot_with_provenance() {
    let o = run(&["--emit-dot", "transform", &model("latent_to_observed.lav"), "--equation", "y3"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("digraph"));
    assert!(out.lines().any(|l| l.starts_with("// regression: y3 ~")));
    assert!(out.contains("\"y2\" -> \"y3\""));

    let o = run(&["transform", &model("latent_to_observed.lav"), "--equation", "nope"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_writes_reproducible_csv() {
    let a = run(&["simulate", &model("cross_loading.lav"), "-n", "100"]);
    assert!(a.status.success());
    let text = stdout(&a);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 5);
    assert_eq!(lines.count(), 100);
    let b = run(&["simulate", &model("cross_loading.lav"), "-n", "100"]);
    assert_eq!(a.stdout, b.stdout);
    let c = run(&["--seed", "2", "simulate", &model("cross_loading.lav"), "-n", "100"]);
    assert_ne!(a.stdout, c.stdout);
    assert_eq!(run(&["simulate", &model("cross_loading.lav"), "-n", "1"]).status.code(), Some(1));
}

fn simulate_to(dir: &Path, name: &str, n: &str) -> String {
    let out = dir.join(format!("{name}.csv"));
    let o = run(&["simulate", &model(name), "-n", n, "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.to_string_lossy().into_owned()
}

#[test]
fn estimate_reports_only_identified_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let csv = simulate_to(dir.path(), "correlated_indicator_errors.lav", "2000");
    let o = run(&["--format", "json", "estimate", &model("correlated_indicator_errors.lav"), &csv]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&o);
    let y3: Vec<&serde_json::Value> =
        report["regressions"].as_array().unwrap().iter().filter(|r| r["equation"] == "y3").collect();
    let params: Vec<&serde_json::Value> = y3.iter().flat_map(|r| r["rows"].as_array().unwrap()).map(|r| &r["parameter"]).collect();
    assert_eq!(params, [&serde_json::json!("λ23")]);

    // a model mentioning a column the data lacks
    let short = dir.path().join("short.csv");
    let text = std::fs::read_to_string(&csv).unwrap();
    let trimmed: String = text.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string() + "\n").collect();
    std::fs::write(&short, trimmed).unwrap();
    let o = run(&["estimate", &model("correlated_indicator_errors.lav"), short.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("y5"));
}

#[test]
fn selfcheck_passes() {
    let o = run(&["selfcheck", "--cases", "30"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 6, "{out}");
}
