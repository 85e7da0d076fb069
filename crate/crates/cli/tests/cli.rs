use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssfinsler"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(args: &[&str]) -> (i32, Value) {
    let mut all = args.to_vec();
    all.extend(["--format", "json"]);
    let out = run(&all);
    let v = serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)));
    (code(&out), v)
}

fn verdict<'a>(rep: &'a Value, name: &str) -> &'a Value {
    rep["verdicts"]
        .as_array()
        .unwrap()
        .iter()
        .find(|v| v["name"] == name)
        .unwrap_or_else(|| panic!("no verdict {name}"))
}

fn scratch(name: &str) -> PathBuf {
    std::env::temp_dir().join(format!("ssfinsler-{}-{name}", std::process::id()))
}

fn f64_at(v: &Value) -> f64 {
    v.as_f64().unwrap()
}

#[test]
fn eval_euclidean() {
    let (c, rep) = json(&["eval", "--spec", "euclidean", "--x", "1,0,0", "--y", "0,1,0"]);
    assert_eq!(c, 0);
    let e = &rep["body"]["eval"];
    assert_eq!(f64_at(&e["f"]), 1.0);
    assert_eq!(f64_at(&e["p"]), 0.0);
    assert_eq!(f64_at(&e["q"]), 0.0);
}

#[test]
fn eval_example_6_2() {
    let (c, rep) = json(&["eval", "--spec", "example_6_2:+", "--x", "1,0,0", "--y", "0,1,0"]);
    assert_eq!(c, 0);
    let f = f64_at(&rep["body"]["eval"]["f"]);
    assert!((f - 1.0 / 5f64.sqrt()).abs() < 1e-15, "{f}");
}

#[test]
fn eval_on_the_boundary_is_a_domain_error() {
    let out = run(&["eval", "--spec", "example_6_1:+", "--x", "1,0,0", "--y", "1,0,0"]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
}

#[test]
fn usage_errors() {
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["eval", "--spec", "euclidean", "--x", "1,0,0"])), 1);
    assert_eq!(code(&run(&["eval", "--spec", "no_such_metric", "--x", "1,0,0", "--y", "0,1,0"])), 1);
    assert_eq!(code(&run(&["eval", "--spec", "{not json", "--x", "1,0,0", "--y", "0,1,0"])), 1);
    assert_eq!(code(&run(&["eval", "--spec", "euclidean", "--x", "1,0", "--y", "0,1,0"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn spec_from_file_and_inline_json() {
    let path = scratch("spec.json");
    std::fs::write(&path, r#"{"kind": "catalog", "id": "example_6_5", "params": {"branch": "-"}}"#).unwrap();
    let args = ["--x", "0.3,1.1,0", "--y", "1,0.2,-0.5"];
    let mut a = vec!["eval", "--spec", path.to_str().unwrap()];
    a.extend(args);
    let (c1, from_file) = json(&a);
    let inline = r#"{"kind": "catalog", "id": "example_6_5", "params": {"branch": "-"}}"#;
    let mut b = vec!["eval", "--spec", inline];
    b.extend(args);
    let (c2, from_arg) = json(&b);
    let mut c = vec!["eval", "--spec", "example_6_5:-"];
    c.extend(args);
    let (c3, short) = json(&c);
    std::fs::remove_file(&path).ok();
    assert_eq!((c1, c2, c3), (0, 0, 0));
    assert_eq!(from_file["body"], from_arg["body"]);
    assert_eq!(from_file["body"], short["body"]);
}

#[test]
fn classify_verdicts() {
    let (c, rep) = json(&["classify", "--spec", "example_6_5:+", "--count", "10", "--seed", "3"]);
    assert_eq!(c, 0);
    let cfc = verdict(&rep, "cfc");
    assert_eq!(cfc["holds"], true);
    assert!((f64_at(&cfc["k_hat"]) + 1.0).abs() <= 1e-7);

    let unicorn = r#"{"kind": "catalog", "id": "unicorn_candidate", "params": {"c1": 0, "c2": 1, "c3": 0, "branch": "+"}}"#;
    let (_, rep) = json(&["classify", "--spec", unicorn, "--count", "10"]);
    assert_eq!(verdict(&rep, "landsberg")["holds"], true);
    assert_eq!(verdict(&rep, "berwald")["holds"], false);

    let family = r#"{"kind": "catalog", "id": "berwald_family", "params": {"psi": "sqrt(1+t)", "c2": "0"}}"#;
    let (_, rep) = json(&["classify", "--spec", family, "--count", "10"]);
    assert_eq!(verdict(&rep, "berwald")["holds"], true);
}

#[test]
fn verify_examples_passes() {
    let (c, rep) = json(&["verify-examples", "--count", "5", "--seed", "1"]);
    assert_eq!(c, 0);
    let vs = rep["verdicts"].as_array().unwrap();
    assert!(vs.len() >= 9, "{}", vs.len());
    assert!(vs.iter().all(|v| v["holds"] == true));
    assert_eq!(rep["passed"], true);
}

#[test]
fn construct_examples() {
    for cfg in [
        r#"{"c1": "-1/r", "g_free": "-2/(r+4*r^2)", "c": 2, "branch": "+"}"#,
        r#"{"c1": "-2", "g_free": "0", "c": 2, "branch": "+"}"#,
    ] {
        let (c, rep) = json(&["construct", "--config", cfg]);
        assert_eq!(c, 0, "{cfg}");
        let k = verdict(&rep, "flag curvature");
        assert_eq!(k["holds"], true);
        assert!(f64_at(&k["k_hat"]).abs() <= 1e-7);
        assert_eq!(rep["body"]["construct"]["report"]["classification"]["verdict"], "constant flag curvature K = 0");
    }
}

#[test]
fn construct_off_family_fails_integrability() {
    let (c, rep) = json(&["construct", "--config", r#"{"c1": "-1/r", "g_free": "auto", "c": 1.3}"#]);
    assert_eq!(c, 3);
    assert_eq!(rep["passed"], false);
    let i = verdict(&rep, "integrability");
    assert_eq!(i["holds"], false);
    assert!(f64_at(&i["worst"]) > 1e-3);
    assert_eq!(rep["body"]["construct"]["report"]["failed_stage"], "integrability");
}

#[test]
fn oracle_compare_small() {
    let (c, rep) = json(&["oracle-compare", "--spec", "example_6_2:-", "--count", "2", "--seed", "5"]);
    assert_eq!(c, 0);
    for name in ["oracle spray", "oracle riemann", "oracle berwald"] {
        assert_eq!(verdict(&rep, name)["holds"], true, "{name}");
    }
}

#[test]
fn same_seed_gives_identical_reports() {
    let strip = |p: &PathBuf| -> String {
        let text = std::fs::read_to_string(p).unwrap();
        let mut v: Value = serde_json::from_str(&text).unwrap();
        assert!(v["timing"]["seconds"].is_number());
        v.as_object_mut().unwrap().remove("timing");
        // everything before the timing field must match byte for byte
        let cut = text.find("\"timing\"").unwrap();
        format!("{}{}", &text[..cut], v)
    };
    let (a, b) = (scratch("a.json"), scratch("b.json"));
    for p in [&a, &b] {
        let out = run(&["classify", "--spec", "example_6_2:-", "--seed", "42", "--count", "6", "--dim", "4", "--out", p.to_str().unwrap()]);
        assert_eq!(code(&out), 0);
    }
    let (sa, sb) = (strip(&a), strip(&b));
    let c = scratch("c.json");
    run(&["classify", "--spec", "example_6_2:-", "--seed", "43", "--count", "6", "--dim", "4", "--out", c.to_str().unwrap()]);
    let sc = strip(&c);
    for p in [a, b, c] {
        std::fs::remove_file(p).ok();
    }
    assert_eq!(sa, sb);
    assert_ne!(sa, sc);
}

#[test]
fn floats_carry_seventeen_digits() {
    let out = run(&["eval", "--spec", "example_6_2:+", "--x", "1,0,0", "--y", "0,1,0", "--format", "json"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\"f\": 4.4721359549995793e-1"), "{text}");
    let rep: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(rep["schema"], 1);
}

#[test]
fn text_format_lists_verdicts() {
    let out = run(&["classify", "--spec", "euclidean", "--count", "3"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["berwald", "landsberg", "cfc", "einstein"] {
        assert!(text.contains(name), "{text}");
    }
}
