use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn atr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atr")).args(args).output().expect("binary runs")
}

fn atr_env(args: &[&str], key: &str, val: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atr")).args(args).env(key, val).output().expect("binary runs")
}

fn json_of(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{}: {}", e, String::from_utf8_lossy(&o.stdout)))
}

fn schema(name: &str) -> jsonschema::JSONSchema {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas").join(name);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::JSONSchema::compile(&v).unwrap()
}

fn assert_valid(schema_file: &str, v: &Value) {
    let s = schema(schema_file);
    let msgs: Vec<String> = match s.validate(v) {
        Ok(()) => return,
        Err(errors) => errors.map(|e| e.to_string()).collect(),
    };
    panic!("{} does not match {}: {:?}", v, schema_file, msgs);
}

fn scratch_dir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("atr-cli-{}-{}", tag, std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn double_affine_use_is_rejected_with_json_error() {
    let dir = scratch_dir("reject");
    let file = dir.join("bad.atr");
    std::fs::write(
        &file,
        "fn (b : N_eps) => letrec f : N_eps -> N_eps -> N_eps =\n  fn c u => if u then down (f c (d u)) (f c (d u)) else u in f b b end\n",
    )
    .unwrap();
    let o = atr(&["check", file.to_str().unwrap(), "--format", "json"]);
    assert_eq!(o.status.code(), Some(1));
    let v = json_of(&o);
    assert_eq!(v["code"], "AffineReuse");
    assert!(v["span"]["line"].as_u64().unwrap() >= 1);
    assert_valid("error.schema.json", &v);
}

#[test]
fn syntax_errors_carry_a_span() {
    let dir = scratch_dir("syntax");
    let file = dir.join("broken.atr");
    std::fs::write(&file, "fn x => (c0 x\n").unwrap();
    let o = atr(&["check", file.to_str().unwrap(), "--format", "json"]);
    assert_eq!(o.status.code(), Some(1));
    assert_valid("error.schema.json", &json_of(&o));
}

#[test]
fn missing_file_exits_two() {
    let o = atr(&["check", "/definitely/not/here.atr", "--format", "json"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(json_of(&o)["code"], "IoError");
}

#[test]
fn run_report_matches_schema() {
    let o = atr(&["run", "ins_sort", "--list", "11,01,10", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    assert_valid("run-report.schema.json", &json_of(&o));
    let o = atr(&["run", "cons", "1", "--list", "0", "--engine", "machine", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json_of(&o);
    assert_valid("run-report.schema.json", &v);
    assert_eq!(v["machine"]["valuesEqual"], true);
}

#[test]
fn fuel_exhaustion_exits_three() {
    let o = atr(&["run", "reverse", "--list", "1,0,1", "--fuel", "10"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn unchecked_needs_fuel() {
    assert_eq!(atr(&["run", "reverse", "--unchecked", "0"]).status.code(), Some(2));
    let o = atr(&["run", "reverse", "--unchecked", "--fuel", "1000000", "--list", "1"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn machine_trace_has_one_line_per_step() {
    let dir = scratch_dir("trace");
    let trace = dir.join("t.txt");
    let o = atr(&["run", "tail", "--list", "1,0", "--engine", "machine", "--format", "json", "--trace", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let steps = json_of(&o)["machine"]["steps"].as_u64().unwrap();
    let lines = std::fs::read_to_string(trace).unwrap().lines().count() as u64;
    assert_eq!(lines, steps);
}

#[test]
fn bound_reports_are_deterministic_and_valid() {
    for name in ["cons", "prn", "sel_sort"] {
        let a = atr(&["bound", name, "--format", "json"]);
        let b = atr(&["bound", name, "--format", "json"]);
        assert_eq!(a.status.code(), Some(0));
        assert_eq!(a.stdout, b.stdout, "{}", name);
        assert_valid("bound-report.schema.json", &json_of(&a));
    }
    assert_eq!(json_of(&atr(&["bound", "cons", "--format", "json"]))["mode"], "symbolic");
    assert_eq!(json_of(&atr(&["bound", "prn", "--format", "json"]))["mode"], "numeric");
}

#[test]
fn verify_is_deterministic_per_seed() {
    let args = ["verify", "leq", "--trials", "10", "--seed", "3", "--format", "json"];
    let a = atr(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, atr(&args).stdout);
    let v = json_of(&a);
    assert_valid("bound-report.schema.json", &v);
    assert_eq!(v["checks"]["trials"], 60);
    assert_eq!(v["checks"]["violations"], 0);
}

#[test]
fn verify_catches_a_mutated_bound_file() {
    let dir = scratch_dir("mutate");
    let o = atr(&["bound", "tail", "--format", "json"]);
    let mut v = json_of(&o);
    let cost = v["costPoly"].as_str().unwrap().to_string();
    v["costPoly"] = Value::String("n1".into());
    let file = dir.join("tail.bound.json");
    std::fs::write(&file, serde_json::to_string(&v).unwrap()).unwrap();
    let o = atr(&["verify", "tail", "--trials", "5", "--bound", file.to_str().unwrap(), "--format", "json"]);
    assert_eq!(o.status.code(), Some(1));
    let r = json_of(&o);
    assert!(r["checks"]["violations"].as_u64().unwrap() > 0);
    assert!(!r["counterexamples"].as_array().unwrap().is_empty());

    // The unmodified report passes.
    v["costPoly"] = Value::String(cost);
    std::fs::write(&file, serde_json::to_string(&v).unwrap()).unwrap();
    let o = atr(&["verify", "tail", "--trials", "5", "--bound", file.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn normalized_programs_still_check_and_agree() {
    let dir = scratch_dir("normalize");
    for name in ["head", "insert", "sel_sort"] {
        let o = atr(&["normalize", name]);
        assert_eq!(o.status.code(), Some(0));
        let file = dir.join(format!("{}.atr", name));
        std::fs::write(&file, &o.stdout).unwrap();
        assert_eq!(atr(&["check", file.to_str().unwrap()]).status.code(), Some(0), "{}", name);
    }
    let list = ["--list", "10,1,0"];
    let orig = json_of(&atr(&["run", "sel_sort", list[0], list[1], "--format", "json"]));
    let file = dir.join("sel_sort.atr");
    let norm = json_of(&atr(&["run", file.to_str().unwrap(), list[0], list[1], "--format", "json"]));
    assert_eq!(orig["value"], norm["value"]);
}

#[test]
fn corpus_export_and_directory_override() {
    let dir = scratch_dir("export");
    let o = atr(&["corpus", "--export", dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.join("prn.oracles.json").exists());
    let listed = atr_env(&["corpus"], "ATR_CORPUS_DIR", &dir);
    assert_eq!(listed.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&listed.stdout).contains("ins_sort"));
    // A file path picks up the oracle configuration beside it.
    let o = atr(&["run", dir.join("prn.atr").to_str().unwrap(), "1", "01"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn oracle_programs_need_a_configuration() {
    let dir = scratch_dir("oracles");
    let file = dir.join("lonely.atr");
    std::fs::write(&file, "oracle a : N_eps -> N_bd;\nfn (x : N_eps) => a x\n").unwrap();
    assert_eq!(atr(&["check", file.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(atr(&["run", file.to_str().unwrap(), "01"]).status.code(), Some(2));
    let cfg = dir.join("cfg.json");
    std::fs::write(&cfg, r#"{"a": "identity"}"#).unwrap();
    let o = atr(&["run", file.to_str().unwrap(), "01", "--oracles", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("value: 01"));
}
