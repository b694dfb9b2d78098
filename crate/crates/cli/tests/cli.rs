use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn spec(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("specs").join(format!("{name}.json"))
}

fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read_to_string(path).unwrap()
}

fn ctleak(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctleak")).args(args).output().unwrap()
}

fn with_spec(cmd: &str, name: &str, extra: &[&str]) -> Output {
    let path = spec(name);
    let mut args = vec![cmd, path.to_str().unwrap()];
    args.extend_from_slice(extra);
    ctleak(&args)
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn run_stack_swap_leaks_the_buffer_address() {
    let o = with_spec("run", "stack_swap", &[]);
    assert_eq!(code(&o), 0);
    let leak = &json(&o)["leak"];
    let expected: Value = serde_json::from_str(r#"[{"nondet":64},{"leak":64},{"leak":65},{"leak":64},{"leak":65}]"#).unwrap();
    assert_eq!(leak, &expected);
    assert_eq!(stdout(&o), golden("stack_swap.run.json"));
}

#[test]
fn run_semiprime_prints_the_product() {
    let o = with_spec("run", "semiprime", &[]);
    assert_eq!(code(&o), 0);
    let io: Value = serde_json::from_str(r#"[{"in":3},{"in":5},{"out":15}]"#).unwrap();
    assert_eq!(json(&o)["io"], io);
    assert_eq!(stdout(&o), golden("semiprime.run.json"));
}

#[test]
fn missing_spec_is_a_config_error() {
    assert_eq!(code(&ctleak(&["run", "/nonexistent/spec.json"])), 2);
}

#[test]
fn malformed_spec_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"program": "corpus:swap", "bogus": 1}"#).unwrap();
    assert_eq!(code(&ctleak(&["run", path.to_str().unwrap()])), 2);
}

#[test]
fn fuel_exhaustion_exits_one() {
    let o = with_spec("run", "countdown", &["--fuel", "3"]);
    assert_eq!(code(&o), 1);
    assert_eq!(json(&o)["status"], "fuel_exhausted");
}

#[test]
fn seed_overrides_the_oracle() {
    let a = json(&with_spec("run", "stack_swap", &["--seed", "1"]));
    let b = json(&with_spec("run", "stack_swap", &["--seed", "2"]));
    assert_ne!(a["leak"][0], b["leak"][0]);
    assert_eq!(a["leak"][0]["nondet"], a["leak"][1]["leak"]);
}

#[test]
fn word_width_wraps_arithmetic() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("big.ct"), "fn big() { x = 200 + 100; output(x); }").unwrap();
    let path = dir.path().join("big.json");
    std::fs::write(&path, r#"{"program": "big.ct"}"#).unwrap();
    let o = ctleak(&["run", path.to_str().unwrap(), "--word-width", "8"]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&o)["io"][0]["out"], 44);
}

#[test]
fn toml_specs_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    std::fs::write(&path, "program = \"corpus:semiprime\"\n\n[inputs]\nscript = [2, 7]\n").unwrap();
    let o = ctleak(&["run", path.to_str().unwrap()]);
    assert_eq!(json(&o)["io"][2]["out"], 14);
}

#[test]
fn corpus_shorthand_uses_the_default_scenario() {
    let o = ctleak(&["run", "corpus:swap"]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&o)["leak"].as_array().unwrap().len(), 4);
}

#[test]
fn enumerate_covers_every_base_and_fresh_content() {
    let o = with_spec("enumerate", "stackalloc_and_print", &[]);
    assert_eq!(code(&o), 0);
    let outs: Vec<u64> = json(&o)
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["outcome"]["io"][0]["out"].as_u64().unwrap())
        .collect();
    // 3 bases, each with 4 fresh bytes ranging over 2 values.
    assert_eq!(outs.len(), 3 * 16);
    let mut bases = outs.clone();
    bases.dedup();
    assert_eq!(bases, vec![64, 128, 192]);
}

#[test]
fn countdown_is_leaky_for_predictors_and_passes_the_flawed_notion() {
    let o = with_spec("check-ct", "countdown", &["--notion", "predictor"]);
    assert_eq!(code(&o), 1);
    let v = json(&o);
    assert_eq!(v["verdict"], "leaky");
    assert!(v["reason"].as_str().unwrap().contains("Leak 0 / Leak 1"), "{}", v["reason"]);
    let o = with_spec("check-ct", "countdown", &["--notion", "flawed"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn swap_is_naive_constant_time() {
    let o = with_spec("check-ct", "swap", &["--notion", "naive"]);
    assert_eq!(code(&o), 0);
    let k: Value = serde_json::from_str(r#"{"trace":[{"leak":16},{"leak":20},{"leak":16},{"leak":20}]}"#).unwrap();
    assert_eq!(json(&o)["witnesses"][0]["evidence"], k);
}

#[test]
fn naive_notion_is_inconclusive_with_allocations() {
    assert_eq!(code(&with_spec("check-ct", "stack_swap", &["--notion", "naive"])), 3);
}

#[test]
fn login_needs_the_declassified_bit() {
    assert_eq!(code(&with_spec("check-ct", "login", &["--notion", "naive"])), 1);
    assert_eq!(code(&with_spec("check-ct", "login_declassified", &["--notion", "naive"])), 0);
}

#[test]
fn compile_memequal_writes_machine_code_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = with_spec("compile", "memequal", &["-o", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["target"], "machine");
    assert_eq!(manifest["layout"]["sp0"], 1024);
    assert_eq!(manifest["layout"]["functions"][0]["position"], 4096);
    let machine: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("memequal.machine.json")).unwrap()).unwrap();
    assert!(!machine["code"].as_array().unwrap().is_empty());
    let listing = std::fs::read_to_string(dir.path().join("memequal.machine.txt")).unwrap();
    assert_eq!(listing, golden("memequal.machine.txt"));
}

#[test]
fn frame_alloc_leaves_one_allocation_in_stack_swap() {
    let o = with_spec("compile", "stack_swap", &["--passes", "flatten,use_immediates,dead_code_elim,frame_alloc", "--emit", "flat"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).matches("stackalloc").count(), 1);
}

#[test]
fn emitting_the_wrong_level_is_a_config_error() {
    assert_eq!(code(&with_spec("compile", "swap", &["--passes", "flatten", "--emit", "machine"])), 2);
}

#[test]
fn reorder_on_a_mismatching_program_fails_to_compile() {
    let o = with_spec("compile", "swap", &["--passes", "reorder_random"]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("pattern mismatch"));
}

#[test]
fn pass_contracts() {
    assert_eq!(code(&with_spec("check-pass", "stack_swap", &["--pass", "frame_alloc", "--contract", "oracle"])), 0);
    assert_eq!(code(&with_spec("check-pass", "swap", &["--pass", "flatten", "--contract", "leakage"])), 0);
    assert_eq!(code(&with_spec("check-pass", "memequal", &["--pass", "codegen", "--contract", "predictor"])), 0);
}

#[test]
fn reorder_admits_a_predictor_but_no_oracle_transformation() {
    assert_eq!(code(&with_spec("check-pass", "reorder", &["--pass", "reorder_random", "--contract", "predictor"])), 0);
    let o = with_spec("check-pass", "reorder", &["--pass", "reorder_random", "--contract", "oracle"]);
    assert_eq!(code(&o), 1);
    let o = with_spec("check-pass", "reorder", &["--pass", "reorder_random", "--contract", "oracle", "--expect-fail", "--json"]);
    assert_eq!(code(&o), 0);
    let v = json(&o);
    assert!(v["counterexample"]["contradiction"].as_str().unwrap().contains("two different words at []"));
    let outs: Vec<Value> = v["counterexample"]["runs"].as_array().unwrap().iter().map(|r| r["target_outputs"].clone()).collect();
    assert_eq!(outs, vec![serde_json::json!([7]), serde_json::json!([9])]);
}

#[test]
fn expect_fail_on_a_passing_contract_exits_one() {
    assert_eq!(code(&with_spec("check-pass", "swap", &["--pass", "flatten", "--contract", "leakage", "--expect-fail"])), 1);
}

#[test]
fn output_flag_writes_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.json");
    let o = with_spec("run", "semiprime", &["-o", path.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    assert_eq!(std::fs::read_to_string(path).unwrap(), golden("semiprime.run.json"));
}

#[test]
fn outputs_are_deterministic() {
    for (cmd, name, extra) in [
        ("run", "stack_swap", vec!["--seed", "9"]),
        ("enumerate", "countdown", vec![]),
        ("check-ct", "stack_swap", vec!["--notion", "oracle"]),
        ("check-ct", "countdown", vec!["--notion", "predictor"]),
    ] {
        let a = with_spec(cmd, name, &extra);
        let b = with_spec(cmd, name, &extra);
        assert_eq!(a.stdout, b.stdout, "{cmd} {name}");
    }
}

#[test]
fn every_demo_behaves_as_expected() {
    let list = stdout(&ctleak(&["demo"]));
    let names: Vec<&str> = list.lines().map(|l| l.split_whitespace().next().unwrap()).collect();
    assert!(names.len() >= 8);
    for n in names {
        let o = ctleak(&["demo", n]);
        assert_eq!(code(&o), 0, "{}", stdout(&o));
        assert!(!stdout(&o).contains("UNEXPECTED"));
    }
    assert_eq!(code(&ctleak(&["demo", "nosuch"])), 2);
}
