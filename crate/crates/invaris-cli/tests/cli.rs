//! End-to-end tests of the command-line interface: happy paths, exit
//! codes, persistence, and output determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_invaris"))
}

fn programs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../programs")
}

fn program(name: &str) -> PathBuf {
    programs_dir().join(name)
}

fn temp_file(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("invaris-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn train_into(memory: &Path) {
    let out = bin()
        .arg("train")
        .arg(program("train_add_two.whl"))
        .args(["--fragment", "x := x + 2", "--template", "x = x0 + 2*n"])
        .arg("--memory")
        .arg(memory)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
}

#[test]
fn run_prints_a_trace_document() {
    let out = bin()
        .arg("run")
        .arg(program("gcd_lcm.whl"))
        .args(["a=6", "b=4"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["exit"]["x"], "2");
    assert_eq!(doc["exit"]["y"], "2");
    assert_eq!(doc["snapshots"].as_array().unwrap().len(), 6);
}

#[test]
fn train_then_retrain_is_idempotent() {
    let memory = temp_file("idempotent.json");
    train_into(&memory);
    let first = std::fs::read_to_string(&memory).unwrap();
    train_into(&memory);
    let second = std::fs::read_to_string(&memory).unwrap();
    assert_eq!(first, second);
}

#[test]
fn train_with_a_wrong_template_cites_the_oracle() {
    let memory = temp_file("wrong-template.json");
    let out = bin()
        .arg("train")
        .arg(program("train_add_two.whl"))
        .args(["--fragment", "x := x + 2", "--template", "x = x0 + 3*n"])
        .arg("--memory")
        .arg(&memory)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(5));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("oracle"), "{err}");
    assert!(err.contains("n = 1"), "{err}");
}

#[test]
fn predict_emits_the_gcd_shape_and_learns() {
    let memory = temp_file("predict-gcd.json");
    train_into(&memory);
    let out = bin()
        .arg("predict")
        .arg(program("gcd_lcm.whl"))
        .arg("--memory")
        .arg(&memory)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains(
        "A*x + B*v + C*y + D*u + E*x*y + F*y^2 + G*u*y + H*v*y + J*u*x + K*u^2 + L*u*v + M*x^2 + N*v*x + P*v^2 + Q = 0"
    ), "{text}");
    assert!(text.contains("shape-json:"));

    // The memory grew by the four loop fragments.
    let mem = bin().arg("memory").arg(&memory).output().unwrap();
    assert!(stdout(&mem).starts_with("5 cells"), "{}", stdout(&mem));

    // A second prediction is answered entirely from memory.
    let out = bin()
        .arg("predict")
        .arg(program("gcd_lcm.whl"))
        .arg("--memory")
        .arg(&memory)
        .arg("--json")
        .output()
        .unwrap();
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    for frag in doc["fragments"].as_array().unwrap() {
        assert_eq!(frag["stats"]["memory_hit"], true, "{frag}");
        assert_eq!(frag["stats"]["iterations"], 0);
    }
}

#[test]
fn solve_recovers_the_gcd_invariant_end_to_end() {
    let memory = temp_file("solve-gcd.json");
    train_into(&memory);
    let out = bin()
        .arg("solve")
        .arg(program("gcd_lcm.whl"))
        .arg("--memory")
        .arg(&memory)
        .args(["--range", "1,8"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = stdout(&out);
    assert!(text.contains("v*y + u*x - a*b = 0"), "{text}");
    assert!(text.contains("held-out check passed"), "{text}");
    assert!(text.contains("postcondition holds at exit"), "{text}");
}

#[test]
fn solve_accepts_a_shape_file_and_check_verifies_its_output() {
    let out = bin()
        .arg("solve")
        .arg(program("multiplication.whl"))
        .arg("--shape")
        .arg(program("multiplication_shape.json"))
        .arg("--json")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["loops"][0]["invariant_text"][0], "z + x*y - A*B = 0");
    assert_eq!(doc["loops"][0]["holdout_ok"], true);
    assert_eq!(doc["loops"][0]["postcondition_ok"], true);

    // Round-trip the invariant document through `check`.
    let inv_path = temp_file("mult-invariant.json");
    std::fs::write(
        &inv_path,
        serde_json::to_string_pretty(&doc["loops"][0]["invariants"][0]).unwrap(),
    )
    .unwrap();
    let out = bin()
        .arg("check")
        .arg(program("multiplication.whl"))
        .arg("--invariant")
        .arg(&inv_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert!(stdout(&out).contains("holds"), "{}", stdout(&out));
}

#[test]
fn check_rejects_a_wrong_invariant_with_exit_five() {
    let inv_path = temp_file("wrong-invariant.json");
    std::fs::write(
        &inv_path,
        serde_json::json!({
            "loop": 0,
            "terms": [
                {"label": "x", "monomial": [{"kind": "var_pow", "var": "x", "power": 1}], "num": "1", "den": "1"},
                {"label": "1", "monomial": [{"kind": "param", "term": "1"}], "num": "-1", "den": "1"},
            ],
        })
        .to_string(),
    )
    .unwrap();
    let out = bin()
        .arg("check")
        .arg(program("gcd_lcm.whl"))
        .arg("--invariant")
        .arg(&inv_path)
        .args(["--range", "1,8"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(5));
    assert!(stdout(&out).contains("VIOLATED"));
}

#[test]
fn insufficient_shapes_exit_four() {
    let shape_path = temp_file("tiny-shape.json");
    std::fs::write(
        &shape_path,
        r#"{"monomials": [[{"kind": "var_pow", "var": "x", "power": 1}]], "includes_constant": false}"#,
    )
    .unwrap();
    let out = bin()
        .arg("solve")
        .arg(program("multiplication.whl"))
        .arg("--shape")
        .arg(&shape_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{out:?}");
}

#[test]
fn program_parse_errors_exit_two() {
    let bad = temp_file("bad.whl");
    std::fs::write(&bad, "{ a > 0 }\nx := 3.14;\n").unwrap();
    let out = bin().arg("run").arg(&bad).arg("a=1").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-integer literal"));
}

#[test]
fn missing_files_exit_one() {
    let out = bin().arg("run").arg("/nonexistent.whl").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn loop_free_programs_cannot_be_solved() {
    let straight = temp_file("straight.whl");
    std::fs::write(&straight, "{ a > 0 }\nx := a;\n").unwrap();
    let out = bin().arg("solve").arg(&straight).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no loops"));
}

#[test]
fn memory_on_a_missing_file_reports_zero_cells() {
    let out = bin()
        .arg("memory")
        .arg(temp_file("never-written.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).starts_with("0 cells"));
}

#[test]
fn predict_and_solve_are_byte_deterministic() {
    let memory_a = temp_file("det-a.json");
    let memory_b = temp_file("det-b.json");
    train_into(&memory_a);
    train_into(&memory_b);
    assert_eq!(
        std::fs::read(&memory_a).unwrap(),
        std::fs::read(&memory_b).unwrap()
    );

    let run_once = |memory: &Path| {
        let predict = bin()
            .arg("predict")
            .arg(program("exponentiation.whl"))
            .arg("--memory")
            .arg(memory)
            .output()
            .unwrap();
        let solve = bin()
            .arg("solve")
            .arg(program("exponentiation.whl"))
            .arg("--memory")
            .arg(memory)
            .output()
            .unwrap();
        (stdout(&predict), stdout(&solve))
    };
    assert_eq!(run_once(&memory_a), run_once(&memory_b));

    // Save -> load -> save keeps the memory file byte-identical.
    let before = std::fs::read(&memory_a).unwrap();
    let out = bin().arg("memory").arg(&memory_a).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(before, std::fs::read(&memory_a).unwrap());
}
