//! Runs the `chartext` binary against the fixture corpus.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use chartext_core::testkit::{Case, CASES};
use serde_json::Value;

fn chartext(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chartext"))
        .args(args)
        .env_remove("BACKEND_KIND")
        .env_remove("BACKEND_FIXTURES")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run_case(case: &Case, granularity: &str, out: &Path) -> Output {
    let doc = case.dir().join("document.txt");
    let (offset, length) = case.span();
    chartext(&[
        "run",
        "--doc",
        path(&doc),
        "--span",
        &format!("{offset}:{length}"),
        "--backend",
        "mock",
        "--fixtures",
        path(&case.pack_dir()),
        "--granularity",
        granularity,
        "--out",
        path(out),
    ])
}

fn schema(name: &str) -> jsonschema::Validator {
    let out = chartext(&["schema", name]);
    assert_eq!(code(&out), 0);
    let schema: Value = serde_json::from_slice(&out.stdout).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

fn assert_valid(validator: &jsonschema::Validator, file: &Path) {
    let instance: Value = serde_json::from_str(&fs::read_to_string(file).unwrap()).unwrap();
    let errors: Vec<String> = validator.iter_errors(&instance).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{}: {errors:#?}", file.display());
}

#[test]
fn every_case_writes_schema_valid_outputs() {
    let (table, spec, trace) = (schema("annotated-table"), schema("chart-spec"), schema("trace"));
    for case in CASES {
        let dir = tempfile::tempdir().unwrap();
        let out = run_case(&case, "fine", dir.path());
        assert_eq!(code(&out), 0, "{}: {}", case.name, String::from_utf8_lossy(&out.stderr));
        assert_valid(&table, &dir.path().join("table-0.json"));
        assert_valid(&spec, &dir.path().join("spec-0.json"));
        assert_valid(&trace, &dir.path().join("trace.json"));
        let svg = fs::read_to_string(dir.path().join("chart-0.svg")).unwrap();
        assert!(svg.starts_with("<svg"), "{}", case.name);
    }
}

#[test]
fn both_granularities_get_their_own_directories() {
    let case = Case::by_name("gdp").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = run_case(&case, "both", dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for level in ["fine", "coarse"] {
        for file in ["table-0.json", "spec-0.json", "chart-0.svg"] {
            assert!(dir.path().join(level).join(file).is_file(), "{level}/{file}");
        }
    }
    assert!(dir.path().join("trace.json").is_file());
    assert!(!dir.path().join("table-0.json").exists());
}

#[test]
fn unrecorded_statement_exits_with_backend_code_and_keeps_the_trace() {
    let case = Case::by_name("gdp").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = chartext(&[
        "run",
        "--doc",
        path(&case.dir().join("document.txt")),
        "--statement",
        "Nothing in the pack matches this.",
        "--backend",
        "mock",
        "--fixtures",
        path(&case.pack_dir()),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    let trace: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("trace.json")).unwrap()).unwrap();
    assert_eq!(trace["entries"][0]["validation_outcome"]["status"], "backend_error");
}

#[test]
fn input_errors_exit_with_code_two() {
    let case = Case::by_name("gdp").unwrap();
    let doc = case.dir().join("document.txt");
    let dir = tempfile::tempdir().unwrap();
    let base = ["run", "--doc", path(&doc), "--out", path(dir.path())];

    let no_fixtures = chartext(&[&base[..], &["--statement", "x", "--backend", "mock"]].concat());
    assert_eq!(code(&no_fixtures), 2);

    let bad_span = chartext(&[&base[..], &["--span", "999999:4", "--backend", "mock", "--fixtures", "x"]].concat());
    assert_eq!(code(&bad_span), 2);

    let empty = chartext(&[&base[..], &["--statement", "  ", "--fixtures", path(&case.pack_dir())]].concat());
    assert_eq!(code(&empty), 2, "{}", String::from_utf8_lossy(&empty.stderr));

    assert_eq!(code(&chartext(&["run", "--doc", path(&doc)])), 2);
}

#[test]
fn missing_document_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = chartext(&[
        "run",
        "--doc",
        path(&dir.path().join("nope.txt")),
        "--statement",
        "x",
        "--fixtures",
        path(dir.path()),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn parse_quantity_prints_json() {
    let out = chartext(&["parse-quantity", "between 4% and 5%"]);
    assert_eq!(code(&out), 0);
    let q: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(q["kind"], "closed_range");
    assert_eq!(q["value"], 4.5);
    assert_eq!(q["unit"], "percent");

    assert_eq!(code(&chartext(&["parse-quantity", "several"])), 2);
}

#[test]
fn recommend_and_render_work_on_written_artifacts() {
    let case = Case::by_name("presidents").unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_case(&case, "fine", dir.path())), 0);
    let table = dir.path().join("table-0.json");

    let out = chartext(&["recommend", path(&table)]);
    assert_eq!(code(&out), 0);
    let choice: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(choice["chart_type"], "bar");
    assert_eq!(choice["provenance"], "rule");

    // A pie over several series is rejected in favour of the rule choice.
    let mut suggestion = choice.clone();
    suggestion["chart_type"] = "pie".into();
    suggestion["provenance"] = "llm".into();
    let suggestion_path = dir.path().join("suggestion.json");
    fs::write(&suggestion_path, suggestion.to_string()).unwrap();
    let out = chartext(&["recommend", path(&table), "--suggestion", path(&suggestion_path)]);
    let reconciled: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(reconciled, choice);
    assert_valid(&schema("chart-choice"), &suggestion_path);

    let rendered = dir.path().join("again.svg");
    let out = chartext(&["render", path(&dir.path().join("spec-0.json")), "--out", path(&rendered)]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(&rendered).unwrap(), fs::read(dir.path().join("chart-0.svg")).unwrap());

    let stdout = chartext(&["render", path(&dir.path().join("spec-0.json"))]);
    assert_eq!(stdout.stdout, fs::read(&rendered).unwrap());
}

#[test]
fn record_fixtures_reproduces_the_committed_pack() {
    let case = Case::by_name("religion").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (offset, length) = case.span();
    let out = chartext(&[
        "record-fixtures",
        "--doc",
        path(&case.dir().join("document.txt")),
        "--span",
        &format!("{offset}:{length}"),
        "--script",
        path(&case.dir().join("script.json")),
        "--granularity",
        "fine",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut names: Vec<_> = fs::read_dir(case.pack_dir()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for name in names {
        assert_eq!(fs::read(dir.path().join(&name)).unwrap(), fs::read(case.pack_dir().join(&name)).unwrap());
    }
}
