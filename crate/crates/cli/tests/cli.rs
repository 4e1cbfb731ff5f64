use std::path::{Path, PathBuf};
use std::process::{Command as Process, Output};

use serde_json::Value;

use qinv::harness;
use qinv::interp;
use qinv::lang;

fn programs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../programs")
}

fn program(name: &str) -> PathBuf {
    programs().join(name)
}

fn schema(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../schemas")
        .join(name);
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn qinv(args: &[&str]) -> Output {
    Process::new(env!("CARGO_BIN_EXE_qinv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn assert_valid(schema_name: &str, doc: &Value) {
    let schema = schema(schema_name);
    let compiled = jsonschema::JSONSchema::compile(&schema).expect("schema compiles");
    if let Err(errors) = compiled.validate(doc) {
        let msgs: Vec<String> = errors
            .map(|e| format!("{} at {}", e, e.instance_path))
            .collect();
        panic!("{schema_name} rejects document: {msgs:?}\n{doc:#}");
    };
}

#[test]
fn analyze_example2_table() {
    let out = qinv(&["analyze", path_str(&program("example2.wh"))]);
    assert_eq!(out.status.code(), Some(0));
    let expected = "\
loop 0 at 1:1-6:2: peel 2, star fixpoint 1 (bound 2)
    #  raw  eff  chunk
    0    ∞    ∞  use(b);
    1    2    2  b = b + 1;
    2    1    2  b = y + y;
    3    ∞    ∞  i = i + 1;
";
    assert_eq!(stdout(&out), expected);
}

#[test]
fn analyze_example3_marks_inner_loop_degree_one() {
    let out = qinv(&["analyze", path_str(&program("example3.wh"))]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let line = text
        .lines()
        .find(|l| l.contains("while (j <= m)"))
        .expect("inner loop chunk listed");
    let cols: Vec<&str> = line.split_whitespace().collect();
    assert_eq!(&cols[..3], ["2", "1", "1"], "{line}");
}

#[test]
fn analyze_json_matches_schema() {
    for name in [
        "example2.wh",
        "example3.wh",
        "no_invariants.wh",
        "divzero.wh",
    ] {
        let out = qinv(&["analyze", "--json", path_str(&program(name))]);
        assert_eq!(out.status.code(), Some(0), "{name}");
        let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
        assert_valid("analysis-report.schema.json", &doc);
    }
    let out = qinv(&["analyze", "--json", path_str(&program("example2.wh"))]);
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let degrees: Vec<i64> = doc["loops"][0]["chunks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["raw_degree"].as_i64().unwrap())
        .collect();
    assert_eq!(degrees, [-1, 2, 1, -1]);
    assert_eq!(doc["loops"][0]["peel_count"], 2);
    assert_eq!(
        doc["loops"][0]["relation"]["vars"],
        serde_json::json!(["i", "n", "b", "y"])
    );
}

#[test]
fn analyze_empty_program() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("empty.wh");
    std::fs::write(&file, "").unwrap();
    let out = qinv(&["analyze", path_str(&file)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), "");
    let out = qinv(&["analyze", "--json", path_str(&file)]);
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["loops"], serde_json::json!([]));
    assert_valid("analysis-report.schema.json", &doc);
}

#[test]
fn analyze_writes_dot_files() {
    let dir = tempfile::tempdir().unwrap();
    let dot_dir = dir.path().join("dot");
    let out = qinv(&[
        "analyze",
        path_str(&program("example3.wh")),
        "--dot",
        path_str(&dot_dir),
    ]);
    assert_eq!(out.status.code(), Some(0));
    for id in [0, 1] {
        let text = std::fs::read_to_string(dot_dir.join(format!("loop{id}.dot"))).unwrap();
        assert!(text.starts_with("digraph"), "{text}");
    }
}

#[test]
fn parse_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.wh");
    std::fs::write(&file, "x = ;\n").unwrap();
    for cmd in ["analyze", "optimize", "run"] {
        let out = qinv(&[cmd, path_str(&file)]);
        assert_eq!(out.status.code(), Some(1), "{cmd}");
        assert!(stderr(&out).contains("1:5"), "{}", stderr(&out));
    }
    let out = qinv(&["analyze", "/nonexistent/file.wh"]);
    assert_eq!(out.status.code(), Some(1));
    let out = qinv(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(1));
}

fn optimize_to_file(name: &str) -> (String, String) {
    let dir = tempfile::tempdir().unwrap();
    let dest = dir.path().join("out.wh");
    let out = qinv(&["optimize", path_str(&program(name)), "-o", path_str(&dest)]);
    assert_eq!(out.status.code(), Some(0));
    (stdout(&out), std::fs::read_to_string(dest).unwrap())
}

#[test]
fn optimize_example2_leaves_nothing_to_peel() {
    let (summary, text) = optimize_to_file("example2.wh");
    assert_eq!(summary, "loop 0 at 1:1-6:2: peeled 2 times\n");
    let prog = lang::parse(&text).unwrap();
    let loops = qinv::analysis::analyze_program(&prog).unwrap();
    assert_eq!(loops.len(), 1);
    assert!(loops.iter().all(|a| a.peel_count == 0));
}

#[test]
fn optimize_without_invariants_is_identity() {
    let (_, text) = optimize_to_file("no_invariants.wh");
    let src = std::fs::read_to_string(program("no_invariants.wh")).unwrap();
    assert_eq!(text, lang::pretty(&lang::parse(&src).unwrap()));
}

#[test]
fn optimize_example3_is_equivalent() {
    let (_, text) = optimize_to_file("example3.wh");
    let optimized = lang::parse(&text).unwrap();
    let src = std::fs::read_to_string(program("example3.wh")).unwrap();
    let original = lang::parse(&src).unwrap();
    let stores = harness::gen_stores(&original, 3, 0, 100);
    assert!(interp::equivalent(&original, &optimized, &stores, 100_000).is_equivalent());
}

#[test]
fn optimize_to_stdout() {
    let out = qinv(&["optimize", path_str(&program("example2.wh"))]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(lang::parse(&text).is_ok());
    assert!(stderr(&out).contains("peeled 2 times"));
}

#[test]
fn run_example2_trace() {
    let out = qinv(&[
        "run",
        path_str(&program("example2.wh")),
        "--input",
        "b=5",
        "y=3",
        "n=4",
        "--count-steps",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(
        stdout(&out),
        "use@b: 5\nuse@b: 6\nuse@b: 6\nuse@b: 6\nb = 6\ni = 4\nn = 4\ny = 3\nsteps: 21\n"
    );
}

#[test]
fn run_exit_codes() {
    let out = qinv(&[
        "run",
        path_str(&program("example2.wh")),
        "--input",
        "n=3",
        "--fuel",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let out = qinv(&["run", path_str(&program("divzero.wh"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("div_by_zero"));
    let out = qinv(&["run", path_str(&program("divzero.wh")), "--input", "z=x"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_example3_slopes() {
    let out = qinv(&[
        "bench",
        path_str(&program("example3.wh")),
        "--values",
        "50,100,200",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let rows: Vec<(u64, u64)> = text
        .lines()
        .skip(1)
        .take(3)
        .map(|l| {
            let c: Vec<&str> = l.split_whitespace().collect();
            assert_eq!(c[3], "same", "{l}");
            (c[1].parse().unwrap(), c[2].parse().unwrap())
        })
        .collect();
    assert!(
        rows.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1),
        "{text}"
    );
    let slope = |prefix: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix(prefix))
            .unwrap()
            .trim()
            .parse()
            .unwrap()
    };
    assert!(
        (slope("log-log slope original:") - 2.0).abs() <= 0.1,
        "{text}"
    );
    assert!(
        (slope("log-log slope optimized:") - 1.0).abs() <= 0.1,
        "{text}"
    );
}

#[test]
fn difftest_empty_campaign() {
    let out = qinv(&["difftest", "--count", "0"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), "");
}

#[test]
fn difftest_is_deterministic_and_valid() {
    let a = qinv(&["difftest", "--seed", "42", "--count", "1000"]);
    let b = qinv(&["difftest", "--seed", "42", "--count", "1000"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert_eq!(text.lines().count(), 1000);
    for (i, line) in text.lines().enumerate() {
        let doc: Value = serde_json::from_str(line).unwrap();
        assert_eq!(doc["index"], i);
        assert_eq!(doc["status"], "ok", "{line}");
        if i % 100 == 0 {
            assert_valid("difftest-record.schema.json", &doc);
        }
    }
}

#[test]
fn difftest_reports_planted_failures() {
    let out = qinv(&[
        "difftest",
        "--seed",
        "42",
        "--count",
        "100",
        "--strategy",
        "literal",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let fails: Vec<Value> = stdout(&out)
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|d| d["status"] == "fail")
        .collect();
    assert!(!fails.is_empty());
    for doc in &fails {
        assert_valid("difftest-record.schema.json", doc);
        assert!(doc["witness"]["reason"].is_string());
        assert!(lang::parse(doc["program"].as_str().unwrap()).is_ok());
    }
}
