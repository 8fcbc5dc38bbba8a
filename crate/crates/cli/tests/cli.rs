use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn alti() -> Command {
    Command::new(env!("CARGO_BIN_EXE_alti"))
}

fn run(args: &[&str]) -> Output {
    alti().args(args).output().expect("spawn alti")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
    model: PathBuf,
    source: PathBuf,
    target: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let model = dir.path().join("toy.altiw");
        let out = run(&["toy-model", "--seed", "5", "--layers", "3", "--out", s(&model)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let source = dir.path().join("src.txt");
        let target = dir.path().join("tgt.txt");
        std::fs::write(&source, "5 9 3\n7 7+8 12\n4 6 2 9\n").unwrap();
        std::fs::write(&target, "4 6\n9 10+11 2\n3 3 5\n").unwrap();
        Self {
            dir,
            model,
            source,
            target,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

#[test]
fn attribute_report_rows_conserve_mass() {
    let f = Fixture::new();
    let out = run(&[
        "--model",
        s(&f.model),
        "--json",
        "attribute",
        "--source",
        s(&f.source),
        "--target",
        s(&f.target),
    ]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let sentences = v["sentences"].as_array().unwrap();
    assert_eq!(sentences.len(), 3);
    for sent in sentences {
        let src = sent["source_relevance"].as_array().unwrap();
        let tgt = sent["target_relevance"].as_array().unwrap();
        let predicted = sent["predicted_tokens"].as_array().unwrap();
        assert_eq!(src.len(), predicted.len());
        assert_eq!(
            src[0].as_array().unwrap().len(),
            sent["source_tokens"].as_array().unwrap().len()
        );
        for (a, b) in src.iter().zip(tgt) {
            let total: f64 = a
                .as_array()
                .unwrap()
                .iter()
                .chain(b.as_array().unwrap())
                .map(|x| x.as_f64().unwrap())
                .sum();
            assert!((total - 1.0).abs() < 1e-5);
        }
    }
    assert_eq!(v["model"]["file"], "toy.altiw");
}

#[test]
fn missing_model_fails_without_output() {
    let f = Fixture::new();
    let report = f.path("report.json");
    let out = run(&[
        "--model",
        s(&f.path("absent.altiw")),
        "attribute",
        "--source",
        s(&f.source),
        "--out",
        s(&report),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    assert!(!report.exists());
}

#[test]
fn bad_corpus_fails_without_output() {
    let f = Fixture::new();
    let bad = f.path("bad.txt");
    std::fs::write(&bad, "1 2\n3 x 4\n").unwrap();
    let report = f.path("report.json");
    let out = run(&[
        "--model",
        s(&f.model),
        "attribute",
        "--source",
        s(&bad),
        "--out",
        s(&report),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert!(!report.exists());
}

#[test]
fn usage_errors_exit_two() {
    let f = Fixture::new();
    let base = [
        "--model",
        s(&f.model),
        "evaluate-aer",
        "--source",
        s(&f.source),
        "--target",
        s(&f.target),
        "--gold",
        s(&f.source),
    ];
    let mut args = base.to_vec();
    args.extend(["--method", "saliency"]);
    assert_eq!(run(&args).status.code(), Some(2));
    assert_eq!(run(&["attribute", "--source", s(&f.source)]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn gold_equal_to_extraction_scores_zero() {
    let f = Fixture::new();
    for method in ["alti", "attention", "norm-f", "norm-t"] {
        let gold = f.path("gold_any.txt");
        std::fs::write(&gold, "1-1\n1-1\n1-1\n").unwrap();
        let common = [
            "--model",
            s(&f.model),
            "--json",
            "evaluate-aer",
            "--source",
            s(&f.source),
            "--target",
            s(&f.target),
        ];
        let mut first = common.to_vec();
        first.extend(["--gold", s(&gold), "--method", method]);
        let out = run(&first);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["layer"], 2);
        let lines: Vec<String> = v["sentences"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x["alignment"].as_str().unwrap().to_string())
            .collect();
        std::fs::write(&gold, lines.join("\n") + "\n").unwrap();
        let again = run(&first);
        let v: Value = serde_json::from_slice(&again.stdout).unwrap();
        assert_eq!(v["mean_aer"], 0.0, "{method}");
        assert_eq!(v["pooled_aer"], 0.0, "{method}");
    }
}

#[test]
fn corpus_length_mismatch_is_a_data_error() {
    let f = Fixture::new();
    let gold = f.path("gold.txt");
    std::fs::write(&gold, "1-1\n").unwrap();
    let out = run(&[
        "--model",
        s(&f.model),
        "evaluate-aer",
        "--source",
        s(&f.source),
        "--target",
        s(&f.target),
        "--gold",
        s(&gold),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn out_file_and_csv_dir_are_written() {
    let f = Fixture::new();
    let report = f.path("r.json");
    let csv = f.path("heat");
    let out = run(&[
        "--model",
        s(&f.model),
        "--json",
        "--out",
        s(&report),
        "attribute",
        "--source",
        s(&f.source),
        "--csv-dir",
        s(&csv),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["sentences"][0]["mode"], "greedy");
    for i in 1..=3 {
        let text = std::fs::read_to_string(csv.join(format!("sentence_{i:04}.csv"))).unwrap();
        assert!(text.starts_with(",x1="));
    }
}

#[test]
fn other_commands_run() {
    let f = Fixture::new();
    let m = s(&f.model);
    for args in [
        vec![
            "--model",
            m,
            "--json",
            "analyze-eos",
            "--source",
            s(&f.source),
            "--target",
            s(&f.target),
        ],
        vec![
            "--model",
            m,
            "detect-hallucination",
            "--source",
            s(&f.source),
            "--reference",
            s(&f.target),
            "--max-len",
            "6",
        ],
        vec![
            "--model",
            m,
            "--precision",
            "f64",
            "--layer",
            "2",
            "inspect-encoder",
            "--source",
            s(&f.source),
        ],
    ] {
        let out = run(&args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(!out.stdout.is_empty());
    }
    let out = run(&[
        "--model",
        m,
        "--layer",
        "9",
        "inspect-encoder",
        "--source",
        s(&f.source),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
