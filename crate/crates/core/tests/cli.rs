mod common;

use std::path::Path;
use std::process::{Command, Output};

use capref::backends::server::{MockOptions, MockServer};
use capref::pipeline::RunRecord;
use serde_json::Value;

use common::fixture;

fn capref(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capref"))
        .args(args)
        .env_remove("CAPREF_BACKEND_EMBEDDER")
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn json_lines(out: &Output) -> Vec<Value> {
    stdout(out).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn eval_on_identity_predictions_scores_the_maximum() {
    let pred = fixture("eval/identity.jsonl");
    let refs = fixture("eval/identity_refs.jsonl");
    let out = capref(&["eval", "--pred", path(&pred), "--refs", path(&refs)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let lines = json_lines(&out);
    assert_eq!(lines[0]["metric"], "bleu4");
    assert_eq!(lines[0]["score"].as_f64(), Some(100.0));
    assert_eq!(lines[1]["metric"], "cider_d");
    assert!((lines[1]["score"].as_f64().unwrap() - 10.0).abs() < 1e-9);
}

#[test]
fn missing_input_is_a_user_error() {
    let out = capref(&["ingest", "--format", "image_list", "--paths", "/nonexistent/list.txt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("error[E_IO]"), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
}

#[test]
fn bad_arguments_exit_with_usage_error() {
    let out = capref(&["ingest", "--format", "parquet", "--paths", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("error[E_USAGE]"));
    let out = capref(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("sweep"));
}

#[test]
fn ingest_writes_a_canonical_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let m = |f: &str| fixture(&format!("multi30k/{f}"));
    let (index, c1, c2) = (m("index.txt"), m("train.1.de"), m("train.2.de"));
    let out = capref(&[
        "ingest",
        "--format",
        "multi30k",
        "--language",
        "de",
        "--paths",
        path(&index),
        path(&c1),
        path(&c2),
        "--out",
        path(dir.path()),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary = &json_lines(&out)[0];
    assert_eq!(summary["image_count"], 3);
    assert_eq!(summary["caption_count"], 6);
    let manifest = summary["manifest"].as_str().unwrap();

    let again = capref(&[
        "ingest",
        "--format",
        "canonical",
        "--paths",
        manifest,
        "--out",
        path(dir.path()),
    ]);
    assert!(again.status.success(), "{}", stderr(&again));
    assert_eq!(json_lines(&again)[0]["content_digest"], summary["content_digest"]);
}

#[test]
fn run_against_the_mock_writes_a_record() {
    let server = MockServer::start(MockOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = capref(&[
        "mock-data",
        "--out",
        path(dir.path()),
        "--backend-url",
        server.url(),
        "--base",
        "200",
        "--additional",
        "100",
        "--extension",
        "50",
        "--test",
        "60",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let config = dir.path().join("experiment.json");
    assert!(config.exists());

    let record_path = dir.path().join("re.json");
    let out = capref(&[
        "run",
        "--config",
        path(&config),
        "--variant",
        "re",
        "--seed",
        "1",
        "--n",
        "50",
        "--out",
        path(&record_path),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let printed: RunRecord = serde_json::from_str(&stdout(&out)).unwrap();
    let written: RunRecord = serde_json::from_str(&std::fs::read_to_string(&record_path).unwrap()).unwrap();
    assert_eq!(printed, written);
    assert_eq!((written.variant.as_str(), written.n, written.seed), ("re", 50, 1));
    assert!(!written.failed());
    assert!(written.scores.contains_key("bleu4") && written.scores.contains_key("cider_d"));

    let plan = capref(&[
        "plan",
        "--config",
        path(&config),
        "--variant",
        "re",
        "--seed",
        "1",
        "--n",
        "50",
    ]);
    assert!(plan.status.success(), "{}", stderr(&plan));
    let plan: Value = serde_json::from_str(&stdout(&plan)).unwrap();
    assert_eq!(plan["digest"].as_str().unwrap(), written.plan_digest);
}

#[test]
fn run_with_unknown_variant_fails_planning() {
    let dir = tempfile::tempdir().unwrap();
    let out = capref(&[
        "mock-data",
        "--out",
        path(dir.path()),
        "--base",
        "20",
        "--additional",
        "5",
        "--extension",
        "5",
        "--test",
        "5",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let config = dir.path().join("experiment.json");
    let out = capref(&["plan", "--config", path(&config), "--variant", "h-tran+IN"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("error[E_PLAN]"), "{}", stderr(&out));
}

#[test]
fn report_renders_the_golden_tables() {
    let records = fixture("records.jsonl");
    let refs = fixture("references.json");
    let golden = |name: &str| std::fs::read_to_string(fixture(&format!("golden/{name}"))).unwrap();

    let out = capref(&[
        "--pretty",
        "report",
        "--records",
        path(&records),
        "--table",
        "grid",
        "--cider-percent",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out), golden("grid.md"));

    let out = capref(&[
        "--pretty",
        "report",
        "--records",
        path(&records),
        "--table",
        "comparison",
        "--references",
        path(&refs),
        "--metrics",
        "bleu4,cider_d,bert_score",
        "--cider-percent",
        "--format",
        "html",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(stdout(&out), golden("comparison.html"));

    let out = capref(&["report", "--records", path(&records)]);
    let lines = json_lines(&out);
    assert_eq!(lines.len(), 2 * 8 * 3 * 3);
    assert_eq!(lines[0]["variant"], "base");
}

#[test]
fn analysis_commands_read_fixture_files() {
    let out = capref(&[
        "analyze",
        "tally",
        "--labels",
        path(&fixture("change_labels_100.jsonl")),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = &json_lines(&out)[0];
    assert_eq!(table["row_totals"], serde_json::json!([51, 18, 15, 29, 9]));
    assert_eq!(table["column_totals"], serde_json::json!([73, 43, 6, 15]));

    let out = capref(&[
        "analyze",
        "stats",
        "--pairs",
        path(&fixture("reformulation_pairs.jsonl")),
        "--unit",
        "words",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let stats = &json_lines(&out)[0];
    assert_eq!(stats["unchanged_fraction"].as_f64(), Some(0.25));
    assert_eq!(stats["mean_edit_distance"].as_f64(), Some(1.5));

    let dir = tempfile::tempdir().unwrap();
    let stylized = dir.path().join("stylized.txt");
    let candidates = dir.path().join("candidates.txt");
    std::fs::write(&stylized, "a happy dog runs joyfully on the grass\n").unwrap();
    std::fs::write(&candidates, "a cat sleeps\na dog runs on the grass\na dog on a sofa\n").unwrap();
    let out = capref(&[
        "analyze",
        "pair",
        "--stylized",
        path(&stylized),
        "--candidates",
        path(&candidates),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains('1'), "{}", stdout(&out));
}

#[test]
fn humaneval_reports_sign_test_and_agreement() {
    let out = capref(&["humaneval", "--judgments", path(&fixture("judgments.jsonl"))]);
    assert!(out.status.success(), "{}", stderr(&out));
    let r = &json_lines(&out)[0];
    assert_eq!(
        (r["count_a"].as_u64(), r["count_b"].as_u64(), r["count_tie"].as_u64()),
        (Some(21), Some(4), Some(5))
    );
    // 2 * (C(25,21) + ... + C(25,25)) / 2^25
    let expected = 2.0 * 15276.0 / 33554432.0;
    assert!((r["p_value"].as_f64().unwrap() - expected).abs() < 1e-12);
    assert_eq!(r["significant"], true);
    assert!(r["fleiss_kappa"].as_f64().is_some());
}

#[test]
fn bert_score_uses_the_embedder_and_optional_baseline() {
    let server = MockServer::start(MockOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred.jsonl");
    std::fs::write(
        &pred,
        "{\"image_id\": \"1\", \"text\": \"a woman rides a horse in the snow\"}\n\
         {\"image_id\": \"2\", \"text\": \"two cats sleep on a sofa\"}\n\
         {\"image_id\": \"3\", \"text\": \"a boy holds a blue ball\"}\n",
    )
    .unwrap();
    let refs = fixture("eval/refs.jsonl");
    let score = |extra: &[&str]| {
        let mut args = vec![
            "eval",
            "--pred",
            path(&pred),
            "--refs",
            path(&refs),
            "--metrics",
            "bert_score",
            "--embedder",
            server.url(),
        ];
        args.extend_from_slice(extra);
        let out = capref(&args);
        assert!(out.status.success(), "{}", stderr(&out));
        json_lines(&out)[0]["score"].as_f64().unwrap()
    };
    let plain = score(&[]);
    let rescaled = score(&["--bert-baseline", "0.5"]);
    assert!(plain < 100.0 && plain > 0.0, "{plain}");
    // precision and recall are rescaled before they are combined
    assert!(rescaled < plain, "{plain} {rescaled}");

    let out = capref(&[
        "eval",
        "--pred",
        path(&pred),
        "--refs",
        path(&refs),
        "--metrics",
        "bert_score",
    ]);
    assert_eq!(out.status.code(), Some(1));
}
