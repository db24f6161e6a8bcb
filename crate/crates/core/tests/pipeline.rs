mod common;

use std::fs;

use capref::backends::server::{MockOptions, MockServer};
use capref::backends::BackendKind;
use capref::pipeline::report::machine_report;
use capref::pipeline::{
    plan_variant, run, sweep, Experiment, RunRecord, StageKind, StageStatus, VariantName, VariantSpec,
};

fn small_experiment(dir: &std::path::Path, server: &MockServer) -> capref::pipeline::ExperimentConfig {
    let mut config = common::toy_config(dir, server, vec![0], Some(vec![50]));
    config.variants = Some(vec!["re".into()]);
    config
}

fn only(records: Vec<RunRecord>) -> RunRecord {
    assert_eq!(records.len(), 1);
    records.into_iter().next().unwrap()
}

fn status_of(record: &RunRecord, kind: StageKind) -> StageStatus {
    record.stages.iter().find(|s| s.kind == kind).unwrap().status
}

#[test]
fn tampered_stage_output_is_detected_and_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let server = MockServer::start(MockOptions::default()).unwrap();
    let exp = Experiment::open(small_experiment(dir.path(), &server)).unwrap();
    let first = only(sweep(&exp).unwrap());
    assert!(!first.failed());
    assert!(first.stages.iter().all(|s| s.status == StageStatus::Miss));

    let target = first.stages.iter().find(|s| s.kind == StageKind::Reformulate).unwrap();
    let output = exp.store.entry_dir(&target.cache_key).join("output.jsonl");
    let mut bytes = fs::read(&output).unwrap();
    bytes.extend_from_slice(b"{\"tampered\":true}\n");
    fs::write(&output, bytes).unwrap();

    let second = only(sweep(&exp).unwrap());
    assert_eq!(status_of(&second, StageKind::Reformulate), StageStatus::Miss);
    assert_eq!(status_of(&second, StageKind::TrainBase), StageStatus::Hit);
    assert_eq!(status_of(&second, StageKind::Evaluate), StageStatus::Hit);
    assert_eq!(second.scores, first.scores);

    let third = only(sweep(&exp).unwrap());
    assert!(third.all_cache_hits());
}

#[test]
fn evicted_stage_is_rebuilt_with_identical_output() {
    let dir = tempfile::tempdir().unwrap();
    let server = MockServer::start(MockOptions::default()).unwrap();
    let exp = Experiment::open(small_experiment(dir.path(), &server)).unwrap();
    let first = sweep(&exp).unwrap();
    let key = first[0]
        .stages
        .iter()
        .find(|s| s.kind == StageKind::Generate)
        .unwrap()
        .cache_key
        .clone();
    let before = fs::read(exp.store.entry_dir(&key).join("output.jsonl")).unwrap();
    exp.store.evict(&key).unwrap();

    let second = sweep(&exp).unwrap();
    assert_eq!(status_of(&second[0], StageKind::Generate), StageStatus::Miss);
    assert_eq!(
        fs::read(exp.store.entry_dir(&key).join("output.jsonl")).unwrap(),
        before
    );
    assert_eq!(machine_report(&first).unwrap(), machine_report(&second).unwrap());
}

#[test]
fn changing_a_backend_identity_invalidates_its_stages() {
    let dir = tempfile::tempdir().unwrap();
    let server = MockServer::start(MockOptions::default()).unwrap();
    let config = small_experiment(dir.path(), &server);
    let first = only(sweep(&Experiment::open(config.clone()).unwrap()).unwrap());

    let mut swapped = config;
    for ep in &mut swapped.backends {
        if ep.kind == BackendKind::Reformulator {
            ep.identity = "mock-reformulator@2".into();
        }
    }
    let second = only(sweep(&Experiment::open(swapped).unwrap()).unwrap());
    assert_eq!(status_of(&second, StageKind::TrainBase), StageStatus::Hit);
    assert_eq!(status_of(&second, StageKind::Reformulate), StageStatus::Miss);
    assert_eq!(status_of(&second, StageKind::Evaluate), StageStatus::Miss);
    assert_ne!(first.plan_digest, second.plan_digest);
}

fn with_dead_translator(dir: &std::path::Path, server: &MockServer) -> Experiment {
    let mut config = small_experiment(dir, server);
    for ep in &mut config.backends {
        if ep.kind == BackendKind::Translator {
            // nothing listens on the discard port
            ep.url = "http://127.0.0.1:9".into();
            ep.max_retries = 0;
        }
    }
    Experiment::open(config).unwrap()
}

#[test]
fn sweep_checks_backend_health_first() {
    let dir = tempfile::tempdir().unwrap();
    let server = MockServer::start(MockOptions::default()).unwrap();
    let err = sweep(&with_dead_translator(dir.path(), &server)).unwrap_err();
    assert!(err.to_string().contains("127.0.0.1:9"), "{err}");
    assert_eq!(server.requests("train"), 0);
}

#[test]
fn failing_stage_skips_its_dependents_only() {
    let dir = tempfile::tempdir().unwrap();
    let server = MockServer::start(MockOptions::default()).unwrap();
    let exp = with_dead_translator(dir.path(), &server);
    let base = exp.base_subset(Some(50), 0).unwrap();
    let plan = plan_variant(&VariantSpec::new(VariantName::Re, false, 0), &exp.inputs(&base)).unwrap();
    let record = run(&plan, &exp, &base);
    assert!(record.failed());
    assert_eq!(status_of(&record, StageKind::TrainBase), StageStatus::Miss);
    assert_eq!(status_of(&record, StageKind::Generate), StageStatus::Miss);
    assert_eq!(status_of(&record, StageKind::TranslateToEn), StageStatus::Failed);
    assert_eq!(status_of(&record, StageKind::Reformulate), StageStatus::Skipped);
    assert_eq!(status_of(&record, StageKind::Evaluate), StageStatus::Skipped);
    assert!(record.scores.is_empty());
}
