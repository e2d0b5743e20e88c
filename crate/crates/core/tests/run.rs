mod common;

use kqgcot::harness::{
    choose_demonstrations, persist, prepare_prompts, read_manifest, run_experiment, HarnessError, RunConfig, RunInputs,
    RunStatus,
};
use kqgcot::llm::MockProvider;
use kqgcot::prompting::PromptMode;
use kqgcot::select::SelectionStrategy;

use common::*;

#[test]
fn failed_records_are_isolated_and_counted() {
    let fx = fixture_run();
    let inputs = RunInputs { pool: None, demos: &fx.demos, test: &fx.test, names: &fx.names };
    let config = RunConfig::default();
    let embedder = embedder();
    let prompts = prepare_prompts(&fx.demos, &fx.test, &fx.names, &config, &embedder).unwrap();
    // script only the first three prompts
    let provider = MockProvider::from_prompts(
        prompts.iter().take(3).map(|p| (p.prompt_text.clone(), "Subquestion1: fine ?".to_string())),
    )
    .unwrap();
    let out = run_experiment(&inputs, &config, &provider, &embedder).unwrap();
    assert_eq!(out.report.failures, 2);
    assert_eq!(out.report.scored, 3);
    assert_eq!(out.manifest.footer.as_ref().unwrap().failures, 2);
    let ids: Vec<&str> = out.manifest.records.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["test-0", "test-1", "test-2", "test-3", "test-4"]);
    assert!(out.manifest.records[4].error.as_deref().unwrap().contains("no scripted completion"));
    assert_eq!(out.report.metrics.unwrap().count, 3);
}

#[test]
fn output_order_follows_input_under_concurrency() {
    let fx = fixture_run();
    let inputs = RunInputs { pool: None, demos: &fx.demos, test: &fx.test, names: &fx.names };
    for concurrency in [1, 2, 8] {
        let config = RunConfig { concurrency, ..RunConfig::default() };
        let out = run_experiment(&inputs, &config, &EchoProvider, &embedder()).unwrap();
        for (record, test) in out.manifest.records.iter().zip(&fx.test) {
            assert_eq!(record.id, test.id);
            assert!(record.prediction.as_deref().unwrap().starts_with("what about"));
        }
    }
}

#[test]
fn persisted_run_reads_back_complete() {
    let fx = fixture_run();
    let inputs = RunInputs { pool: None, demos: &fx.demos, test: &fx.test, names: &fx.names };
    let out = run_experiment(&inputs, &RunConfig::default(), &EchoProvider, &embedder()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    persist(dir.path(), &out.manifest, &out.report).unwrap();
    let back = read_manifest(&dir.path().join("manifest.jsonl")).unwrap();
    assert_eq!(back, out.manifest);
    assert_eq!(back.status(), RunStatus::Complete);
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["scored"], 5);
}

#[test]
fn standard_mode_falls_back_to_pool_questions() {
    let fx = fixture_run();
    let inputs = RunInputs { pool: Some(&fx.pool), demos: &[], test: &fx.test, names: &fx.names };
    let config = RunConfig { mode: PromptMode::Standard, ..RunConfig::default() };
    let demos = choose_demonstrations(&inputs, &config, &embedder()).unwrap();
    assert_eq!(demos.len(), 12);
    let prompts = prepare_prompts(&demos, &fx.test, &fx.names, &config, &embedder()).unwrap();
    assert!(prompts[0].prompt_text.starts_with("Input: "));
    assert_eq!(prompts[0].prompt_text.matches("\nQuestion: what is the ").count(), 12);
    assert!(!prompts[0].prompt_text.contains("m.0"), "entity ids should be replaced by names");
}

#[test]
fn cot_mode_needs_annotated_demonstrations() {
    let fx = fixture_run();
    let inputs = RunInputs { pool: Some(&fx.pool), demos: &[], test: &fx.test, names: &fx.names };
    let err = choose_demonstrations(&inputs, &RunConfig::default(), &embedder()).unwrap_err();
    assert!(matches!(err, HarnessError::MissingDemonstration { .. }));
}

#[test]
fn random_selection_changes_with_seed() {
    let fx = fixture_run();
    let bank = annotated_demos(&pool_entries(&fx.pool), &fx.names);
    let inputs = RunInputs { pool: Some(&fx.pool), demos: &bank, test: &fx.test, names: &fx.names };
    let ids = |seed| {
        let config = RunConfig { seed, selection: SelectionStrategy::Random, ..RunConfig::default() };
        choose_demonstrations(&inputs, &config, &embedder()).unwrap().into_iter().map(|d| d.id).collect::<Vec<_>>()
    };
    assert_eq!(ids(1), ids(1));
    assert_ne!(ids(1), ids(2));
}

#[test]
fn demo_count_must_match_k() {
    let fx = fixture_run();
    let inputs = RunInputs { pool: None, demos: &fx.demos[..8], test: &fx.test, names: &fx.names };
    let err = run_experiment(&inputs, &RunConfig::default(), &EchoProvider, &embedder()).unwrap_err();
    assert!(matches!(err, HarnessError::DemoCount { expected: 12, found: 8 }));
}
