use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::sync::Mutex;

use crate::chain::Demonstration;
use crate::embed::EmbeddingProvider;
use crate::llm::{complete_with, CompletionProvider, CompletionRecord, LlmError};
use crate::logic_form::{substitute_entities, EntityNames};
use crate::metrics::evaluate;
use crate::prompting::{build_prompt, extract_final_question, order_demos, PromptBundle, PromptMode};
use crate::select::{build_pool, select_indices};

use super::manifest::{ManifestFooter, ManifestHeader, QueryRecord, RunManifest, RunReport, RunStatus};
use super::{DatasetRecord, HarnessError, RunConfig};

pub struct RunInputs<'a> {
    /// Unlabeled pool to select from. Without it, `demos` is used as is.
    pub pool: Option<&'a [DatasetRecord]>,
    /// Annotated demonstrations, keyed by pool id.
    pub demos: &'a [Demonstration],
    pub test: &'a [DatasetRecord],
    /// Names applied to every record, after the record's own table.
    pub names: &'a EntityNames,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub report: RunReport,
}

fn names_for(record: &DatasetRecord, global: &EntityNames) -> EntityNames {
    let mut names = global.clone();
    if let Some(own) = &record.entity_names {
        names.extend(own.iter().map(|(k, v)| (k.clone(), v.clone())));
    }
    names
}

/// Resolves the demonstration set: selects from the pool when one is given
/// and maps the selected ids onto annotated demonstrations.
///
/// In standard mode a selected entry without annotation falls back to its
/// gold question over the name-substituted form.
pub fn choose_demonstrations(
    inputs: &RunInputs<'_>,
    config: &RunConfig,
    embedder: &dyn EmbeddingProvider,
) -> Result<Vec<Demonstration>, HarnessError> {
    let Some(pool) = inputs.pool else {
        if inputs.demos.len() != config.k {
            return Err(HarnessError::DemoCount { expected: config.k, found: inputs.demos.len() });
        }
        return Ok(inputs.demos.to_vec());
    };
    let forms: Vec<_> = pool.iter().map(|r| (r.id.clone(), r.form())).collect();
    let entries = build_pool(&forms, embedder)?;
    let picked = select_indices(&entries, &config.selection_config())?;
    picked
        .into_iter()
        .map(|i| {
            let record = &pool[i];
            match inputs.demos.iter().find(|d| d.id == record.id) {
                Some(demo) => {
                    let mut demo = demo.clone();
                    if demo.question.is_none() {
                        demo.question = record.question.clone();
                    }
                    Ok(demo)
                }
                None if config.mode == PromptMode::Standard && record.question.is_some() => {
                    let form = substitute_entities(&record.form(), &names_for(record, inputs.names)).form;
                    let mut demo = Demonstration::from_form(record.id.clone(), form);
                    demo.question = record.question.clone();
                    Ok(demo)
                }
                None => Err(HarnessError::MissingDemonstration { id: record.id.clone() }),
            }
        })
        .collect()
}

/// One prompt per test record, in input order. Entity ids in queries are
/// replaced by surface names where known.
pub fn prepare_prompts(
    demos: &[Demonstration],
    test: &[DatasetRecord],
    names: &EntityNames,
    config: &RunConfig,
    embedder: &dyn EmbeddingProvider,
) -> Result<Vec<PromptBundle>, HarnessError> {
    let prompt_config = config.prompt_config();
    test.iter()
        .map(|record| {
            let sub = substitute_entities(&record.form(), &names_for(record, names));
            if !sub.missing.is_empty() {
                tracing::warn!(id = %record.id, missing = ?sub.missing, "no surface name; keeping machine id");
            }
            let ordered = order_demos(demos, &sub.form, &prompt_config, Some(embedder))?;
            Ok(build_prompt(&ordered, &record.id, &sub.form, &prompt_config)?)
        })
        .collect()
}

fn complete_all(
    prompts: &[PromptBundle],
    provider: &dyn CompletionProvider,
    config: &RunConfig,
) -> Vec<Result<CompletionRecord, LlmError>> {
    let results: Mutex<Vec<Option<Result<CompletionRecord, LlmError>>>> = Mutex::new(vec![None; prompts.len()]);
    let next = AtomicUsize::new(0);
    let workers = config.concurrency.clamp(1, prompts.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, AtomicOrdering::Relaxed);
                let Some(bundle) = prompts.get(i) else { break };
                let result = complete_with(provider, &bundle.prompt_text, &config.completion, &config.retry);
                results.lock().expect("results lock poisoned")[i] = Some(result);
            });
        }
    });
    results
        .into_inner()
        .expect("results lock poisoned")
        .into_iter()
        .map(|r| r.expect("every prompt is completed"))
        .collect()
}

/// Selects demonstrations, builds prompts, completes them, extracts
/// predictions and scores them against gold questions.
///
/// A failed completion or extraction marks that record failed and the run
/// continues. Nothing is written to disk; see [`super::persist`].
pub fn run_experiment(
    inputs: &RunInputs<'_>,
    config: &RunConfig,
    provider: &dyn CompletionProvider,
    embedder: &dyn EmbeddingProvider,
) -> Result<RunOutcome, HarnessError> {
    if inputs.test.is_empty() {
        return Err(HarnessError::EmptyTestSet);
    }
    let started_at = chrono::Utc::now().to_rfc3339();
    let demos = choose_demonstrations(inputs, config, embedder)?;
    let prompts = prepare_prompts(&demos, inputs.test, inputs.names, config, embedder)?;
    let completions = complete_all(&prompts, provider, config);

    let mut records = Vec::with_capacity(prompts.len());
    for ((bundle, result), test) in prompts.into_iter().zip(completions).zip(inputs.test) {
        let mut record = QueryRecord {
            id: bundle.query_id,
            prompt_hash: crate::llm::prompt_hash(&bundle.prompt_text),
            prompt: bundle.prompt_text,
            completion: None,
            prediction: None,
            gold: test.question.clone(),
            attempts: 0,
            latency_ms: 0,
            error: None,
        };
        match result {
            Ok(done) => {
                record.attempts = done.attempts;
                record.latency_ms = done.latency_ms;
                match extract_final_question(&done.completion, config.mode) {
                    Ok(q) => record.prediction = Some(q),
                    Err(e) => record.error = Some(e.to_string()),
                }
                record.completion = Some(done.completion);
            }
            Err(e) => {
                tracing::warn!(id = %record.id, error = %e, "completion failed");
                record.error = Some(e.to_string());
            }
        }
        records.push(record);
    }

    let scored: Vec<(&str, &str, &str)> = records
        .iter()
        .filter_map(|r| Some((r.id.as_str(), r.prediction.as_deref()?, r.gold.as_deref()?)))
        .collect();
    let metrics = if scored.is_empty() { None } else { Some(evaluate(&scored)?) };
    let failures = records.iter().filter(|r| r.error.is_some()).count();
    let report = RunReport { total: records.len(), failures, scored: scored.len(), metrics };

    let manifest = RunManifest {
        header: ManifestHeader {
            config: config.clone(),
            provider: provider.describe(),
            embedder: embedder.describe(),
            demo_ids: demos.iter().map(|d| d.id.clone()).collect(),
            started_at,
        },
        footer: Some(ManifestFooter {
            status: RunStatus::Complete,
            total: records.len(),
            failures,
            finished_at: chrono::Utc::now().to_rfc3339(),
        }),
        records,
    };
    Ok(RunOutcome { manifest, report })
}
