#![allow(dead_code)]

use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::Deserialize;

use kqgcot::chain::{ingest_scaffold, scaffold, Demonstration};
use kqgcot::embed::HashEmbedder;
use kqgcot::harness::{ingest, DatasetRecord};
use kqgcot::llm::{CompletionParams, CompletionProvider, LlmError};
use kqgcot::logic_form::{AtomKind, EntityNames, LogicalForm, Operator};
use kqgcot::select::{build_pool, select, PoolEntry, SelectionConfig};
use kqgcot::synthetic::synthetic_pool;

#[derive(Debug, Deserialize)]
pub struct Chain {
    pub id: String,
    pub logical_form: String,
    pub subgraphs: Vec<String>,
    pub subquestions: Vec<String>,
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn chains() -> Vec<Chain> {
    serde_json::from_str(&std::fs::read_to_string(fixture("chains.json")).unwrap()).unwrap()
}

pub fn chain(id: &str) -> Chain {
    chains().into_iter().find(|c| c.id == id).unwrap()
}

/// Published example forms plus a 200-form synthetic pool.
pub fn corpus() -> Vec<DatasetRecord> {
    let mut records = ingest(&fixture("forms.jsonl")).unwrap();
    records.extend(synthetic_pool(200, 0).0);
    records
}

pub fn embedder() -> HashEmbedder {
    HashEmbedder::new(384, 0).unwrap()
}

pub fn pool_entries(records: &[DatasetRecord]) -> Vec<PoolEntry> {
    let forms: Vec<_> = records.iter().map(|r| (r.id.clone(), r.form())).collect();
    build_pool(&forms, &embedder()).unwrap()
}

const WORDS: [&str; 10] = ["simon", "birch", "o", "holy", "night", "sony", "alpha", "700", "AN/FPS-20", "'s"];
const SEGMENTS: [&str; 8] = ["film", "performance", "actor", "music", "genre", "location", "country", "official_language"];

fn identifier(rng: &mut impl Rng, parts: usize) -> String {
    (0..parts).map(|_| *SEGMENTS.choose(rng).unwrap()).collect::<Vec<_>>().join(".")
}

fn literal(rng: &mut impl Rng) -> LogicalForm {
    let types = ["float", "integer", "gYear"];
    LogicalForm::atom(
        AtomKind::Literal,
        format!("{}^^http://www.w3.org/2001/XMLSchema#{}", rng.random_range(0..5000), types.choose(rng).unwrap()),
    )
}

fn entity(rng: &mut impl Rng) -> LogicalForm {
    if rng.random_bool(0.3) {
        return LogicalForm::atom(AtomKind::Entity, format!("m.0{:x}", rng.random_range(0x1000..0xfffff)));
    }
    let n = rng.random_range(1..=3);
    let words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
    LogicalForm::atom(AtomKind::Entity, words.join(" "))
}

fn relation(rng: &mut impl Rng) -> LogicalForm {
    LogicalForm::atom(AtomKind::Relation, identifier(rng, 3))
}

fn class_or_expr(rng: &mut impl Rng, depth: usize) -> LogicalForm {
    if depth == 0 || rng.random_bool(0.4) {
        LogicalForm::atom(AtomKind::Class, identifier(rng, 2))
    } else {
        random_form(rng, depth - 1)
    }
}

/// Random well-formed AST with nesting at most `depth`.
pub fn random_form(rng: &mut impl Rng, depth: usize) -> LogicalForm {
    let choice = if depth == 0 { rng.random_range(0..2) * 4 } else { rng.random_range(0..6) };
    match choice {
        0 => {
            let rel = if rng.random_bool(0.4) {
                LogicalForm::op(Operator::R, vec![relation(rng)])
            } else {
                relation(rng)
            };
            let value = match (depth, rng.random_range(0..3)) {
                (d, 0) if d > 0 => random_form(rng, d - 1),
                (_, 1) if rng.random_bool(0.3) => literal(rng),
                _ => entity(rng),
            };
            LogicalForm::op(Operator::Join, vec![rel, value])
        }
        1 => LogicalForm::op(Operator::And, vec![class_or_expr(rng, depth), class_or_expr(rng, depth)]),
        2 => LogicalForm::op(Operator::Count, vec![random_form(rng, depth - 1)]),
        3 => {
            let op = *[Operator::ArgMax, Operator::ArgMin].choose(rng).unwrap();
            LogicalForm::op(op, vec![class_or_expr(rng, depth), relation(rng)])
        }
        _ => {
            let op = *[Operator::Lt, Operator::Le, Operator::Gt, Operator::Ge].choose(rng).unwrap();
            LogicalForm::op(op, vec![relation(rng), literal(rng)])
        }
    }
}

/// Fills blank scaffold slots the way an annotator would, with the last
/// subquestion standing as the question.
pub fn annotated_demos(entries: &[PoolEntry], names: &EntityNames) -> Vec<Demonstration> {
    let mut doc = scaffold(entries, names).doc;
    for entry in &mut doc {
        for step in &mut entry.steps {
            step.subquestion = format!("question {} for step {}", entry.id, step.index);
        }
    }
    ingest_scaffold(&doc).unwrap()
}

/// 60-entry pool, 12 scaffolded demos selected from it, and 5 test records
/// with gold questions.
pub struct Fixture {
    pub pool: Vec<DatasetRecord>,
    pub names: EntityNames,
    pub demos: Vec<Demonstration>,
    pub test: Vec<DatasetRecord>,
}

pub fn fixture_run() -> Fixture {
    let (pool, names) = synthetic_pool(60, 11);
    let entries = pool_entries(&pool);
    let chosen = select(&entries, &SelectionConfig { seed: 11, ..SelectionConfig::default() }).unwrap();
    let demos = annotated_demos(&chosen, &names);
    let (mut test, test_names) = synthetic_pool(5, 99);
    for (i, r) in test.iter_mut().enumerate() {
        r.id = format!("test-{i}");
        r.entity_names = Some(
            test_names
                .iter()
                .filter(|(id, _)| r.logical_form.contains(id.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        );
    }
    Fixture { pool, names, demos, test }
}

/// Answers every prompt with a one-step chain built from the query line.
pub struct EchoProvider;

impl CompletionProvider for EchoProvider {
    fn complete_once(&self, prompt: &str, _params: &CompletionParams) -> Result<String, LlmError> {
        let query = prompt.rsplit("Input: ").next().unwrap_or_default();
        Ok(format!("Subgraph1: {query}\nSubquestion1: what about {query} ?\nQuestion: what about {query} ?"))
    }

    fn describe(&self) -> String {
        "echo".into()
    }
}
