//! Dataset ingestion, run orchestration, persistence and diagnostics.

mod dataset;
mod diag;
mod manifest;
mod run;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::ChainError;
use crate::embed::EmbedError;
use crate::llm::CompletionParams;
use crate::metrics::MetricError;
use crate::prompting::{Ordering, PromptConfig, PromptError, PromptMode, INSTRUCTION_PREFIX};
use crate::retry::RetryPolicy;
use crate::select::{SelectError, SelectionConfig, SelectionStrategy, DEFAULT_K};

pub use dataset::{ingest, ingest_str, to_jsonl, DatasetRecord, IngestError, LineError, LineErrorKind};
pub use diag::{diag_similarity, format_diag_table, DiagRow, DiagStrategy};
pub use manifest::{
    persist, read_manifest, ManifestFooter, ManifestHeader, QueryRecord, RunManifest, RunReport, RunStatus,
};
pub use run::{choose_demonstrations, prepare_prompts, run_experiment, RunInputs, RunOutcome};

/// Every knob that affects prompts or selection. Snapshotted into the
/// manifest header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub k: usize,
    pub seed: u64,
    pub mode: PromptMode,
    pub ordering: Ordering,
    pub selection: SelectionStrategy,
    /// Cluster skeleton embeddings; `false` clusters raw forms.
    pub skeleton: bool,
    pub instruction_prefix: String,
    /// Concurrent completion requests.
    pub concurrency: usize,
    pub completion: CompletionParams,
    pub retry: RetryPolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            seed: 0,
            mode: PromptMode::Cot,
            ordering: Ordering::JumpsAsc,
            selection: SelectionStrategy::Kqg,
            skeleton: true,
            instruction_prefix: INSTRUCTION_PREFIX.to_string(),
            concurrency: 4,
            completion: CompletionParams::default(),
            retry: RetryPolicy::default(),
        }
    }
}

impl RunConfig {
    pub fn selection_config(&self) -> SelectionConfig {
        SelectionConfig {
            k: self.k,
            seed: self.seed,
            strategy: self.selection,
            structure_encoding: self.skeleton,
        }
    }

    pub fn prompt_config(&self) -> PromptConfig {
        PromptConfig {
            mode: self.mode,
            ordering: self.ordering,
            k: self.k,
            instruction_prefix: self.instruction_prefix.clone(),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("selected pool entry `{id}` has no annotated demonstration")]
    MissingDemonstration { id: String },
    #[error("expected {expected} demonstrations, found {found}")]
    DemoCount { expected: usize, found: usize },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("diagnostic needs at least one strategy and one seed")]
    EmptyDiagnostic,
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Manifest { path: String, message: String },
}
