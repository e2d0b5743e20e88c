use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logic_form::{parse, EntityNames, LogicalForm};

/// One normalized dataset line: `{"id", "logical_form", "question"?, "entity_names"?}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub logical_form: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_names: Option<EntityNames>,
}

impl DatasetRecord {
    pub fn form(&self) -> LogicalForm {
        parse(&self.logical_form).expect("records are validated on ingestion")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub kind: LineErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LineErrorKind {
    Json(String),
    ParseFailure(String),
    DuplicateId(String),
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            LineErrorKind::Json(m) => write!(f, "line {}: malformed record: {m}", self.line),
            LineErrorKind::ParseFailure(m) => write!(f, "line {}: logical form does not parse: {m}", self.line),
            LineErrorKind::DuplicateId(id) => write!(f, "line {}: duplicate id `{id}`", self.line),
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{} invalid line(s):\n{}", .errors.len(), .errors.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid { errors: Vec<LineError> },
}

/// Reads a JSONL dataset. Every line is validated and all problems are
/// reported together; nothing is returned unless every line is valid.
pub fn ingest(path: &Path) -> Result<Vec<DatasetRecord>, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ingest_str(&text)
}

pub fn ingest_str(text: &str) -> Result<Vec<DatasetRecord>, IngestError> {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                errors.push(LineError { line: line_no, kind: LineErrorKind::Json(e.to_string()) });
                continue;
            }
        };
        if let Err(e) = parse(&record.logical_form) {
            errors.push(LineError { line: line_no, kind: LineErrorKind::ParseFailure(e.to_string()) });
            continue;
        }
        if !seen.insert(record.id.clone()) {
            errors.push(LineError { line: line_no, kind: LineErrorKind::DuplicateId(record.id.clone()) });
            continue;
        }
        records.push(record);
    }
    if errors.is_empty() {
        Ok(records)
    } else {
        Err(IngestError::Invalid { errors })
    }
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable"));
        out.push('\n');
    }
    out
}
