use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::metrics::EvalReport;

use super::{HarnessError, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub config: RunConfig,
    pub provider: String,
    pub embedder: String,
    pub demo_ids: Vec<String>,
    pub started_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub prompt: String,
    pub prompt_hash: String,
    pub completion: Option<String>,
    pub prediction: Option<String>,
    pub gold: Option<String>,
    pub attempts: u32,
    pub latency_ms: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFooter {
    pub status: RunStatus,
    pub total: usize,
    pub failures: usize,
    pub finished_at: String,
}

/// `manifest.jsonl`: a header line, one line per query in input order, and
/// a footer line. A manifest without a footer is incomplete.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub header: ManifestHeader,
    pub records: Vec<QueryRecord>,
    pub footer: Option<ManifestFooter>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub total: usize,
    pub failures: usize,
    /// Records with both a prediction and a gold question.
    pub scored: usize,
    pub metrics: Option<EvalReport>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Header(ManifestHeader),
    Query(QueryRecord),
    Footer(ManifestFooter),
}

impl RunManifest {
    pub fn status(&self) -> RunStatus {
        self.footer.as_ref().map_or(RunStatus::Incomplete, |f| f.status)
    }

    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![Line::Header(self.header.clone())];
        lines.extend(self.records.iter().cloned().map(Line::Query));
        lines.extend(self.footer.clone().map(Line::Footer));
        super::to_jsonl(&lines)
    }

    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let mut header = None;
        let mut records = Vec::new();
        let mut footer = None;
        for (i, raw) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let line: Line = serde_json::from_str(raw).map_err(|e| format!("line {}: {e}", i + 1))?;
            match line {
                Line::Header(h) if header.is_none() && i == 0 => header = Some(h),
                Line::Query(q) if header.is_some() && footer.is_none() => records.push(q),
                Line::Footer(f) if header.is_some() && footer.is_none() => footer = Some(f),
                _ => return Err(format!("line {}: out of place", i + 1)),
            }
        }
        let header = header.ok_or("missing header line")?;
        Ok(Self { header, records, footer })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let mut tmp = PathBuf::from(path);
    tmp.as_mut_os_string().push(".tmp");
    let mut file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    file.write_all(bytes).map_err(io_err(&tmp))?;
    file.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Writes `report.json`, `report.csv` and `manifest.jsonl` into `dir`.
///
/// Each file goes through a temporary and a rename. A stale manifest is
/// removed first and the new one is renamed last, so an interrupted write
/// never leaves a complete-looking manifest next to a mismatched report.
pub fn persist(dir: &Path, manifest: &RunManifest, report: &RunReport) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest_path = dir.join("manifest.jsonl");
    match fs::remove_file(&manifest_path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(io_err(&manifest_path)(e)),
        _ => {}
    }
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    write_atomic(&dir.join("report.json"), json.as_bytes())?;
    let mut csv = Vec::new();
    if let Some(metrics) = &report.metrics {
        metrics.write_csv(&mut csv)?;
    } else {
        csv.extend_from_slice(b"id,hypothesis,reference,bleu4,meteor,rouge_l\n");
    }
    write_atomic(&dir.join("report.csv"), &csv)?;
    write_atomic(&manifest_path, manifest.to_jsonl().as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    RunManifest::from_jsonl(&text).map_err(|message| HarnessError::Manifest { path: path.display().to_string(), message })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> RunManifest {
        RunManifest {
            header: ManifestHeader {
                config: RunConfig::default(),
                provider: "mock".into(),
                embedder: "hash".into(),
                demo_ids: vec!["a".into()],
                started_at: "t0".into(),
            },
            records: vec![QueryRecord {
                id: "q1".into(),
                prompt: "Input: (JOIN a.b c)".into(),
                prompt_hash: "h".into(),
                completion: Some("Subquestion1: what ?".into()),
                prediction: Some("what ?".into()),
                gold: None,
                attempts: 1,
                latency_ms: 0,
                error: None,
            }],
            footer: Some(ManifestFooter { status: RunStatus::Complete, total: 1, failures: 0, finished_at: "t1".into() }),
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let m = manifest();
        let text = m.to_jsonl();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(RunManifest::from_jsonl(&text).unwrap(), m);
    }

    #[test]
    fn truncated_manifest_reads_as_incomplete() {
        let text = manifest().to_jsonl();
        let cut: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
        assert_eq!(RunManifest::from_jsonl(&cut).unwrap().status(), RunStatus::Incomplete);
        assert!(RunManifest::from_jsonl("").is_err());
    }

    #[test]
    fn persist_writes_three_files_and_no_temporaries() {
        let dir = tempfile::tempdir().unwrap();
        let report = RunReport { total: 1, failures: 0, scored: 0, metrics: None };
        persist(dir.path(), &manifest(), &report).unwrap();
        let mut names: Vec<String> =
            fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
        names.sort();
        assert_eq!(names, ["manifest.jsonl", "report.csv", "report.json"]);
        assert_eq!(read_manifest(&dir.path().join("manifest.jsonl")).unwrap(), manifest());
    }
}
