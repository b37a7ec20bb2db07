//! Usage-history parsing (JSON lines and the `D1: P1-P3-P4` notation) and rule export.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mining::RuleIndex;
use crate::model::{join_modules, validate_run, DatasetId, ModelError, PipelineRun, RawRun, Ratio};
use crate::recommend::rank_rules;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: ModelError,
    },
    #[error("module {0:?} contains '-' and cannot be written in dash notation")]
    Unrepresentable(String),
    #[error("cannot infer history format from {0:?}; pass it explicitly")]
    UnknownFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl IngestError {
    fn malformed(line: usize, reason: impl Into<String>) -> Self {
        Self::MalformedRecord {
            line,
            reason: reason.into(),
        }
    }
}

/// Runs in arrival order; `seq` strictly increasing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct History {
    runs: Vec<PipelineRun>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_runs(runs: impl IntoIterator<Item = PipelineRun>) -> Result<Self, ModelError> {
        let mut history = Self::new();
        for run in runs {
            history.push(run)?;
        }
        Ok(history)
    }

    pub fn push(&mut self, run: PipelineRun) -> Result<(), ModelError> {
        if let Some(last) = self.runs.last() {
            if run.seq <= last.seq {
                return Err(ModelError::DuplicateSeq(run.seq));
            }
        }
        self.runs.push(run);
        Ok(())
    }

    pub fn runs(&self) -> &[PipelineRun] {
        &self.runs
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    /// Sequence number the next appended run should take.
    pub fn next_seq(&self) -> u64 {
        self.runs.last().map_or(1, |r| r.seq + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistoryFormat {
    Lines,
    Dsl,
}

impl HistoryFormat {
    /// `.dsl`/`.txt` are dash notation, `.jsonl`/`.ndjson`/`.json` are line records.
    pub fn infer(path: &Path) -> Result<Self, IngestError> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("dsl" | "txt" | "pipelines") => Ok(Self::Dsl),
            Some("jsonl" | "ndjson" | "json") => Ok(Self::Lines),
            _ => Err(IngestError::UnknownFormat(path.display().to_string())),
        }
    }

    pub fn parse(self, text: &str) -> Result<History, IngestError> {
        match self {
            Self::Lines => parse_history_lines(text),
            Self::Dsl => parse_history_dsl(text),
        }
    }

    pub fn serialize(self, history: &History) -> Result<String, IngestError> {
        match self {
            Self::Lines => Ok(serialize_lines(history)),
            Self::Dsl => serialize_dsl(history),
        }
    }

    /// One record in this format, newline-terminated.
    pub fn record(self, run: &PipelineRun) -> Result<String, IngestError> {
        match self {
            Self::Lines => Ok(line_record(run)),
            Self::Dsl => dsl_record(run),
        }
    }
}

impl std::str::FromStr for HistoryFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lines" | "jsonl" => Ok(Self::Lines),
            "dsl" => Ok(Self::Dsl),
            other => Err(format!("unknown history format {other:?} (expected lines or dsl)")),
        }
    }
}

/// Reads a history file, inferring the format from the extension when not given.
pub fn load_history(path: &Path, format: Option<HistoryFormat>) -> Result<History, IngestError> {
    let format = match format {
        Some(f) => f,
        None => HistoryFormat::infer(path)?,
    };
    let text = std::fs::read_to_string(path)?;
    format.parse(&text)
}

/// One JSON object per line. Blank lines are skipped; a missing `seq` takes the line number.
pub fn parse_history_lines(text: &str) -> Result<History, IngestError> {
    let mut history = History::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRun =
            serde_json::from_str(line).map_err(|e| IngestError::malformed(lineno, e.to_string()))?;
        let run = validate_run(raw, lineno as u64).map_err(|source| IngestError::Invalid { line: lineno, source })?;
        history
            .push(run)
            .map_err(|source| IngestError::Invalid { line: lineno, source })?;
    }
    Ok(history)
}

/// `<dataset>: <mod>-<mod>-...` per line; `#` starts a comment.
pub fn parse_history_dsl(text: &str) -> Result<History, IngestError> {
    let mut history = History::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = match line.find('#') {
            Some(at) => &line[..at],
            None => line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (dataset, mods) = line
            .split_once(':')
            .ok_or_else(|| IngestError::malformed(lineno, "expected `<dataset>: <module>-<module>...`"))?;
        let dataset = DatasetId::new(dataset.trim()).map_err(|e| IngestError::malformed(lineno, e.to_string()))?;
        let mods = mods.trim();
        if mods.is_empty() {
            return Err(IngestError::malformed(lineno, "no modules after ':'"));
        }
        let modules = mods
            .split('-')
            .map(|m| crate::model::ModuleId::new(m.trim()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| IngestError::malformed(lineno, e.to_string()))?;
        let seq = history.next_seq();
        let run = PipelineRun::new(format!("wf-{seq}"), dataset, modules, seq)
            .map_err(|e| IngestError::malformed(lineno, e.to_string()))?;
        history.push(run).map_err(|e| IngestError::malformed(lineno, e.to_string()))?;
    }
    Ok(history)
}

fn line_record(run: &PipelineRun) -> String {
    let raw = RawRun {
        id: Some(run.id.clone()),
        dataset: run.dataset.to_string(),
        modules: run.modules.iter().map(ToString::to_string).collect(),
        seq: Some(run.seq),
    };
    let mut line = serde_json::to_string(&raw).expect("run record serializes");
    line.push('\n');
    line
}

fn dsl_record(run: &PipelineRun) -> Result<String, IngestError> {
    if let Some(m) = run.modules.iter().find(|m| m.as_str().contains('-')) {
        return Err(IngestError::Unrepresentable(m.to_string()));
    }
    Ok(format!("{}: {}\n", run.dataset, join_modules(&run.modules)))
}

pub fn serialize_lines(history: &History) -> String {
    history.runs().iter().map(line_record).collect()
}

/// Dash notation keeps only dataset and modules; ids and seqs are renumbered on parse.
pub fn serialize_dsl(history: &History) -> Result<String, IngestError> {
    history.runs().iter().map(dsl_record).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceDoc {
    pub num: u64,
    pub den: u64,
}

impl From<Ratio> for ConfidenceDoc {
    fn from(r: Ratio) -> Self {
        Self { num: r.num, den: r.den }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedRule {
    pub consequent: Vec<String>,
    pub support: u64,
    pub confidence: ConfidenceDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedDataset {
    pub support: u64,
    pub rules: Vec<ExportedRule>,
}

/// Rule export document; datasets sorted by name, rules in rank order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleExport {
    pub datasets: BTreeMap<String, ExportedDataset>,
}

impl RuleExport {
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("export serializes");
        out.push('\n');
        out
    }
}

pub fn export_rules(index: &RuleIndex) -> RuleExport {
    let mut doc = RuleExport::default();
    for dataset in index.datasets() {
        doc.datasets.insert(dataset.to_string(), export_dataset(index, dataset));
    }
    doc
}

/// Export restricted to one dataset. Unknown datasets yield an entry with no rules.
pub fn export_dataset_rules(index: &RuleIndex, dataset: &DatasetId) -> RuleExport {
    let mut doc = RuleExport::default();
    doc.datasets.insert(dataset.to_string(), export_dataset(index, dataset));
    doc
}

fn export_dataset(index: &RuleIndex, dataset: &DatasetId) -> ExportedDataset {
    let rules = rank_rules(index.distinct_rules(Some(dataset)))
        .into_iter()
        .map(|r| ExportedRule {
            consequent: r.rule.consequent.iter().map(ToString::to_string).collect(),
            support: r.stats.support,
            confidence: r.stats.confidence().into(),
        })
        .collect();
    ExportedDataset {
        support: index.dataset_support(dataset),
        rules,
    }
}
