//! Agent-only evaluation: zero-shot, self-refinement and one unattended
//! router → agents → editor round, scored with BLEU and METEOR-lite and
//! compared with paired bootstrap.

mod bootstrap;
mod external;
mod metrics;
mod report;
mod run;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mqm::LanguagePair;

pub use bootstrap::{paired_bootstrap, BootstrapConfig, BootstrapResult};
pub use external::{ExternalMetric, HttpExternalMetric};
pub use metrics::{
    bleu_corpus, bleu_from_stats, bleu_stats, meteor_lite, meteor_lite_corpus, meteor_lite_tokens,
    tokenize_for_metric, BleuConfig, BleuStats, MeteorConfig, Metric, BLEU_MAX_N,
};
pub use report::{build_report, compare_runs, pairwise_comparisons, Comparison, DirectionReport, MetricReport, ScoreRow};
pub use run::{
    load_run, run_condition, score_run, write_run, Condition, ConditionRun, DirectionScore,
    EvalConfig, ItemResult, RunConfig, CHORUS_INSTRUCTION,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
    #[error("duplicate item id {0}")]
    DuplicateId(String),
    #[error("{hypotheses} hypotheses but {references} references")]
    LengthMismatch { hypotheses: usize, references: usize },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("item {item_id} produced no usable translation: {reason}")]
    FatalItemFailure { item_id: String, reason: String },
    #[error("runs cannot be compared: {0}")]
    MismatchedRuns(String),
    #[error("run directory {path}: {reason}")]
    BadRunDir { path: String, reason: String },
    #[error("external metric failed: {0}")]
    External(String),
    #[error("io failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl EvalError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalItem {
    pub item_id: String,
    pub source: String,
    pub reference: String,
    pub language_pair: LanguagePair,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetRecord {
    id: String,
    source: String,
    reference: String,
    src_lang: String,
    tgt_lang: String,
}

/// Parses a JSON-lines dataset. Blank lines are skipped; an empty file is an
/// empty dataset.
pub fn parse_dataset(text: &str) -> Result<Vec<EvalItem>, EvalError> {
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| EvalError::BadRecord {
            line: line_no,
            reason,
        };
        let record: DatasetRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        for (name, value) in [
            ("id", &record.id),
            ("source", &record.source),
            ("reference", &record.reference),
        ] {
            if value.trim().is_empty() {
                return Err(bad(format!("field {name} is empty")));
            }
        }
        let language_pair =
            LanguagePair::new(&record.src_lang, &record.tgt_lang).map_err(|e| bad(e.to_string()))?;
        if !seen.insert(record.id.clone()) {
            return Err(EvalError::DuplicateId(record.id));
        }
        items.push(EvalItem {
            item_id: record.id,
            source: record.source,
            reference: record.reference,
            language_pair,
        });
    }
    if items.is_empty() {
        log::warn!("dataset contains no items");
    }
    Ok(items)
}

pub fn load_dataset(path: &Path) -> Result<Vec<EvalItem>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::io(path, e))?;
    parse_dataset(&text)
}
