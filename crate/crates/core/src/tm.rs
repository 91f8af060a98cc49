//! Namespaced translation memory.
//!
//! Entries live in an in-memory map keyed by `entry_id` and, for file-backed
//! stores, in an append-only JSON-lines file. Replacing an entry appends the new
//! record; on load the last record for an id wins.
//!
//! Retrieval scores candidates with a Dice coefficient over character-trigram
//! multisets, which needs no tokenizer and behaves the same for Latin, CJK,
//! Hebrew and Arabic scripts.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::mqm::{JobContext, LanguagePair, QualityDimension};

pub const DEFAULT_TOP_K: usize = 5;
pub const DEFAULT_MIN_SCORE: f64 = 0.35;

#[derive(Debug, Error)]
pub enum TmError {
    #[error("translation memory store is corrupt at line {line}: {reason}")]
    StoreCorrupt { line: usize, reason: String },
    #[error("entry {0} is confirmed and cannot be overwritten")]
    ImmutableEntry(String),
    #[error("invalid entry: {0}")]
    InvalidEntry(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("write rejected by policy: {0}")]
    PolicyViolation(String),
    #[error("translation memory I/O failure: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamespaceKind {
    Global,
    Job,
    Agent,
}

/// A TM partition. `key` is empty for global, the job id for job namespaces and
/// the dimension label for agent namespaces.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TmNamespace {
    pub kind: NamespaceKind,
    #[serde(default)]
    pub key: String,
}

impl TmNamespace {
    pub fn global() -> Self {
        Self {
            kind: NamespaceKind::Global,
            key: String::new(),
        }
    }

    pub fn job(job_id: impl Into<String>) -> Self {
        Self {
            kind: NamespaceKind::Job,
            key: job_id.into(),
        }
    }

    pub fn agent(dimension: QualityDimension) -> Self {
        Self {
            kind: NamespaceKind::Agent,
            key: dimension.label().to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), TmError> {
        let global = self.kind == NamespaceKind::Global;
        if global != self.key.is_empty() {
            return Err(TmError::InvalidEntry(format!(
                "namespace key must be empty exactly for global namespaces (got {:?}/{:?})",
                self.kind, self.key
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    SegmentPair,
    Term,
    StyleRule,
    Convention,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Seeded,
    Confirmed,
    AgentWritten,
}

/// One TM record. For `style_rule` and `convention` entries `target_text` holds
/// the guidance and `source_text` the trigger phrase (possibly empty).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmEntry {
    pub entry_id: String,
    pub namespace: TmNamespace,
    pub kind: EntryKind,
    pub language_pair: LanguagePair,
    pub source_text: String,
    pub target_text: String,
    pub provenance: Provenance,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub note: String,
}

impl TmEntry {
    pub fn new_id() -> String {
        format!("tm-{}", uuid::Uuid::new_v4().simple())
    }

    pub fn validate(&self) -> Result<(), TmError> {
        if self.entry_id.trim().is_empty() {
            return Err(TmError::InvalidEntry("entry_id must not be empty".into()));
        }
        self.namespace.validate()?;
        self.language_pair
            .validate()
            .map_err(|e| TmError::InvalidEntry(e.to_string()))?;
        if self.kind == EntryKind::SegmentPair
            && (self.source_text.trim().is_empty() || self.target_text.trim().is_empty())
        {
            return Err(TmError::InvalidEntry(
                "segment pairs need non-empty source and target text".into(),
            ));
        }
        if self.target_text.trim().is_empty() {
            return Err(TmError::InvalidEntry("target_text must not be empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalQuery {
    pub query_text: String,
    pub language_pair: LanguagePair,
    /// Namespaces to search. An empty list searches every namespace.
    #[serde(default)]
    pub namespaces: Vec<TmNamespace>,
    #[serde(default)]
    pub kinds: Option<Vec<EntryKind>>,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_min_score")]
    pub min_score: f64,
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

fn default_min_score() -> f64 {
    DEFAULT_MIN_SCORE
}

impl RetrievalQuery {
    pub fn new(query_text: impl Into<String>, language_pair: LanguagePair) -> Self {
        Self {
            query_text: query_text.into(),
            language_pair,
            namespaces: Vec::new(),
            kinds: None,
            top_k: DEFAULT_TOP_K,
            min_score: DEFAULT_MIN_SCORE,
        }
    }

    pub fn in_namespaces(mut self, namespaces: Vec<TmNamespace>) -> Self {
        self.namespaces = namespaces;
        self
    }

    pub fn with_kinds(mut self, kinds: Vec<EntryKind>) -> Self {
        self.kinds = Some(kinds);
        self
    }

    pub fn top_k(mut self, top_k: usize) -> Self {
        self.top_k = top_k;
        self
    }

    pub fn min_score(mut self, min_score: f64) -> Self {
        self.min_score = min_score;
        self
    }

    pub fn validate(&self) -> Result<(), TmError> {
        if self.top_k == 0 {
            return Err(TmError::InvalidQuery("top_k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_score) {
            return Err(TmError::InvalidQuery(format!(
                "min_score {} outside [0, 1]",
                self.min_score
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntry {
    pub entry: TmEntry,
    pub score: f64,
}

/// Lowercase, NFC-normalize, collapse whitespace runs to one space and trim.
pub fn normalize_text(text: &str) -> String {
    let lowered: String = text.nfc().collect::<String>().to_lowercase();
    lowered.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn trigram_counts(chars: &[char]) -> HashMap<[char; 3], usize> {
    let mut counts = HashMap::new();
    for w in chars.windows(3) {
        *counts.entry([w[0], w[1], w[2]]).or_insert(0) += 1;
    }
    counts
}

/// Dice coefficient over character-trigram multisets of the normalized texts.
///
/// Texts shorter than three characters after normalization compare by exact
/// match (1.0 or 0.0).
pub fn similarity(a: &str, b: &str) -> f64 {
    let a: Vec<char> = normalize_text(a).chars().collect();
    let b: Vec<char> = normalize_text(b).chars().collect();
    if a.len() < 3 || b.len() < 3 {
        return if a == b { 1.0 } else { 0.0 };
    }
    let ca = trigram_counts(&a);
    let cb = trigram_counts(&b);
    let shared: usize = ca
        .iter()
        .map(|(t, &n)| n.min(cb.get(t).copied().unwrap_or(0)))
        .sum();
    let total = (a.len() - 2) + (b.len() - 2);
    (2 * shared) as f64 / total as f64
}

/// Which writes an agent may make on its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TmPolicy {
    /// When set, `agent_written` entries are accepted only in agent namespaces.
    pub agent_writes_in_agent_namespace_only: bool,
}

impl Default for TmPolicy {
    fn default() -> Self {
        Self {
            agent_writes_in_agent_namespace_only: true,
        }
    }
}

/// Shared translation memory. Readers run concurrently; each write holds the
/// entry map exclusively while it is persisted, so retrieval never observes a
/// half-applied write.
#[derive(Debug)]
pub struct TmStore {
    entries: RwLock<BTreeMap<String, TmEntry>>,
    path: Option<PathBuf>,
    file: Mutex<Option<File>>,
    policy: TmPolicy,
}

impl TmStore {
    pub fn in_memory() -> Self {
        Self {
            entries: RwLock::new(BTreeMap::new()),
            path: None,
            file: Mutex::new(None),
            policy: TmPolicy::default(),
        }
    }

    /// Loads the store at `path`, or starts empty if the file does not exist.
    /// The file itself is created on the first write.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, TmError> {
        let path = path.as_ref().to_path_buf();
        let entries = if path.exists() {
            read_records(&path)?
        } else {
            BTreeMap::new()
        };
        Ok(Self {
            entries: RwLock::new(entries),
            path: Some(path),
            file: Mutex::new(None),
            policy: TmPolicy::default(),
        })
    }

    pub fn with_policy(mut self, policy: TmPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("tm lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, entry_id: &str) -> Option<TmEntry> {
        self.entries
            .read()
            .expect("tm lock poisoned")
            .get(entry_id)
            .cloned()
    }

    /// All entries ordered by `entry_id`.
    pub fn entries(&self) -> Vec<TmEntry> {
        self.entries
            .read()
            .expect("tm lock poisoned")
            .values()
            .cloned()
            .collect()
    }

    pub fn upsert_entry(&self, entry: TmEntry) -> Result<String, TmError> {
        entry.validate()?;
        if self.policy.agent_writes_in_agent_namespace_only
            && entry.provenance == Provenance::AgentWritten
            && entry.namespace.kind != NamespaceKind::Agent
        {
            return Err(TmError::PolicyViolation(
                "agent-written entries are only accepted in agent namespaces".into(),
            ));
        }
        let mut entries = self.entries.write().expect("tm lock poisoned");
        if let Some(existing) = entries.get(&entry.entry_id) {
            if existing.provenance == Provenance::Confirmed {
                return Err(TmError::ImmutableEntry(entry.entry_id));
            }
        }
        self.persist(&entry)?;
        let id = entry.entry_id.clone();
        entries.insert(id.clone(), entry);
        Ok(id)
    }

    /// Appends one confirmed segment pair to the job namespace. Repeated
    /// confirmations of the same pair each produce a new entry.
    pub fn record_confirmation(
        &self,
        source: &str,
        target: &str,
        pair: &LanguagePair,
        job: &JobContext,
    ) -> Result<String, TmError> {
        if source.trim().is_empty() || target.trim().is_empty() {
            return Err(TmError::InvalidEntry(
                "confirmation needs non-empty source and target".into(),
            ));
        }
        job.validate()
            .map_err(|e| TmError::InvalidEntry(e.to_string()))?;
        let entry = TmEntry {
            entry_id: TmEntry::new_id(),
            namespace: TmNamespace::job(job.job_id.clone()),
            kind: EntryKind::SegmentPair,
            language_pair: pair.clone(),
            source_text: source.to_string(),
            target_text: target.to_string(),
            provenance: Provenance::Confirmed,
            created_at: Utc::now(),
            note: String::new(),
        };
        self.upsert_entry(entry)
    }

    pub fn retrieve(&self, query: &RetrievalQuery) -> Result<Vec<ScoredEntry>, TmError> {
        query.validate()?;
        let entries = self.entries.read().expect("tm lock poisoned");
        let mut scored: Vec<ScoredEntry> = entries
            .values()
            .filter(|e| e.language_pair == query.language_pair)
            .filter(|e| query.namespaces.is_empty() || query.namespaces.contains(&e.namespace))
            .filter(|e| query.kinds.as_ref().is_none_or(|k| k.contains(&e.kind)))
            .map(|e| ScoredEntry {
                score: similarity(&query.query_text, &e.source_text),
                entry: e.clone(),
            })
            .filter(|s| s.score >= query.min_score)
            .collect();
        scored.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.entry.entry_id.cmp(&b.entry.entry_id))
        });
        scored.truncate(query.top_k);
        Ok(scored)
    }

    /// Writes a compacted copy of the store (one record per entry, ordered by id).
    pub fn export_to(&self, path: impl AsRef<Path>) -> Result<usize, TmError> {
        let entries = self.entries();
        let mut out = io::BufWriter::new(File::create(path)?);
        for entry in &entries {
            serde_json::to_writer(&mut out, entry).map_err(io::Error::other)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(entries.len())
    }

    /// Upserts every record from a store-format file. Records identical to an
    /// existing confirmed entry are skipped; conflicting ones are rejected.
    pub fn import_from(&self, path: impl AsRef<Path>) -> Result<usize, TmError> {
        let incoming = read_records(path.as_ref())?;
        let mut written = 0;
        for (id, entry) in incoming {
            if self.get(&id).as_ref() == Some(&entry) {
                continue;
            }
            self.upsert_entry(entry)?;
            written += 1;
        }
        Ok(written)
    }

    fn persist(&self, entry: &TmEntry) -> Result<(), TmError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut line = serde_json::to_string(entry).map_err(io::Error::other)?;
        line.push('\n');
        let mut file = self.file.lock().expect("tm file lock poisoned");
        if file.is_none() {
            *file = Some(OpenOptions::new().create(true).append(true).open(path)?);
        }
        let f = file.as_mut().expect("file opened above");
        f.write_all(line.as_bytes())?;
        f.flush()?;
        f.sync_data()?;
        Ok(())
    }
}

fn read_records(path: &Path) -> Result<BTreeMap<String, TmEntry>, TmError> {
    let reader = BufReader::new(File::open(path)?);
    let mut entries = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: TmEntry = serde_json::from_str(&line).map_err(|e| TmError::StoreCorrupt {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        entry.validate().map_err(|e| TmError::StoreCorrupt {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        entries.insert(entry.entry_id.clone(), entry);
    }
    Ok(entries)
}
