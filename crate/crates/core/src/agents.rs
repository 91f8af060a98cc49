//! MQM-aligned expert agents and the editor that merges their candidates.
//!
//! Each agent sees the task through one quality dimension and returns exactly
//! one candidate per call, with an explanation and the translation-memory
//! entries it relied on. Agents never write to the TM.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::json_extract::find_object;
use crate::mqm::{dimension_from_label, JobContext, LanguagePair, QualityDimension, Visibility};
use crate::provider::{
    complete_with_retry, ChatMessage, ChatProvider, ChatRequest, ProviderError, RetryPolicy,
    DEFAULT_MAX_OUTPUT_CHARS,
};
use crate::templates::TemplateSet;
use crate::tm::{
    EntryKind, RetrievalQuery, ScoredEntry, TmError, TmNamespace, TmStore, DEFAULT_MIN_SCORE,
    DEFAULT_TOP_K,
};

pub const STRICT_FORMAT_REMINDER: &str = "Your previous reply could not be used. Reply again with exactly one JSON object and no other text, with the string keys \"translation\" and \"explanation\" and the list of strings \"tm_refs\". The translation must not be empty.";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("malformed agent response: {0}")]
    MalformedResponse(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("translation memory lookup failed: {0}")]
    Retrieval(String),
}

impl From<TmError> for AgentError {
    fn from(err: TmError) -> Self {
        Self::Retrieval(err.to_string())
    }
}

/// Who produced a candidate: one of the dimension agents, the editor, or the
/// translator (their own draft).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentRole {
    Dimension(QualityDimension),
    Editor,
    Translator,
}

impl AgentRole {
    pub fn label(self) -> &'static str {
        match self {
            Self::Dimension(d) => d.label(),
            Self::Editor => "Editor",
            Self::Translator => "Translator",
        }
    }

    /// Canonical order: the seven dimensions, then the editor, then the translator.
    pub fn sort_key(self) -> usize {
        match self {
            Self::Dimension(d) => d.ordinal(),
            Self::Editor => 7,
            Self::Translator => 8,
        }
    }

    pub fn dimension(self) -> Option<QualityDimension> {
        match self {
            Self::Dimension(d) => Some(d),
            _ => None,
        }
    }

    pub fn parse(label: &str) -> Option<Self> {
        match label.trim().to_lowercase().as_str() {
            "editor" => Some(Self::Editor),
            "translator" => Some(Self::Translator),
            _ => dimension_from_label(label).ok().map(Self::Dimension),
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for AgentRole {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for AgentRole {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let label = String::deserialize(deserializer)?;
        Self::parse(&label)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown agent role {label:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationCandidate {
    pub candidate_id: String,
    pub text: String,
    pub dimension: AgentRole,
    pub explanation: String,
    #[serde(default)]
    pub tm_refs: Vec<String>,
    #[serde(default)]
    pub parent_id: Option<String>,
    pub round: u32,
    pub created_at: DateTime<Utc>,
}

impl TranslationCandidate {
    pub fn new_id() -> String {
        format!("cand-{}", uuid::Uuid::new_v4().simple())
    }

    pub fn translator_draft(text: &str) -> Self {
        Self {
            candidate_id: Self::new_id(),
            text: text.to_string(),
            dimension: AgentRole::Translator,
            explanation: "translator draft".into(),
            tm_refs: Vec::new(),
            parent_id: None,
            round: 0,
            created_at: Utc::now(),
        }
    }
}

/// Everything an agent needs to work on one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskContext {
    pub source_text: String,
    #[serde(default)]
    pub current_translation: String,
    pub language_pair: LanguagePair,
    pub job: JobContext,
    #[serde(default)]
    pub translator_goal: String,
    #[serde(default)]
    pub tm_entries: Vec<ScoredEntry>,
}

impl TaskContext {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.source_text.trim().is_empty() {
            return Err(AgentError::Precondition("source_text must not be empty".into()));
        }
        Ok(())
    }
}

/// The structured payload an agent must return.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentResponseRaw {
    pub translation: String,
    pub explanation: String,
    pub tm_refs: Vec<String>,
}

/// Extracts the first JSON object carrying a non-empty `translation` string and
/// an `explanation` string. `tm_refs` defaults to empty; unknown keys are ignored.
pub fn parse_agent_response(raw: &str) -> Result<AgentResponseRaw, AgentError> {
    find_object(raw, |map| {
        let translation = map.get("translation")?.as_str()?.trim();
        if translation.is_empty() {
            return None;
        }
        let explanation = map.get("explanation")?.as_str()?;
        let tm_refs = match map.get("tm_refs") {
            None | Some(serde_json::Value::Null) => Vec::new(),
            Some(v) => v
                .as_array()?
                .iter()
                .filter_map(|r| r.as_str().map(str::to_string))
                .collect(),
        };
        Some(AgentResponseRaw {
            translation: translation.to_string(),
            explanation: explanation.trim().to_string(),
            tm_refs,
        })
    })
    .ok_or_else(|| {
        AgentError::MalformedResponse(
            "no JSON object with non-empty \"translation\" and \"explanation\" found".into(),
        )
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub model_id: String,
    pub temperature: f64,
    pub retry: RetryPolicy,
    pub top_k: usize,
    pub min_score: f64,
    pub max_output_chars: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            model_id: "mock-model".into(),
            temperature: 0.0,
            retry: RetryPolicy::default(),
            top_k: DEFAULT_TOP_K,
            min_score: DEFAULT_MIN_SCORE,
            max_output_chars: DEFAULT_MAX_OUTPUT_CHARS,
        }
    }
}

pub(crate) fn render_job(job: &JobContext) -> String {
    let visibility = match job.visibility {
        Visibility::Low => "low",
        Visibility::Normal => "normal",
        Visibility::High => "high",
    };
    let or_none = |s: &str| if s.trim().is_empty() { "(none)".to_string() } else { s.to_string() };
    format!(
        "job id: {}\ndomain: {}\naudience: {}\nvisibility: {}",
        job.job_id,
        or_none(&job.domain_tag),
        or_none(&job.audience_note),
        visibility
    )
}

pub(crate) fn render_tm_block(entries: &[ScoredEntry]) -> String {
    if entries.is_empty() {
        return "(no relevant entries)".into();
    }
    entries
        .iter()
        .map(|s| {
            let e = &s.entry;
            let kind = match e.kind {
                EntryKind::SegmentPair => "segment",
                EntryKind::Term => "term",
                EntryKind::StyleRule => "style rule",
                EntryKind::Convention => "convention",
            };
            match e.kind {
                EntryKind::SegmentPair | EntryKind::Term => format!(
                    "[{}] {kind} (match {:.2}): {} => {}",
                    e.entry_id, s.score, e.source_text, e.target_text
                ),
                EntryKind::StyleRule | EntryKind::Convention => format!(
                    "[{}] {kind} (match {:.2}): {}{}",
                    e.entry_id,
                    s.score,
                    e.target_text,
                    if e.source_text.is_empty() {
                        String::new()
                    } else {
                        format!(" (applies to: {})", e.source_text)
                    }
                ),
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub(crate) fn draft_or_placeholder(draft: &str) -> &str {
    if draft.trim().is_empty() {
        "(no draft yet)"
    } else {
        draft
    }
}

/// The agent pool: templates plus model settings.
#[derive(Debug, Clone)]
pub struct ExpertAgents {
    templates: Arc<TemplateSet>,
    config: AgentConfig,
}

impl Default for ExpertAgents {
    fn default() -> Self {
        Self::new(Arc::new(TemplateSet::shipped()), AgentConfig::default())
    }
}

impl ExpertAgents {
    pub fn new(templates: Arc<TemplateSet>, config: AgentConfig) -> Self {
        Self { templates, config }
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    fn request(&self, system: String, user: String, tag: String) -> ChatRequest {
        ChatRequest {
            model_id: self.config.model_id.clone(),
            messages: vec![ChatMessage::system(system), ChatMessage::user(user)],
            temperature: self.config.temperature,
            max_output_chars: self.config.max_output_chars,
            tag,
        }
    }

    /// Deterministic prompt for one dimension agent. Uses `ctx.tm_entries` as given.
    pub fn render_agent_prompt(&self, dimension: QualityDimension, ctx: &TaskContext) -> ChatRequest {
        let job = render_job(&ctx.job);
        let tm_block = render_tm_block(&ctx.tm_entries);
        let values = [
            ("source", ctx.source_text.as_str()),
            ("draft", draft_or_placeholder(&ctx.current_translation)),
            ("goal", ctx.translator_goal.as_str()),
            ("tm_block", tm_block.as_str()),
            ("job", job.as_str()),
        ];
        self.request(
            self.templates.charter(dimension).render(&values),
            self.templates.agent_task.render(&values),
            format!("agent:{}", dimension.label()),
        )
    }

    fn render_revision_prompt(
        &self,
        role: AgentRole,
        base: &TranslationCandidate,
        instruction: &str,
        ctx: &TaskContext,
    ) -> ChatRequest {
        let job = render_job(&ctx.job);
        let tm_block = render_tm_block(&ctx.tm_entries);
        let values = [
            ("source", ctx.source_text.as_str()),
            ("draft", base.text.as_str()),
            ("instruction", instruction),
            ("goal", ctx.translator_goal.as_str()),
            ("tm_block", tm_block.as_str()),
            ("job", job.as_str()),
        ];
        let system = match role {
            AgentRole::Dimension(d) => self.templates.charter(d).render(&values),
            _ => self.templates.editor.system.render(&values),
        };
        self.request(
            system,
            self.templates.revise_task.render(&values),
            format!("revise:{}", role.label()),
        )
    }

    fn render_editor_prompt(&self, ordered: &[&TranslationCandidate], ctx: &TaskContext) -> ChatRequest {
        let job = render_job(&ctx.job);
        let tm_block = render_tm_block(&ctx.tm_entries);
        let candidates = ordered
            .iter()
            .map(|c| {
                format!(
                    "[{}] candidate {}\ntranslation: {}\nexplanation: {}",
                    c.dimension.label(),
                    c.candidate_id,
                    c.text,
                    if c.explanation.is_empty() { "(none)" } else { &c.explanation }
                )
            })
            .collect::<Vec<_>>()
            .join("\n\n");
        let values = [
            ("source", ctx.source_text.as_str()),
            ("draft", draft_or_placeholder(&ctx.current_translation)),
            ("goal", ctx.translator_goal.as_str()),
            ("tm_block", tm_block.as_str()),
            ("job", job.as_str()),
            ("candidates", candidates.as_str()),
        ];
        self.request(
            self.templates.editor.system.render(&values),
            self.templates.editor.user.render(&values),
            "editor".into(),
        )
    }

    fn retrieve(
        &self,
        tm: &TmStore,
        ctx: &TaskContext,
        namespaces: Vec<TmNamespace>,
    ) -> Result<Vec<ScoredEntry>, AgentError> {
        let query = RetrievalQuery::new(ctx.source_text.clone(), ctx.language_pair.clone())
            .in_namespaces(namespaces)
            .top_k(self.config.top_k)
            .min_score(self.config.min_score);
        Ok(tm.retrieve(&query)?)
    }

    fn agent_namespaces(ctx: &TaskContext, role: AgentRole) -> Vec<TmNamespace> {
        let mut ns = vec![TmNamespace::global(), TmNamespace::job(ctx.job.job_id.clone())];
        if let AgentRole::Dimension(d) = role {
            ns.push(TmNamespace::agent(d));
        }
        ns
    }

    /// Calls the provider and parses the payload, reprompting once with a
    /// stricter format reminder if the first reply is unusable.
    fn call_structured(
        &self,
        provider: &dyn ChatProvider,
        request: ChatRequest,
    ) -> Result<AgentResponseRaw, AgentError> {
        let first = complete_with_retry(provider, &request, &self.config.retry)?;
        match parse_agent_response(&first.content) {
            Ok(parsed) => Ok(parsed),
            Err(_) => {
                let mut retry = request;
                retry.messages.push(ChatMessage::assistant(first.content));
                retry.messages.push(ChatMessage::user(STRICT_FORMAT_REMINDER));
                retry.tag.push_str(":reprompt");
                let second = complete_with_retry(provider, &retry, &self.config.retry)?;
                parse_agent_response(&second.content)
            }
        }
    }

    pub fn invoke_agent(
        &self,
        provider: &dyn ChatProvider,
        dimension: QualityDimension,
        ctx: &TaskContext,
        tm: &TmStore,
    ) -> Result<TranslationCandidate, AgentError> {
        ctx.validate()?;
        let role = AgentRole::Dimension(dimension);
        let mut ctx = ctx.clone();
        ctx.tm_entries = self.retrieve(tm, &ctx, Self::agent_namespaces(&ctx, role))?;
        let request = self.render_agent_prompt(dimension, &ctx);
        let parsed = self.call_structured(provider, request)?;
        Ok(TranslationCandidate {
            candidate_id: TranslationCandidate::new_id(),
            text: parsed.translation,
            dimension: role,
            explanation: parsed.explanation,
            tm_refs: filter_refs(parsed.tm_refs, &ctx.tm_entries),
            parent_id: None,
            round: 0,
            created_at: Utc::now(),
        })
    }

    /// Invokes several agents concurrently; results come back in canonical
    /// dimension order regardless of completion order.
    pub fn invoke_many(
        &self,
        provider: &dyn ChatProvider,
        dimensions: &[QualityDimension],
        ctx: &TaskContext,
        tm: &TmStore,
    ) -> Vec<(QualityDimension, Result<TranslationCandidate, AgentError>)> {
        let mut dims: Vec<QualityDimension> = dimensions.to_vec();
        dims.sort();
        dims.dedup();
        std::thread::scope(|scope| {
            let handles: Vec<_> = dims
                .iter()
                .map(|&d| (d, scope.spawn(move || self.invoke_agent(provider, d, ctx, tm))))
                .collect();
            handles
                .into_iter()
                .map(|(d, h)| {
                    let result = h.join().unwrap_or_else(|_| {
                        Err(AgentError::Provider(ProviderError::unavailable("agent thread panicked")))
                    });
                    (d, result)
                })
                .collect()
        })
    }

    /// Minimal-edit revision of `base` by the same agent.
    pub fn revise_candidate(
        &self,
        provider: &dyn ChatProvider,
        base: &TranslationCandidate,
        instruction: &str,
        ctx: &TaskContext,
        tm: &TmStore,
    ) -> Result<TranslationCandidate, AgentError> {
        ctx.validate()?;
        if instruction.trim().is_empty() {
            return Err(AgentError::Precondition("revision instruction must not be empty".into()));
        }
        if base.dimension == AgentRole::Translator {
            return Err(AgentError::Precondition(
                "the translator's own draft has no agent to revise it".into(),
            ));
        }
        let mut ctx = ctx.clone();
        ctx.tm_entries = self.retrieve(tm, &ctx, Self::agent_namespaces(&ctx, base.dimension))?;
        let request = self.render_revision_prompt(base.dimension, base, instruction, &ctx);
        let parsed = self.call_structured(provider, request)?;
        Ok(TranslationCandidate {
            candidate_id: TranslationCandidate::new_id(),
            text: parsed.translation,
            dimension: base.dimension,
            explanation: parsed.explanation,
            tm_refs: filter_refs(parsed.tm_refs, &ctx.tm_entries),
            parent_id: Some(base.candidate_id.clone()),
            round: base.round + 1,
            created_at: Utc::now(),
        })
    }

    /// Editor synthesis over `candidates`, presented in canonical dimension order.
    pub fn synthesize(
        &self,
        provider: &dyn ChatProvider,
        candidates: &[TranslationCandidate],
        ctx: &TaskContext,
    ) -> Result<TranslationCandidate, AgentError> {
        ctx.validate()?;
        if candidates.is_empty() {
            return Err(AgentError::Precondition("synthesis needs at least one candidate".into()));
        }
        let mut ordered: Vec<&TranslationCandidate> = candidates.iter().collect();
        ordered.sort_by(|a, b| {
            a.dimension
                .sort_key()
                .cmp(&b.dimension.sort_key())
                .then(a.round.cmp(&b.round))
                .then_with(|| a.candidate_id.cmp(&b.candidate_id))
        });
        let request = self.render_editor_prompt(&ordered, ctx);
        let parsed = self.call_structured(provider, request)?;
        let refs: BTreeSet<String> = candidates.iter().flat_map(|c| c.tm_refs.iter().cloned()).collect();
        Ok(TranslationCandidate {
            candidate_id: TranslationCandidate::new_id(),
            text: parsed.translation,
            dimension: AgentRole::Editor,
            explanation: parsed.explanation,
            tm_refs: refs.into_iter().collect(),
            parent_id: None,
            round: candidates.iter().map(|c| c.round).max().unwrap_or(0),
            created_at: Utc::now(),
        })
    }
}

/// Keeps only ids that were offered in the prompt, deduplicated, in citation order.
fn filter_refs(cited: Vec<String>, offered: &[ScoredEntry]) -> Vec<String> {
    let offered: HashMap<&str, ()> = offered.iter().map(|s| (s.entry.entry_id.as_str(), ())).collect();
    let mut seen = BTreeSet::new();
    cited
        .into_iter()
        .filter(|id| offered.contains_key(id.as_str()) && seen.insert(id.clone()))
        .collect()
}
