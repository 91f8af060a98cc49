//! Event-sourced state of one segment's collaborative refinement.
//!
//! Every state change is an appended [`SessionEvent`]; [`Session::apply`] is
//! the only code that mutates a session, so replaying a log rebuilds exactly
//! the live state. Status moves drafting → routed → reviewing, back and forth
//! between routed and reviewing as the translator re-routes, and ends at
//! confirmed, after which nothing more is accepted.

mod engine;
mod store;

use std::collections::HashMap;

use chrono::{DateTime, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, AgentRole, TaskContext, TranslationCandidate};
use crate::mqm::{JobContext, LanguagePair, QualityDimension};
use crate::router::{DecisionOrigin, RoutingDecision};

pub use engine::SessionEngine;
pub use store::{read_event_log, write_event_log, SessionHandle, SessionRepository, SessionSlot};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("source text must not be empty")]
    EmptySource,
    #[error("invalid session input: {0}")]
    InvalidInput(String),
    #[error("session is confirmed and can no longer change")]
    SessionFinalized,
    #[error("unknown candidate {0}")]
    UnknownCandidate(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("invalid dimension set: {0}")]
    InvalidDimensionSet(String),
    #[error("no routing decision to act on")]
    NoDecision,
    #[error("no agent candidates to synthesize")]
    NoCandidates,
    #[error("every selected agent failed")]
    AllAgentsFailed(Vec<AgentFailure>),
    #[error("{op} is not allowed while the session is {status}")]
    InvalidState { op: &'static str, status: SessionStatus },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("translation memory write failed: {0}")]
    TmWrite(String),
    #[error("event log is corrupt at seq {seq}: {reason}")]
    CorruptLog { seq: u64, reason: String },
    #[error("event log is empty; it must start with a created event")]
    EmptyLog,
    #[error("session storage failure: {0}")]
    Storage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Drafting,
    Routed,
    Reviewing,
    Confirmed,
}

impl std::fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Drafting => "drafting",
            Self::Routed => "routed",
            Self::Reviewing => "reviewing",
            Self::Confirmed => "confirmed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentFailure {
    pub dimension: QualityDimension,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventPayload {
    Created {
        session_id: String,
        source_text: String,
        draft: Option<String>,
        goal: String,
        language_pair: LanguagePair,
        job: JobContext,
        draft_candidate: Option<TranslationCandidate>,
    },
    RouteRequested {
        instruction: String,
    },
    Routed {
        decision: RoutingDecision,
    },
    AgentsInvoked {
        candidates: Vec<TranslationCandidate>,
        failures: Vec<AgentFailure>,
    },
    RevisionRequested {
        candidate_id: String,
        instruction: String,
    },
    RevisionAdded {
        candidate: TranslationCandidate,
    },
    SynthRequested {
        candidate_ids: Vec<String>,
    },
    SynthAdded {
        candidate: TranslationCandidate,
    },
    OverrideApplied {
        decision: RoutingDecision,
    },
    Confirmed {
        candidate_id: String,
        tm_entry_id: String,
    },
}

impl EventPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Created { .. } => "created",
            Self::RouteRequested { .. } => "route_requested",
            Self::Routed { .. } => "routed",
            Self::AgentsInvoked { .. } => "agents_invoked",
            Self::RevisionRequested { .. } => "revision_requested",
            Self::RevisionAdded { .. } => "revision_added",
            Self::SynthRequested { .. } => "synth_requested",
            Self::SynthAdded { .. } => "synth_added",
            Self::OverrideApplied { .. } => "override_applied",
            Self::Confirmed { .. } => "confirmed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub payload: EventPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub source_text: String,
    pub draft: Option<String>,
    pub goal: String,
    pub language_pair: LanguagePair,
    pub job: JobContext,
    pub status: SessionStatus,
    pub current_decision: Option<RoutingDecision>,
    pub candidates: IndexMap<String, TranslationCandidate>,
    pub confirmed_id: Option<String>,
    pub events: Vec<SessionEvent>,
    pub created_at: DateTime<Utc>,
}

fn corrupt(seq: u64, reason: impl Into<String>) -> SessionError {
    SessionError::CorruptLog {
        seq,
        reason: reason.into(),
    }
}

impl Session {
    /// Starts a session. A non-empty draft becomes a round-0 translator candidate.
    pub fn create(
        source: &str,
        draft: Option<&str>,
        goal: &str,
        language_pair: LanguagePair,
        job: JobContext,
    ) -> Result<Self, SessionError> {
        if source.trim().is_empty() {
            return Err(SessionError::EmptySource);
        }
        language_pair
            .validate()
            .map_err(|e| SessionError::InvalidInput(e.to_string()))?;
        job.validate()
            .map_err(|e| SessionError::InvalidInput(e.to_string()))?;
        let draft = draft.filter(|d| !d.trim().is_empty()).map(str::to_string);
        let event = SessionEvent {
            seq: 0,
            at: Utc::now(),
            payload: EventPayload::Created {
                session_id: format!("ses-{}", uuid::Uuid::new_v4().simple()),
                source_text: source.to_string(),
                draft_candidate: draft.as_deref().map(TranslationCandidate::translator_draft),
                draft,
                goal: goal.to_string(),
                language_pair,
                job,
            },
        };
        Self::from_created(&event)
    }

    fn from_created(event: &SessionEvent) -> Result<Self, SessionError> {
        let EventPayload::Created {
            session_id,
            source_text,
            draft,
            goal,
            language_pair,
            job,
            draft_candidate,
        } = &event.payload
        else {
            return Err(corrupt(event.seq, "first event must be created"));
        };
        if event.seq != 0 {
            return Err(corrupt(event.seq, "created event must have seq 0"));
        }
        if source_text.trim().is_empty() {
            return Err(corrupt(0, "empty source text"));
        }
        let mut candidates = IndexMap::new();
        if let Some(c) = draft_candidate {
            if c.round != 0 || c.parent_id.is_some() || c.dimension != AgentRole::Translator {
                return Err(corrupt(0, "draft candidate must be a round-0 translator candidate"));
            }
            candidates.insert(c.candidate_id.clone(), c.clone());
        }
        Ok(Self {
            session_id: session_id.clone(),
            source_text: source_text.clone(),
            draft: draft.clone(),
            goal: goal.clone(),
            language_pair: language_pair.clone(),
            job: job.clone(),
            status: SessionStatus::Drafting,
            current_decision: None,
            candidates,
            confirmed_id: None,
            events: vec![event.clone()],
            created_at: event.at,
        })
    }

    /// Rebuilds a session from its event log.
    pub fn replay(events: &[SessionEvent]) -> Result<Self, SessionError> {
        let (first, rest) = events.split_first().ok_or(SessionError::EmptyLog)?;
        let mut session = Self::from_created(first)?;
        for event in rest {
            session.apply(event.clone())?;
        }
        Ok(session)
    }

    /// Validates `event` against the current state and folds it in.
    pub fn apply(&mut self, event: SessionEvent) -> Result<(), SessionError> {
        let seq = event.seq;
        let expected = self.events.len() as u64;
        if seq != expected {
            return Err(corrupt(expected, format!("expected seq {expected}, found {seq}")));
        }
        if self.status == SessionStatus::Confirmed {
            return Err(corrupt(seq, "no events may follow confirmation"));
        }
        match &event.payload {
            EventPayload::Created { .. } => return Err(corrupt(seq, "duplicate created event")),
            EventPayload::RouteRequested { .. } | EventPayload::RevisionRequested { .. } => {
                if let EventPayload::RevisionRequested { candidate_id, .. } = &event.payload {
                    if !self.candidates.contains_key(candidate_id) {
                        return Err(corrupt(seq, format!("revision of unknown candidate {candidate_id}")));
                    }
                }
            }
            EventPayload::Routed { decision } => {
                if !decision.is_well_formed() {
                    return Err(corrupt(seq, "malformed routing decision"));
                }
                self.current_decision = Some(decision.clone());
                self.status = SessionStatus::Routed;
            }
            EventPayload::OverrideApplied { decision } => {
                if !decision.is_well_formed() || decision.origin != DecisionOrigin::ManualOverride {
                    return Err(corrupt(seq, "malformed override decision"));
                }
                if !matches!(self.status, SessionStatus::Routed | SessionStatus::Reviewing) {
                    return Err(corrupt(seq, format!("override while {}", self.status)));
                }
                self.current_decision = Some(decision.clone());
                self.status = SessionStatus::Routed;
            }
            EventPayload::AgentsInvoked { candidates, .. } => {
                if self.current_decision.is_none() {
                    return Err(corrupt(seq, "agents invoked without a decision"));
                }
                for c in candidates {
                    if c.parent_id.is_some() || c.round != 0 || c.dimension.dimension().is_none() {
                        return Err(corrupt(seq, "agent candidates must be round-0 dimension candidates"));
                    }
                    self.insert_candidate(seq, c)?;
                }
                if !candidates.is_empty() {
                    self.status = SessionStatus::Reviewing;
                }
            }
            EventPayload::RevisionAdded { candidate } => {
                let parent_id = candidate
                    .parent_id
                    .as_ref()
                    .ok_or_else(|| corrupt(seq, "revision without parent"))?;
                let parent = self
                    .candidates
                    .get(parent_id)
                    .ok_or_else(|| corrupt(seq, format!("revision of unknown parent {parent_id}")))?;
                if candidate.round != parent.round + 1 || candidate.dimension != parent.dimension {
                    return Err(corrupt(seq, "revision must keep the agent and advance the round by one"));
                }
                self.insert_candidate(seq, candidate)?;
            }
            EventPayload::SynthRequested { candidate_ids } => {
                if let Some(missing) = candidate_ids.iter().find(|id| !self.candidates.contains_key(*id)) {
                    return Err(corrupt(seq, format!("synthesis over unknown candidate {missing}")));
                }
            }
            EventPayload::SynthAdded { candidate } => {
                if candidate.dimension != AgentRole::Editor {
                    return Err(corrupt(seq, "synthesis result must come from the editor"));
                }
                self.insert_candidate(seq, candidate)?;
            }
            EventPayload::Confirmed { candidate_id, .. } => {
                if !self.candidates.contains_key(candidate_id) {
                    return Err(corrupt(seq, format!("confirmation of unknown candidate {candidate_id}")));
                }
                self.confirmed_id = Some(candidate_id.clone());
                self.status = SessionStatus::Confirmed;
            }
        }
        self.events.push(event);
        Ok(())
    }

    fn insert_candidate(&mut self, seq: u64, c: &TranslationCandidate) -> Result<(), SessionError> {
        if c.text.trim().is_empty() {
            return Err(corrupt(seq, "candidate text is empty"));
        }
        if self.candidates.contains_key(&c.candidate_id) {
            return Err(corrupt(seq, format!("duplicate candidate id {}", c.candidate_id)));
        }
        self.candidates.insert(c.candidate_id.clone(), c.clone());
        Ok(())
    }

    /// Appends a new event stamped with the next seq and the current time.
    pub(crate) fn append(&mut self, payload: EventPayload) -> Result<(), SessionError> {
        let event = SessionEvent {
            seq: self.events.len() as u64,
            at: Utc::now(),
            payload,
        };
        self.apply(event)
    }

    pub fn is_confirmed(&self) -> bool {
        self.status == SessionStatus::Confirmed
    }

    pub fn candidate(&self, id: &str) -> Option<&TranslationCandidate> {
        self.candidates.get(id)
    }

    /// Candidates in canonical presentation order (dimension, then round, then id).
    pub fn candidates_in_canonical_order(&self) -> Vec<&TranslationCandidate> {
        let mut all: Vec<&TranslationCandidate> = self.candidates.values().collect();
        all.sort_by(|a, b| {
            a.dimension
                .sort_key()
                .cmp(&b.dimension.sort_key())
                .then(a.round.cmp(&b.round))
                .then_with(|| a.candidate_id.cmp(&b.candidate_id))
        });
        all
    }

    /// Candidate ids of the most recent agents_invoked batch that produced any.
    pub fn latest_batch(&self) -> Vec<String> {
        self.events
            .iter()
            .rev()
            .find_map(|e| match &e.payload {
                EventPayload::AgentsInvoked { candidates, .. } if !candidates.is_empty() => {
                    Some(candidates.iter().map(|c| c.candidate_id.clone()).collect())
                }
                _ => None,
            })
            .unwrap_or_default()
    }

    /// Leaves of the revision tree rooted at `id` (the candidate itself if unrevised).
    pub fn revision_leaves(&self, id: &str) -> Vec<String> {
        let mut children: HashMap<&str, Vec<&str>> = HashMap::new();
        for c in self.candidates.values() {
            if let Some(p) = &c.parent_id {
                children.entry(p.as_str()).or_default().push(c.candidate_id.as_str());
            }
        }
        let mut leaves = Vec::new();
        let mut stack = vec![id];
        while let Some(cur) = stack.pop() {
            match children.get(cur) {
                Some(kids) => stack.extend(kids.iter().rev()),
                None => leaves.push(cur.to_string()),
            }
        }
        leaves
    }

    pub fn task_context(&self) -> TaskContext {
        TaskContext {
            source_text: self.source_text.clone(),
            current_translation: self.draft.clone().unwrap_or_default(),
            language_pair: self.language_pair.clone(),
            job: self.job.clone(),
            translator_goal: self.goal.clone(),
            tm_entries: Vec::new(),
        }
    }
}
