use std::sync::Arc;

use crate::agents::{AgentConfig, ExpertAgents, TranslationCandidate};
use crate::mqm::{dimension_from_label, QualityDimension};
use crate::provider::ChatProvider;
use crate::router::{DecisionOrigin, DimensionRouter, RoutingDecision, MAX_DIMENSIONS};
use crate::templates::TemplateSet;
use crate::tm::TmStore;

use super::{AgentFailure, EventPayload, Session, SessionError, SessionStatus};

/// Runs the translator-driven operations on a session. Only `confirm` writes
/// to the translation memory.
#[derive(Debug, Clone, Default)]
pub struct SessionEngine {
    agents: ExpertAgents,
    router: DimensionRouter,
}

impl SessionEngine {
    pub fn new(templates: Arc<TemplateSet>, config: AgentConfig) -> Self {
        Self {
            agents: ExpertAgents::new(templates.clone(), config.clone()),
            router: DimensionRouter::new(templates, config),
        }
    }

    pub fn agents(&self) -> &ExpertAgents {
        &self.agents
    }

    pub fn router(&self) -> &DimensionRouter {
        &self.router
    }

    fn ensure_open(session: &Session) -> Result<(), SessionError> {
        if session.is_confirmed() {
            Err(SessionError::SessionFinalized)
        } else {
            Ok(())
        }
    }

    /// Outer loop: (re-)route. Each call replaces the current decision.
    pub fn request_routing(
        &self,
        session: &mut Session,
        provider: &dyn ChatProvider,
        instruction: &str,
        tm: &TmStore,
    ) -> Result<(), SessionError> {
        Self::ensure_open(session)?;
        let decision = self
            .router
            .route(provider, instruction, &session.task_context(), tm);
        session.append(EventPayload::RouteRequested {
            instruction: instruction.to_string(),
        })?;
        session.append(EventPayload::Routed { decision })
    }

    /// Replaces the decision with a translator-chosen dimension set.
    pub fn apply_override<S: AsRef<str>>(
        &self,
        session: &mut Session,
        labels: &[S],
    ) -> Result<(), SessionError> {
        Self::ensure_open(session)?;
        if !matches!(session.status, SessionStatus::Routed | SessionStatus::Reviewing) {
            return Err(SessionError::InvalidState {
                op: "override",
                status: session.status,
            });
        }
        let mut dims = labels
            .iter()
            .map(|l| {
                dimension_from_label(l.as_ref())
                    .map_err(|e| SessionError::InvalidDimensionSet(e.to_string()))
            })
            .collect::<Result<Vec<QualityDimension>, _>>()?;
        dims.sort();
        dims.dedup();
        if dims.is_empty() || dims.len() > MAX_DIMENSIONS {
            return Err(SessionError::InvalidDimensionSet(format!(
                "override needs 1 to {MAX_DIMENSIONS} distinct dimensions, got {}",
                dims.len()
            )));
        }
        let names: Vec<&str> = dims.iter().map(|d| d.label()).collect();
        session.append(EventPayload::OverrideApplied {
            decision: RoutingDecision {
                rationale: format!("translator override: {}", names.join(", ")),
                dimensions: dims,
                origin: DecisionOrigin::ManualOverride,
                instruction_echo: String::new(),
            },
        })
    }

    /// Invokes one agent per selected dimension. Partial failures are recorded
    /// in the event; if every agent fails the event is still logged and
    /// `AllAgentsFailed` is returned.
    pub fn invoke_selected(
        &self,
        session: &mut Session,
        provider: &dyn ChatProvider,
        tm: &TmStore,
    ) -> Result<(), SessionError> {
        Self::ensure_open(session)?;
        let decision = session.current_decision.clone().ok_or(SessionError::NoDecision)?;
        if !matches!(session.status, SessionStatus::Routed | SessionStatus::Reviewing) {
            return Err(SessionError::NoDecision);
        }
        let results = self
            .agents
            .invoke_many(provider, &decision.dimensions, &session.task_context(), tm);
        let mut candidates = Vec::new();
        let mut failures = Vec::new();
        for (dimension, result) in results {
            match result {
                Ok(c) => candidates.push(c),
                Err(e) => failures.push(AgentFailure {
                    dimension,
                    error: e.to_string(),
                }),
            }
        }
        let all_failed = candidates.is_empty();
        session.append(EventPayload::AgentsInvoked {
            candidates,
            failures: failures.clone(),
        })?;
        if all_failed {
            return Err(SessionError::AllAgentsFailed(failures));
        }
        Ok(())
    }

    /// Inner loop: targeted revision of one candidate by its own agent.
    pub fn request_revision(
        &self,
        session: &mut Session,
        provider: &dyn ChatProvider,
        candidate_id: &str,
        instruction: &str,
        tm: &TmStore,
    ) -> Result<(), SessionError> {
        Self::ensure_open(session)?;
        let base = session
            .candidate(candidate_id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownCandidate(candidate_id.to_string()))?;
        if session.status != SessionStatus::Reviewing {
            return Err(SessionError::InvalidState {
                op: "revision",
                status: session.status,
            });
        }
        let child =
            self.agents
                .revise_candidate(provider, &base, instruction, &session.task_context(), tm)?;
        session.append(EventPayload::RevisionRequested {
            candidate_id: candidate_id.to_string(),
            instruction: instruction.to_string(),
        })?;
        session.append(EventPayload::RevisionAdded { candidate: child })
    }

    /// Editor synthesis over the latest agent batch, using the newest revision
    /// leaves of each batch member.
    pub fn request_synthesis(
        &self,
        session: &mut Session,
        provider: &dyn ChatProvider,
    ) -> Result<(), SessionError> {
        Self::ensure_open(session)?;
        let batch = session.latest_batch();
        if batch.is_empty() {
            return Err(SessionError::NoCandidates);
        }
        if session.status != SessionStatus::Reviewing {
            return Err(SessionError::InvalidState {
                op: "synthesis",
                status: session.status,
            });
        }
        let ids: Vec<String> = batch.iter().flat_map(|id| session.revision_leaves(id)).collect();
        let inputs: Vec<TranslationCandidate> = ids
            .iter()
            .filter_map(|id| session.candidate(id).cloned())
            .collect();
        let merged = self
            .agents
            .synthesize(provider, &inputs, &session.task_context())?;
        session.append(EventPayload::SynthRequested { candidate_ids: ids })?;
        session.append(EventPayload::SynthAdded { candidate: merged })
    }

    /// Accepts a candidate, writes exactly one confirmed TM entry and freezes
    /// the session.
    pub fn confirm(
        &self,
        session: &mut Session,
        candidate_id: &str,
        tm: &TmStore,
    ) -> Result<(), SessionError> {
        Self::ensure_open(session)?;
        let candidate = session
            .candidate(candidate_id)
            .ok_or_else(|| SessionError::UnknownCandidate(candidate_id.to_string()))?;
        let tm_entry_id = tm
            .record_confirmation(
                &session.source_text,
                &candidate.text,
                &session.language_pair,
                &session.job,
            )
            .map_err(|e| SessionError::TmWrite(e.to_string()))?;
        session.append(EventPayload::Confirmed {
            candidate_id: candidate_id.to_string(),
            tm_entry_id,
        })
    }
}
