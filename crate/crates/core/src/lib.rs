//! Human-in-the-loop translation with MQM-aligned expert agents.
//!
//! A translator drives a session: the [`router`] proposes which quality
//! dimensions to work on, the [`agents`] produce one candidate each, the
//! translator revises or confirms, and confirmations flow back into the shared
//! [`tm`]. The [`eval`] module runs the agent-only ablation protocol.

pub mod agents;
pub mod api;
pub mod config;
pub mod eval;
mod json_extract;
pub mod mqm;
pub mod provider;
pub mod router;
pub mod session;
pub mod templates;
pub mod tm;

pub use agents::{AgentRole, ExpertAgents, TaskContext, TranslationCandidate};
pub use mqm::{all_dimensions, dimension_from_label, JobContext, LanguagePair, QualityDimension};
pub use router::{DimensionRouter, RoutingDecision};
pub use tm::TmStore;
