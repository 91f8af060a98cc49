//! Dimension router: picks the one to three MQM dimensions an instruction calls for.
//!
//! `route` never fails. Provider errors and unusable replies fall back to a
//! keyword heuristic, and every decision passes through `clamp_decision`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::{draft_or_placeholder, render_job, render_tm_block, AgentConfig, TaskContext};
use crate::json_extract::find_object;
use crate::mqm::{dimension_from_label, QualityDimension};
use crate::provider::{complete_with_retry, ChatMessage, ChatProvider, ChatRequest};
use crate::templates::TemplateSet;
use crate::tm::{RetrievalQuery, TmNamespace, TmStore};

pub const MAX_DIMENSIONS: usize = 3;
pub const DEFAULT_DIMENSIONS: [QualityDimension; 2] =
    [QualityDimension::Accuracy, QualityDimension::Fluency];

const ROUTER_FORMAT_REMINDER: &str = "Your previous reply could not be used. Reply again with exactly one JSON object and no other text, with the key \"dimensions\" holding a list of one to three dimension names and the key \"rationale\" holding a short explanation.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionOrigin {
    Llm,
    Fallback,
    ManualOverride,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub dimensions: Vec<QualityDimension>,
    pub rationale: String,
    pub origin: DecisionOrigin,
    #[serde(default)]
    pub instruction_echo: String,
}

impl RoutingDecision {
    /// True when the dimension list is non-empty, at most three long, sorted and
    /// free of duplicates.
    pub fn is_well_formed(&self) -> bool {
        !self.dimensions.is_empty()
            && self.dimensions.len() <= MAX_DIMENSIONS
            && self.dimensions.windows(2).all(|w| w[0] < w[1])
    }
}

/// Lenient label parsing, dedupe, canonical sort and truncation to three.
pub fn clamp_decision<S: AsRef<str>>(raw_labels: &[S], rationale: &str) -> RoutingDecision {
    let mut dims: Vec<QualityDimension> = raw_labels
        .iter()
        .filter_map(|l| dimension_from_label(l.as_ref()).ok())
        .collect();
    dims.sort();
    dims.dedup();
    dims.truncate(MAX_DIMENSIONS);
    let mut rationale = rationale.trim().to_string();
    if dims.is_empty() {
        dims = DEFAULT_DIMENSIONS.to_vec();
        if !rationale.is_empty() {
            rationale.push(' ');
        }
        rationale.push_str("(defaulted)");
    }
    RoutingDecision {
        dimensions: dims,
        rationale,
        origin: DecisionOrigin::Llm,
        instruction_echo: String::new(),
    }
}

const KEYWORDS: &[(&[&str], QualityDimension)] = &[
    (&["term", "glossary", "terminology"], QualityDimension::Terminology),
    (&["tone", "formal", "style", "register"], QualityDimension::Style),
    (&["audience", "reader"], QualityDimension::AudienceAppropriateness),
    (&["date", "number", "locale", "unit", "currency"], QualityDimension::LocaleConvention),
    (&["tag", "markup", "format", "layout"], QualityDimension::DesignAndMarkup),
    (&["grammar", "fluent", "natural"], QualityDimension::Fluency),
    (&["meaning", "accurate", "mistranslat", "omission"], QualityDimension::Accuracy),
];

// A keyword hits when some word of the instruction starts with it, so "terms"
// and "formatting" match while "determine" and "information" do not.
fn word_prefix_hit(text: &str, keyword: &str) -> bool {
    text.match_indices(keyword).any(|(idx, _)| {
        text[..idx]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric())
    })
}

/// Deterministic keyword heuristic used when the LLM router is unavailable.
pub fn fallback_route(instruction: &str) -> RoutingDecision {
    let lowered = instruction.to_lowercase();
    let mut dims = Vec::new();
    let mut matched = Vec::new();
    for (keywords, dim) in KEYWORDS {
        let hits: Vec<&str> = keywords
            .iter()
            .copied()
            .filter(|k| word_prefix_hit(&lowered, k))
            .collect();
        if !hits.is_empty() {
            dims.push(*dim);
            matched.extend(hits);
        }
    }
    dims.sort();
    dims.truncate(MAX_DIMENSIONS);
    let rationale = if dims.is_empty() {
        dims = DEFAULT_DIMENSIONS.to_vec();
        "keyword fallback: no keywords matched (defaulted)".to_string()
    } else {
        format!("keyword fallback: {}", matched.join(", "))
    };
    RoutingDecision {
        dimensions: dims,
        rationale,
        origin: DecisionOrigin::Fallback,
        instruction_echo: instruction.to_string(),
    }
}

fn parse_router_reply(raw: &str) -> Option<RoutingDecision> {
    find_object(raw, |map| {
        let labels: Vec<String> = match map.get("dimensions")? {
            serde_json::Value::Array(items) => items
                .iter()
                .filter_map(|v| v.as_str().map(str::to_string))
                .collect(),
            serde_json::Value::String(single) => vec![single.clone()],
            _ => return None,
        };
        let rationale = map
            .get("rationale")
            .and_then(|r| r.as_str())
            .unwrap_or_default();
        Some(clamp_decision(&labels, rationale))
    })
}

#[derive(Debug, Clone)]
pub struct DimensionRouter {
    templates: Arc<TemplateSet>,
    config: AgentConfig,
}

impl Default for DimensionRouter {
    fn default() -> Self {
        Self::new(Arc::new(TemplateSet::shipped()), AgentConfig::default())
    }
}

impl DimensionRouter {
    pub fn new(templates: Arc<TemplateSet>, config: AgentConfig) -> Self {
        Self { templates, config }
    }

    pub fn render_prompt(&self, instruction: &str, ctx: &TaskContext) -> ChatRequest {
        let job = render_job(&ctx.job);
        let tm_block = render_tm_block(&ctx.tm_entries);
        let values = [
            ("instruction", instruction),
            ("source", ctx.source_text.as_str()),
            ("draft", draft_or_placeholder(&ctx.current_translation)),
            ("tm_block", tm_block.as_str()),
            ("job", job.as_str()),
        ];
        ChatRequest {
            model_id: self.config.model_id.clone(),
            messages: vec![
                ChatMessage::system(self.templates.router.system.render(&values)),
                ChatMessage::user(self.templates.router.user.render(&values)),
            ],
            temperature: self.config.temperature,
            max_output_chars: self.config.max_output_chars,
            tag: "router".into(),
        }
    }

    pub fn route(
        &self,
        provider: &dyn ChatProvider,
        instruction: &str,
        ctx: &TaskContext,
        tm: &TmStore,
    ) -> RoutingDecision {
        if instruction.trim().is_empty() || ctx.source_text.trim().is_empty() {
            return fallback_route(instruction);
        }
        let mut ctx = ctx.clone();
        let query = RetrievalQuery::new(ctx.source_text.clone(), ctx.language_pair.clone())
            .in_namespaces(vec![TmNamespace::global(), TmNamespace::job(ctx.job.job_id.clone())])
            .top_k(self.config.top_k)
            .min_score(self.config.min_score);
        ctx.tm_entries = tm.retrieve(&query).unwrap_or_default();

        let request = self.render_prompt(instruction, &ctx);
        let decision = complete_with_retry(provider, &request, &self.config.retry)
            .ok()
            .and_then(|first| match parse_router_reply(&first.content) {
                Some(d) => Some(d),
                None => {
                    let mut retry = request.clone();
                    retry.messages.push(ChatMessage::assistant(first.content));
                    retry.messages.push(ChatMessage::user(ROUTER_FORMAT_REMINDER));
                    retry.tag.push_str(":reprompt");
                    complete_with_retry(provider, &retry, &self.config.retry)
                        .ok()
                        .and_then(|second| parse_router_reply(&second.content))
                }
            });
        match decision {
            Some(mut d) => {
                d.instruction_echo = instruction.to_string();
                d
            }
            None => {
                log::info!("router fell back to keyword routing for {instruction:?}");
                fallback_route(instruction)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mqm::{JobContext, LanguagePair};
    use crate::provider::{MockProvider, MockRule, MockScript, RetryPolicy};
    use QualityDimension::*;

    fn router() -> DimensionRouter {
        DimensionRouter::new(
            Arc::new(TemplateSet::shipped()),
            AgentConfig {
                retry: RetryPolicy::no_backoff(1),
                ..AgentConfig::default()
            },
        )
    }

    fn ctx() -> TaskContext {
        TaskContext {
            source_text: "The meeting is on 03/04/2025.".into(),
            current_translation: String::new(),
            language_pair: LanguagePair::new("en", "de").unwrap(),
            job: JobContext::new("job-r"),
            translator_goal: String::new(),
            tm_entries: vec![],
        }
    }

    #[test]
    fn clamp_dedupes_and_sorts() {
        let d = clamp_decision(&["Style", "style", "Accuracy"], "r");
        assert_eq!(d.dimensions, vec![Accuracy, Style]);
        assert_eq!(d.rationale, "r");
    }

    #[test]
    fn clamp_defaults_on_garbage() {
        let d = clamp_decision(&["nonsense"], "because");
        assert_eq!(d.dimensions, vec![Accuracy, Fluency]);
        assert!(d.rationale.ends_with("(defaulted)"));
        let empty: [&str; 0] = [];
        assert_eq!(clamp_decision(&empty, "").dimensions, vec![Accuracy, Fluency]);
    }

    #[test]
    fn clamp_truncates_to_three() {
        let labels: Vec<&str> = crate::mqm::all_dimensions().iter().rev().map(|d| d.label()).collect();
        assert_eq!(clamp_decision(&labels, "").dimensions, vec![Accuracy, Terminology, Fluency]);
    }

    #[test]
    fn fallback_keyword_table() {
        let d = fallback_route("fix the glossary terms and soften tone");
        assert_eq!(d.dimensions, vec![Terminology, Style]);
        assert_eq!(d.origin, DecisionOrigin::Fallback);
        assert!(d.rationale.starts_with("keyword fallback: "));
        assert!(d.rationale.contains("glossary"));

        assert_eq!(fallback_route("make it better").dimensions, vec![Accuracy, Fluency]);

        let many = fallback_route("check tone, dates, tags, grammar and meaning");
        assert_eq!(many.dimensions, vec![Accuracy, Fluency, Style]);
    }

    #[test]
    fn fallback_matches_word_starts_only() {
        assert_eq!(
            fallback_route("please update the information").dimensions,
            vec![Accuracy, Fluency]
        );
        assert_eq!(fallback_route("Formatting issues").dimensions, vec![DesignAndMarkup]);
        assert_eq!(fallback_route("a mistranslation").dimensions, vec![Accuracy]);
    }

    #[test]
    fn fallback_is_pure() {
        assert_eq!(fallback_route("formal register"), fallback_route("formal register"));
    }

    #[test]
    fn llm_route_parses_reply() {
        let mock = MockProvider::new(MockScript::failing().rule(MockRule::text(
            "router",
            r#"{"dimensions":["Terminology","Style"],"rationale":"terms then tone"}"#,
        )));
        let d = router().route(&mock, "watch the legal terms", &ctx(), &TmStore::in_memory());
        assert_eq!(d.dimensions, vec![Terminology, Style]);
        assert_eq!(d.origin, DecisionOrigin::Llm);
        assert_eq!(d.rationale, "terms then tone");
        assert_eq!(d.instruction_echo, "watch the legal terms");
        let prompt = mock.call_log().snapshot()[0].request.concatenated();
        assert!(prompt.contains("watch the legal terms") && prompt.contains("03/04/2025"));
    }

    #[test]
    fn llm_route_clamps_long_lists() {
        let mock = MockProvider::new(MockScript::failing().rule(MockRule::text(
            "router",
            r#"{"dimensions":["Design and Markup","Locale Convention","Style","Fluency","Accuracy"],"rationale":"all"}"#,
        )));
        let d = router().route(&mock, "everything", &ctx(), &TmStore::in_memory());
        assert_eq!(d.dimensions, vec![Accuracy, Fluency, Style]);
        assert_eq!(d.origin, DecisionOrigin::Llm);
    }

    #[test]
    fn provider_error_falls_back() {
        let mock = MockProvider::new(MockScript::failing());
        let d = router().route(&mock, "fix the dates", &ctx(), &TmStore::in_memory());
        assert_eq!(d.origin, DecisionOrigin::Fallback);
        assert_eq!(d.dimensions, vec![LocaleConvention]);
    }

    #[test]
    fn unparseable_reply_reprompts_then_falls_back() {
        let mock = MockProvider::new(MockScript::echo());
        let d = router().route(&mock, "fix the dates", &ctx(), &TmStore::in_memory());
        assert_eq!(d.origin, DecisionOrigin::Fallback);
        assert_eq!(mock.call_log().len(), 2);
    }

    #[test]
    fn reprompt_recovers() {
        let mock = MockProvider::new(
            MockScript::failing()
                .rule(MockRule::text(":reprompt", r#"{"dimensions":["Fluency"],"rationale":"ok"}"#))
                .rule(MockRule::text("router", "I think fluency matters.")),
        );
        let d = router().route(&mock, "smooth it", &ctx(), &TmStore::in_memory());
        assert_eq!(d.dimensions, vec![Fluency]);
        assert_eq!(d.origin, DecisionOrigin::Llm);
    }

    #[test]
    fn empty_instruction_never_raises() {
        let mock = MockProvider::new(MockScript::echo());
        let d = router().route(&mock, "  ", &ctx(), &TmStore::in_memory());
        assert!(d.is_well_formed());
        assert!(mock.call_log().is_empty());
    }
}
