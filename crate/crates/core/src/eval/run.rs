use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agents::{AgentConfig, ExpertAgents, TaskContext};
use crate::json_extract::find_object;
use crate::mqm::{all_dimensions, JobContext, LanguagePair};
use crate::provider::{
    complete_with_retry, CallLog, ChatProvider, ChatRequest, ChatResponse, ProviderError,
};
use crate::router::DimensionRouter;
use crate::templates::{PromptTemplate, TemplateSet};
use crate::tm::TmStore;

use super::metrics::{bleu_corpus, meteor_lite_corpus, BleuConfig, MeteorConfig};
use super::{EvalError, EvalItem};

/// The fixed routing instruction for unattended agent runs.
pub const CHORUS_INSTRUCTION: &str = "produce a publication-quality translation";

/// Job id used for the retrieval context of evaluation items.
const EVAL_JOB_ID: &str = "eval";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    ZeroShot,
    SelfRefine,
    ChorusAgents,
}

impl Condition {
    pub fn name(self) -> &'static str {
        match self {
            Self::ZeroShot => "zero_shot",
            Self::SelfRefine => "self_refine",
            Self::ChorusAgents => "chorus_agents",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Condition {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "zero_shot" => Ok(Self::ZeroShot),
            "self_refine" => Ok(Self::SelfRefine),
            "chorus_agents" | "chorus" => Ok(Self::ChorusAgents),
            other => Err(EvalError::InvalidArgument(format!("unknown condition {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub agent: AgentConfig,
    pub seed: u64,
    pub templates: Arc<TemplateSet>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            agent: AgentConfig::default(),
            seed: 0,
            templates: Arc::new(TemplateSet::shipped()),
        }
    }
}

/// The configuration snapshot written to `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub condition: Condition,
    pub model_id: String,
    pub seed: u64,
    pub provider: String,
    pub agent: AgentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub routing_instruction: Option<String>,
    pub n_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub item_id: String,
    pub language_pair: LanguagePair,
    pub source: String,
    pub reference: String,
    pub hypothesis: String,
    pub provider_calls: u32,
    #[serde(default)]
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRun {
    pub config: RunConfig,
    /// Sorted by item id.
    pub items: Vec<ItemResult>,
}

impl ConditionRun {
    pub fn condition(&self) -> Condition {
        self.config.condition
    }

    pub fn model_id(&self) -> &str {
        &self.config.model_id
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    /// Items grouped by direction ("en-de"), each group sorted by item id.
    pub fn by_direction(&self) -> BTreeMap<String, Vec<&ItemResult>> {
        let mut groups: BTreeMap<String, Vec<&ItemResult>> = BTreeMap::new();
        for item in &self.items {
            groups.entry(item.language_pair.direction()).or_default().push(item);
        }
        groups
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionScore {
    pub bleu: f64,
    pub meteor_lite: f64,
    pub n_items: usize,
}

/// Counts every provider call made on behalf of one item.
struct Counting<'a> {
    inner: &'a dyn ChatProvider,
    calls: AtomicU32,
}

impl ChatProvider for Counting<'_> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }

    fn call_log(&self) -> &CallLog {
        self.inner.call_log()
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}

struct Runner<'a> {
    condition: Condition,
    cfg: &'a EvalConfig,
    tm: &'a TmStore,
    agents: ExpertAgents,
    router: DimensionRouter,
}

impl Runner<'_> {
    fn request(&self, template: &PromptTemplate, values: &[(&str, &str)], tag: &str) -> ChatRequest {
        let mut request = ChatRequest::new(
            self.cfg.agent.model_id.clone(),
            vec![
                crate::provider::ChatMessage::system(template.system.render(values)),
                crate::provider::ChatMessage::user(template.user.render(values)),
            ],
        )
        .with_temperature(self.cfg.agent.temperature)
        .with_tag(tag);
        request.max_output_chars = self.cfg.agent.max_output_chars;
        request
    }

    fn translate(&self, provider: &dyn ChatProvider, item: &EvalItem, tag: &str) -> Result<String, String> {
        let pair = &item.language_pair;
        let request = self.request(
            &self.cfg.templates.zero_shot,
            &[
                ("source", item.source.as_str()),
                ("src_lang", pair.source_lang.as_str()),
                ("tgt_lang", pair.target_lang.as_str()),
            ],
            tag,
        );
        let response =
            complete_with_retry(provider, &request, &self.cfg.agent.retry).map_err(|e| e.to_string())?;
        let text = response.content.trim();
        if text.is_empty() {
            return Err("empty translation".into());
        }
        Ok(text.to_string())
    }

    fn refine(
        &self,
        provider: &dyn ChatProvider,
        item: &EvalItem,
        draft: &str,
    ) -> Result<String, String> {
        let dimensions: Vec<&str> = all_dimensions().iter().map(|d| d.label()).collect();
        let dimensions = dimensions.join(", ");
        let pair = &item.language_pair;
        let request = self.request(
            &self.cfg.templates.self_refine,
            &[
                ("source", item.source.as_str()),
                ("draft", draft),
                ("dimensions", dimensions.as_str()),
                ("src_lang", pair.source_lang.as_str()),
                ("tgt_lang", pair.target_lang.as_str()),
            ],
            "self_refine:refine",
        );
        let response =
            complete_with_retry(provider, &request, &self.cfg.agent.retry).map_err(|e| e.to_string())?;
        find_object(&response.content, |m| match m.get("translation") {
            Some(Value::String(s)) if !s.trim().is_empty() => Some(s.trim().to_string()),
            _ => None,
        })
        .ok_or_else(|| "refinement reply has no usable translation".to_string())
    }

    fn chorus(
        &self,
        provider: &dyn ChatProvider,
        item: &EvalItem,
        errors: &mut Vec<String>,
    ) -> Option<String> {
        let ctx = TaskContext {
            source_text: item.source.clone(),
            current_translation: String::new(),
            language_pair: item.language_pair.clone(),
            job: JobContext::new(EVAL_JOB_ID),
            translator_goal: String::new(),
            tm_entries: Vec::new(),
        };
        let decision = self.router.route(provider, CHORUS_INSTRUCTION, &ctx, self.tm);
        let mut candidates = Vec::new();
        for (dimension, result) in self.agents.invoke_many(provider, &decision.dimensions, &ctx, self.tm) {
            match result {
                Ok(c) => candidates.push(c),
                Err(e) => errors.push(format!("{}: {e}", dimension.label())),
            }
        }
        let fallback = candidates.last().map(|c| c.text.clone())?;
        match self.agents.synthesize(provider, &candidates, &ctx) {
            Ok(merged) => Some(merged.text),
            Err(e) => {
                errors.push(format!("editor: {e}"));
                Some(fallback)
            }
        }
    }

    fn run_item(&self, provider: &dyn ChatProvider, item: &EvalItem) -> Result<ItemResult, EvalError> {
        let counting = Counting {
            inner: provider,
            calls: AtomicU32::new(0),
        };
        let mut errors = Vec::new();
        let hypothesis = match self.condition {
            Condition::ZeroShot => self.translate(&counting, item, "zero_shot").map_err(|e| {
                errors.push(e);
            }).ok(),
            Condition::SelfRefine => match self.translate(&counting, item, "self_refine:translate") {
                Ok(draft) => Some(self.refine(&counting, item, &draft).unwrap_or_else(|e| {
                    errors.push(e);
                    draft
                })),
                Err(e) => {
                    errors.push(e);
                    None
                }
            },
            Condition::ChorusAgents => self.chorus(&counting, item, &mut errors),
        };
        let Some(hypothesis) = hypothesis else {
            return Err(EvalError::FatalItemFailure {
                item_id: item.item_id.clone(),
                reason: errors.join("; "),
            });
        };
        if !errors.is_empty() {
            log::warn!("item {}: {}", item.item_id, errors.join("; "));
        }
        Ok(ItemResult {
            item_id: item.item_id.clone(),
            language_pair: item.language_pair.clone(),
            source: item.source.clone(),
            reference: item.reference.clone(),
            hypothesis,
            provider_calls: counting.calls.load(Ordering::SeqCst),
            errors,
        })
    }
}

/// Runs one condition over `items`. Items run in parallel; results are sorted
/// by item id. Any item without a usable translation aborts the run.
pub fn run_condition(
    condition: Condition,
    items: &[EvalItem],
    provider: &dyn ChatProvider,
    tm: &TmStore,
    cfg: &EvalConfig,
) -> Result<ConditionRun, EvalError> {
    if items.is_empty() {
        return Err(EvalError::EmptyInput("no items to run".into()));
    }
    let runner = Runner {
        condition,
        cfg,
        tm,
        agents: ExpertAgents::new(cfg.templates.clone(), cfg.agent.clone()),
        router: DimensionRouter::new(cfg.templates.clone(), cfg.agent.clone()),
    };
    let results: Vec<Result<ItemResult, EvalError>> = items
        .par_iter()
        .map(|item| runner.run_item(provider, item))
        .collect();
    let mut out = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    out.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    Ok(ConditionRun {
        config: RunConfig {
            condition,
            model_id: cfg.agent.model_id.clone(),
            seed: cfg.seed,
            provider: provider.name().to_string(),
            agent: cfg.agent.clone(),
            routing_instruction: (condition == Condition::ChorusAgents)
                .then(|| CHORUS_INSTRUCTION.to_string()),
            n_items: out.len(),
        },
        items: out,
    })
}

/// BLEU and METEOR-lite per direction, tokenized for the target language.
pub fn score_run(run: &ConditionRun) -> Result<BTreeMap<String, DirectionScore>, EvalError> {
    let mut scores = BTreeMap::new();
    for (direction, items) in run.by_direction() {
        let lang = items[0].language_pair.target_lang.as_str();
        let hyps: Vec<&str> = items.iter().map(|i| i.hypothesis.as_str()).collect();
        let refs: Vec<&str> = items.iter().map(|i| i.reference.as_str()).collect();
        scores.insert(
            direction,
            DirectionScore {
                bleu: bleu_corpus(&hyps, &refs, lang, &BleuConfig::default())?,
                meteor_lite: meteor_lite_corpus(&hyps, &refs, lang, &MeteorConfig::default())?,
                n_items: items.len(),
            },
        );
    }
    Ok(scores)
}

fn write_file(path: &Path, contents: &str) -> Result<(), EvalError> {
    std::fs::write(path, contents).map_err(|e| EvalError::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("run data serializes");
    s.push('\n');
    s
}

/// Writes `config.json`, `outputs.jsonl` and `scores.json`. The layout holds
/// no timestamps, so identical runs produce identical bytes.
pub fn write_run(run: &ConditionRun, dir: &Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir).map_err(|e| EvalError::io(dir, e))?;
    write_file(&dir.join("config.json"), &to_json(&run.config))?;
    let mut lines = String::new();
    for item in &run.items {
        lines.push_str(&serde_json::to_string(item).expect("item serializes"));
        lines.push('\n');
    }
    write_file(&dir.join("outputs.jsonl"), &lines)?;
    write_file(&dir.join("scores.json"), &to_json(&score_run(run)?))
}

pub fn load_run(dir: &Path) -> Result<ConditionRun, EvalError> {
    let bad = |reason: String| EvalError::BadRunDir {
        path: dir.display().to_string(),
        reason,
    };
    let config_path = dir.join("config.json");
    let text = std::fs::read_to_string(&config_path).map_err(|e| EvalError::io(&config_path, e))?;
    let config: RunConfig = serde_json::from_str(&text).map_err(|e| bad(format!("config.json: {e}")))?;
    let outputs_path = dir.join("outputs.jsonl");
    let text = std::fs::read_to_string(&outputs_path).map_err(|e| EvalError::io(&outputs_path, e))?;
    let mut items = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: ItemResult = serde_json::from_str(line)
            .map_err(|e| bad(format!("outputs.jsonl line {}: {e}", idx + 1)))?;
        items.push(item);
    }
    if items.is_empty() {
        return Err(bad("outputs.jsonl has no items".into()));
    }
    items.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    Ok(ConditionRun { config, items })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{MockProvider, MockRule, MockScript, RetryPolicy};

    fn items(n: usize) -> Vec<EvalItem> {
        (0..n)
            .map(|i| EvalItem {
                item_id: format!("item-{i:02}"),
                source: format!("sentence number {i}"),
                reference: format!("Satz Nummer {i}"),
                language_pair: LanguagePair::new("en", "de").unwrap(),
            })
            .collect()
    }

    fn cfg() -> EvalConfig {
        EvalConfig {
            agent: AgentConfig {
                retry: RetryPolicy::no_backoff(1),
                ..AgentConfig::default()
            },
            ..EvalConfig::default()
        }
    }

    #[test]
    fn zero_shot_echo() {
        let mock = MockProvider::new(MockScript::echo());
        let run = run_condition(Condition::ZeroShot, &items(3), &mock, &TmStore::in_memory(), &cfg()).unwrap();
        assert_eq!(run.items.len(), 3);
        for item in &run.items {
            assert!(item.hypothesis.starts_with("ECHO["));
            assert_eq!(item.provider_calls, 1);
        }
        assert_eq!(mock.call_log().len(), 3);
    }

    #[test]
    fn self_refine_falls_back_to_draft() {
        let mock = MockProvider::new(MockScript::echo());
        let run = run_condition(Condition::SelfRefine, &items(2), &mock, &TmStore::in_memory(), &cfg()).unwrap();
        for item in &run.items {
            assert_eq!(item.provider_calls, 2);
            assert_eq!(item.errors.len(), 1);
            assert!(item.hypothesis.starts_with("ECHO[Translate"));
        }
    }

    #[test]
    fn chorus_without_any_candidate_is_fatal() {
        let mock = MockProvider::new(MockScript::failing());
        let err = run_condition(Condition::ChorusAgents, &items(2), &mock, &TmStore::in_memory(), &cfg());
        assert!(matches!(err, Err(EvalError::FatalItemFailure { .. })));
    }

    #[test]
    fn chorus_uses_editor_text() {
        let mock = MockProvider::new(
            MockScript::echo()
                .rule(MockRule::text("", r#"{"dimensions":["Fluency"],"rationale":"r"}"#).for_tag("router"))
                .rule(MockRule::text("", r#"{"translation":"agent","explanation":"e"}"#).for_tag("agent:Fluency"))
                .rule(MockRule::text("", r#"{"translation":"edited","explanation":"e"}"#).for_tag("editor")),
        );
        let run = run_condition(Condition::ChorusAgents, &items(2), &mock, &TmStore::in_memory(), &cfg()).unwrap();
        assert!(run.items.iter().all(|i| i.hypothesis == "edited" && i.provider_calls == 3));
        assert_eq!(run.config.routing_instruction.as_deref(), Some(CHORUS_INSTRUCTION));
    }

    #[test]
    fn run_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mock = MockProvider::new(MockScript::echo());
        let run = run_condition(Condition::ZeroShot, &items(4), &mock, &TmStore::in_memory(), &cfg()).unwrap();
        write_run(&run, dir.path()).unwrap();
        assert_eq!(load_run(dir.path()).unwrap(), run);
        let scores: BTreeMap<String, DirectionScore> =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("scores.json")).unwrap()).unwrap();
        assert_eq!(scores["en-de"].n_items, 4);
    }

    #[test]
    fn empty_items_rejected() {
        let mock = MockProvider::new(MockScript::echo());
        assert!(run_condition(Condition::ZeroShot, &[], &mock, &TmStore::in_memory(), &cfg()).is_err());
    }
}
