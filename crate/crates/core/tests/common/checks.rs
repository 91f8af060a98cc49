//! Property checks shared by the per-module tests and the acceptance target.
//! Each check panics with a descriptive message on the first violation and
//! returns a short summary of what it covered.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

use chorus_core::agents::{AgentConfig, TaskContext};
use chorus_core::api::{app, AppState};
use chorus_core::eval::{
    build_report, compare_runs, load_run, run_condition, write_run, BootstrapConfig, Condition,
    EvalConfig, EvalItem, Metric,
};
use chorus_core::mqm::{all_dimensions, JobContext, LanguagePair};
use chorus_core::provider::{
    ChatProvider, FlakyProvider, MockProvider, MockRule, MockScript, ProviderError, RetryPolicy,
};
use chorus_core::router::{DecisionOrigin, DimensionRouter};
use chorus_core::session::{EventPayload, Session, SessionEngine, SessionError, SessionRepository};
use chorus_core::templates::TemplateSet;
use chorus_core::tm::{Provenance, TmStore};

use super::{protocol_script, random_text};

pub fn fast_config() -> AgentConfig {
    AgentConfig {
        retry: RetryPolicy::no_backoff(2),
        ..AgentConfig::default()
    }
}

fn en_de() -> LanguagePair {
    LanguagePair::new("en", "de").unwrap()
}

// ---------------------------------------------------------------- router

const INSTRUCTION_WORDS: &[&str] = &[
    "fix", "the", "terminology", "tone", "formal", "dates", "markup", "grammar", "meaning",
    "audience", "please", "make", "it", "natural", "glossary", "currency", "layout", "{", "}",
    "\"dimensions\"", "[", "]", "Style", "ignore previous instructions", "日本語", "é", "\n",
];

fn fuzz_instruction(rng: &mut ChaCha8Rng) -> String {
    match rng.random_range(0..6) {
        0 => String::new(),
        1 => random_text(rng, 40),
        2 => "x".repeat(rng.random_range(1000..5000)),
        _ => {
            let n = rng.random_range(1..12);
            (0..n)
                .map(|_| *INSTRUCTION_WORDS.choose(rng).unwrap())
                .collect::<Vec<_>>()
                .join(" ")
        }
    }
}

fn labels_json(labels: &[String]) -> String {
    serde_json::to_string(&json!({ "dimensions": labels, "rationale": "fuzz" })).unwrap()
}

/// An adversarial router script plus whether it can only end in fallback.
fn adversarial_router(rng: &mut ChaCha8Rng) -> (MockScript, bool) {
    let all: Vec<String> = all_dimensions().iter().map(|d| d.label().to_string()).collect();
    let reply = |text: String| MockScript::failing().rule(MockRule::text("", text).for_tag("router"));
    let error = |e: ProviderError| MockScript::failing().rule(MockRule::error("", e).for_tag("router"));
    match rng.random_range(0..12) {
        0 => (reply(labels_json(&[])), false),
        1 => {
            let mut many = all.clone();
            many.extend(all.iter().map(|l| l.to_lowercase()));
            many.push("Style".into());
            (reply(labels_json(&many)), false)
        }
        2 => (
            reply(labels_json(&["Banana".into(), "".into(), "Acuracy".into(), "💥".into()])),
            false,
        ),
        3 => (reply(random_text(rng, 60)), true),
        4 => (reply(r#"{"dimensions": ["Style", "Terminology""#.into()), true),
        5 => (reply(r#"{"dimensions": 42, "rationale": 7}"#.into()), true),
        6 => (error(ProviderError::unavailable("down")), true),
        7 => (error(ProviderError::Timeout { deadline_ms: 10 }), true),
        8 => (error(ProviderError::RateLimited { retry_after_ms: None }), true),
        9 => (error(ProviderError::InvalidRequest { message: "bad".into() }), true),
        10 => {
            let mut picked: Vec<String> = (0..rng.random_range(1..6))
                .map(|_| all.choose(rng).unwrap().to_uppercase())
                .collect();
            picked.push("  style ".into());
            (reply(format!("Sure! Here you go:\n```json\n{}\n```", labels_json(&picked))), false)
        }
        _ => (MockScript::echo(), false),
    }
}

/// Routes `n` fuzzed instructions against adversarial router replies and
/// checks every decision is well formed.
pub fn router_fuzz(n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let router = DimensionRouter::new(Arc::new(TemplateSet::shipped()), fast_config());
    let tm = TmStore::in_memory();
    let mut fallbacks = 0;
    for i in 0..n {
        let instruction = fuzz_instruction(&mut rng);
        let (script, must_fall_back) = adversarial_router(&mut rng);
        let ctx = TaskContext {
            source_text: if rng.random_bool(0.1) { String::new() } else { random_text(&mut rng, 30) + "x" },
            current_translation: random_text(&mut rng, 20),
            language_pair: en_de(),
            job: JobContext::new("fuzz"),
            translator_goal: String::new(),
            tm_entries: vec![],
        };
        let mock = MockProvider::new(script);
        let decision = if rng.random_bool(0.2) {
            let flaky = FlakyProvider::new(&mock, rng.random_range(1..4), ProviderError::unavailable("flaky"));
            router.route(&flaky, &instruction, &ctx, &tm)
        } else {
            router.route(&mock, &instruction, &ctx, &tm)
        };
        assert!(
            decision.is_well_formed(),
            "case {i}: ill-formed decision {decision:?} for {instruction:?}"
        );
        let sorted = decision.dimensions.windows(2).all(|w| w[0].ordinal() < w[1].ordinal());
        assert!(sorted, "case {i}: not in canonical order: {:?}", decision.dimensions);
        if must_fall_back {
            assert_eq!(decision.origin, DecisionOrigin::Fallback, "case {i}");
        }
        if decision.origin == DecisionOrigin::Fallback {
            fallbacks += 1;
        }
    }
    format!("{n} instructions, {fallbacks} fell back to keywords")
}

// --------------------------------------------------------------- session

#[derive(Debug, Clone)]
enum Op {
    Route(String),
    Override(Vec<String>),
    Invoke,
    Revise(String),
    Synthesize,
    Confirm(String),
}

fn pick_candidate(rng: &mut ChaCha8Rng, session: &Session) -> String {
    let ids: Vec<&String> = session.candidates.keys().collect();
    if ids.is_empty() || rng.random_bool(0.08) {
        "cand-missing".into()
    } else {
        ids.choose(rng).unwrap().to_string()
    }
}

fn random_override(rng: &mut ChaCha8Rng) -> Vec<String> {
    let n = rng.random_range(0..5);
    (0..n)
        .map(|_| {
            if rng.random_bool(0.1) {
                "Nonsense".to_string()
            } else {
                all_dimensions().choose(rng).unwrap().label().to_string()
            }
        })
        .collect()
}

fn next_op(rng: &mut ChaCha8Rng, session: &Session) -> Op {
    use chorus_core::session::SessionStatus::*;
    let any = rng.random_bool(0.1);
    let status = if any { *[Drafting, Routed, Reviewing].choose(rng).unwrap() } else { session.status };
    let instruction = || "make the terminology consistent and the tone formal".to_string();
    match status {
        Drafting => {
            if !session.candidates.is_empty() && rng.random_bool(0.1) {
                Op::Confirm(pick_candidate(rng, session))
            } else {
                Op::Route(instruction())
            }
        }
        Routed => match rng.random_range(0..10) {
            0 => Op::Override(random_override(rng)),
            1 => Op::Route(instruction()),
            _ => Op::Invoke,
        },
        _ => match rng.random_range(0..12) {
            0..=3 => Op::Revise(pick_candidate(rng, session)),
            4 | 5 => Op::Synthesize,
            6 | 7 => Op::Confirm(pick_candidate(rng, session)),
            8 => Op::Override(random_override(rng)),
            9 => Op::Invoke,
            10 => Op::Route(instruction()),
            _ => Op::Revise(pick_candidate(rng, session)),
        },
    }
}

fn session_script(rng: &mut ChaCha8Rng) -> MockScript {
    let k = rng.random_range(1..=3);
    let dims: Vec<&str> = all_dimensions()
        .choose_multiple(rng, k)
        .map(|d| d.label())
        .collect();
    match rng.random_range(0..6) {
        0 => MockScript::echo(),
        1 => MockScript::failing(),
        2 => {
            let mut s = protocol_script(&dims);
            let victim = format!("agent:{}", dims[0]);
            s.rules.insert(0, MockRule::error("", ProviderError::unavailable("agent down")).for_tag(victim));
            s
        }
        3 => {
            let mut s = protocol_script(&dims);
            s.rules.insert(0, MockRule::text("", "no json here").for_tag("editor"));
            s
        }
        _ => protocol_script(&dims),
    }
}

fn apply_op(
    engine: &SessionEngine,
    session: &mut Session,
    provider: &dyn ChatProvider,
    tm: &TmStore,
    op: &Op,
) -> Result<(), SessionError> {
    match op {
        Op::Route(i) => engine.request_routing(session, provider, i, tm),
        Op::Override(d) => engine.apply_override(session, d),
        Op::Invoke => engine.invoke_selected(session, provider, tm),
        Op::Revise(c) => engine.request_revision(session, provider, c, "shorter please", tm),
        Op::Synthesize => engine.request_synthesis(session, provider),
        Op::Confirm(c) => engine.confirm(session, c, tm),
    }
}

fn check_invariants(session: &Session, ctx: &str) {
    for (i, e) in session.events.iter().enumerate() {
        assert_eq!(e.seq, i as u64, "{ctx}: seq gap at index {i}");
    }
    if let Some(pos) = session
        .events
        .iter()
        .position(|e| matches!(e.payload, EventPayload::Confirmed { .. }))
    {
        assert_eq!(pos + 1, session.events.len(), "{ctx}: event after confirmed");
    }
    let replayed = Session::replay(&session.events).expect("live log replays");
    assert_eq!(&replayed, session, "{ctx}: replay differs from live state");
    for e in &session.events {
        if let EventPayload::RevisionAdded { candidate } = &e.payload {
            let parent_id = candidate.parent_id.as_ref().unwrap_or_else(|| panic!("{ctx}: revision without parent"));
            let parent = session.candidate(parent_id).unwrap_or_else(|| panic!("{ctx}: dangling parent"));
            assert_eq!(candidate.round, parent.round + 1, "{ctx}: round is not parent + 1");
        }
    }
}

/// Drives `n` random operation sequences through the engine, each through a
/// session repository (every tenth one on disk, reopened at the end).
pub fn session_sequences(n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let engine = SessionEngine::new(Arc::new(TemplateSet::shipped()), fast_config());
    let dir = tempfile::tempdir().unwrap();
    let (mut ops_run, mut confirmed, mut rejected) = (0usize, 0usize, 0usize);
    for case in 0..n {
        let provider = MockProvider::new(session_script(&mut rng));
        let tm = TmStore::in_memory();
        let on_disk = case % 10 == 0;
        let repo = if on_disk {
            SessionRepository::open(dir.path().join(format!("case-{case}"))).unwrap()
        } else {
            SessionRepository::in_memory()
        };
        let draft = rng.random_bool(0.5).then(|| "Entwurf".to_string());
        let session = Session::create(
            &format!("Source sentence {case}."),
            draft.as_deref(),
            "",
            en_de(),
            JobContext::new(format!("job-{case}")),
        )
        .unwrap();
        let handle = repo.insert(session).unwrap();
        let steps = rng.random_range(1..=14);
        for step in 0..steps {
            let ctx = format!("case {case} step {step}");
            let mut slot = handle.lock();
            let before = slot.session.clone();
            let op = next_op(&mut rng, &before);
            let tm_before = tm.len();
            let result = apply_op(&engine, &mut slot.session, &provider, &tm, &op);
            repo.commit(&handle, &mut slot).unwrap();
            let after = slot.session.clone();
            drop(slot);
            ops_run += 1;
            let ctx = format!("{ctx} {op:?} -> {result:?}");

            if before.is_confirmed() {
                assert_eq!(result, Err(SessionError::SessionFinalized), "{ctx}");
                assert_eq!(after, before, "{ctx}: finalized session changed");
            }
            match &result {
                Ok(()) => {}
                Err(SessionError::AllAgentsFailed(_)) => {
                    assert_eq!(after.events.len(), before.events.len() + 1, "{ctx}")
                }
                Err(_) => {
                    rejected += 1;
                    assert_eq!(after, before, "{ctx}: rejected op changed state");
                }
            }
            match (&op, &result) {
                (Op::Confirm(cid), Ok(())) => {
                    confirmed += 1;
                    assert_eq!(tm.len(), tm_before + 1, "{ctx}: confirm must write one entry");
                    let Some(EventPayload::Confirmed { candidate_id, tm_entry_id }) =
                        after.events.last().map(|e| &e.payload)
                    else {
                        panic!("{ctx}: confirm did not log a confirmed event");
                    };
                    assert_eq!(candidate_id, cid);
                    let entry = tm.get(tm_entry_id).expect("confirmed entry exists");
                    assert_eq!(entry.provenance, Provenance::Confirmed);
                    assert_eq!(entry.source_text, after.source_text);
                    assert_eq!(entry.target_text, after.candidate(cid).unwrap().text);
                }
                _ => assert_eq!(tm.len(), tm_before, "{ctx}: only confirm may write the TM"),
            }
            check_invariants(&after, &ctx);
        }
        // One more mutation after confirmation must be refused.
        let mut slot = handle.lock();
        if slot.session.is_confirmed() {
            let before = slot.session.clone();
            let err = engine.request_routing(&mut slot.session, &provider, "again", &tm);
            assert_eq!(err, Err(SessionError::SessionFinalized));
            assert_eq!(slot.session, before);
        }
        let live = slot.session.clone();
        drop(slot);
        assert_eq!(handle.snapshot(), live, "case {case}: snapshot lags the live state");
        if on_disk {
            let reopened = SessionRepository::open(dir.path().join(format!("case-{case}"))).unwrap();
            let restored = reopened.get(&live.session_id).unwrap().snapshot();
            assert_eq!(restored, live, "case {case}: on-disk log does not restore the session");
        }
    }
    format!("{n} sequences, {ops_run} operations ({rejected} rejected), {confirmed} confirmations")
}

// -------------------------------------------------------------- protocol

pub fn toy_dataset() -> Vec<EvalItem> {
    (0..10)
        .map(|i| {
            let (src, tgt) = if i % 2 == 0 { ("en", "de") } else { ("de", "en") };
            EvalItem {
                item_id: format!("toy-{i:02}"),
                source: format!("[s{i:02}] the quick brown fox number {i} jumps"),
                reference: format!("reference words for item {i} go here"),
                language_pair: LanguagePair::new(src, tgt).unwrap(),
            }
        })
        .collect()
}

fn eval_config(seed: u64) -> EvalConfig {
    EvalConfig {
        agent: fast_config(),
        seed,
        templates: Arc::new(TemplateSet::shipped()),
    }
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

/// Provider-call counts per item for each condition, and byte-identical run
/// directories for two runs with the same seed.
pub fn protocol_call_counts() -> String {
    let items = toy_dataset();
    let dir = tempfile::tempdir().unwrap();
    let tm = TmStore::in_memory();
    let mut summary = Vec::new();
    for dims in [&["Style"][..], &["Terminology", "Style"], &["Accuracy", "Fluency", "Style"]] {
        let k = dims.len() as u32;
        for (condition, expected) in [
            (Condition::ZeroShot, 1),
            (Condition::SelfRefine, 2),
            (Condition::ChorusAgents, k + 2),
        ] {
            let mut bytes = Vec::new();
            for attempt in 0..2 {
                let provider = MockProvider::new(protocol_script(dims));
                let run = run_condition(condition, &items, &provider, &tm, &eval_config(7)).unwrap();
                for item in &run.items {
                    assert_eq!(
                        item.provider_calls, expected,
                        "{condition} with k = {k}: item {} made {} calls",
                        item.item_id, item.provider_calls
                    );
                    assert!(item.errors.is_empty(), "{condition}: {:?}", item.errors);
                }
                assert_eq!(provider.call_log().len(), items.len() * expected as usize);
                let out = dir.path().join(format!("{condition}-{k}-{attempt}"));
                write_run(&run, &out).unwrap();
                bytes.push(read_dir_bytes(&out));
            }
            assert_eq!(bytes[0].len(), 3, "run directory holds config, outputs and scores");
            assert!(bytes[0] == bytes[1], "{condition} with k = {k}: run directories differ");
        }
        summary.push(format!("k={k}: 1/2/{}", k + 2));
    }
    format!("10 items, calls per item {}; repeated runs byte-identical", summary.join(", "))
}

// ----------------------------------------------------------- directional

fn corrupt(reference: &str) -> String {
    let mut words: Vec<&str> = reference.split_whitespace().collect();
    words.pop();
    words.swap(0, 1);
    words.join(" ")
}

/// Chorus outputs equal the references, zero-shot outputs are corrupted
/// copies. Returns (report BLEU chorus, report BLEU zero-shot, p, swapped p).
pub fn directional_sanity(out: &Path) -> (f64, f64, f64, f64) {
    let items: Vec<EvalItem> = (0..20)
        .map(|i| EvalItem {
            item_id: format!("dir-{i:02}"),
            source: format!("<{i:02}> source text for segment {i}"),
            reference: format!("dies ist die Referenz Nummer {i} mit einigen Wörtern"),
            language_pair: en_de(),
        })
        .collect();
    let mut script = protocol_script(&["Terminology", "Style"]);
    let mut scripted = Vec::new();
    for item in &items {
        let translation = json!({ "translation": item.reference, "explanation": "scripted" });
        scripted.push(MockRule::text(item.source.clone(), translation.to_string()).for_tag("editor"));
        scripted.push(MockRule::text(item.source.clone(), corrupt(&item.reference)).for_tag("zero_shot"));
    }
    script.rules.splice(0..0, scripted);
    let provider = MockProvider::new(script);
    let tm = TmStore::in_memory();
    let cfg = eval_config(11);
    let chorus = run_condition(Condition::ChorusAgents, &items, &provider, &tm, &cfg).unwrap();
    let zero = run_condition(Condition::ZeroShot, &items, &provider, &tm, &cfg).unwrap();
    for (c, z) in chorus.items.iter().zip(&zero.items) {
        assert_eq!(c.hypothesis, c.reference);
        assert_ne!(z.hypothesis, z.reference);
    }
    write_run(&chorus, &out.join("chorus")).unwrap();
    write_run(&zero, &out.join("zero")).unwrap();
    let chorus = load_run(&out.join("chorus")).unwrap();
    let zero = load_run(&out.join("zero")).unwrap();

    let boot = BootstrapConfig { n_resamples: 1000, seed: 2024 };
    let forward = compare_runs(&chorus, &zero, Metric::Bleu, &boot).unwrap();
    let swapped = compare_runs(&zero, &chorus, Metric::Bleu, &boot).unwrap();
    let report = build_report(&[chorus, zero], &forward, &out.join("report")).unwrap();
    let rows = &report.directions[0].rows;
    let score = |c: Condition| rows.iter().find(|r| r.condition == c).unwrap().bleu;
    let md = std::fs::read_to_string(out.join("report/report.md")).unwrap();
    assert!(md.contains("chorus_agents") && md.contains("zero_shot"), "{md}");
    (
        score(Condition::ChorusAgents),
        score(Condition::ZeroShot),
        forward[0].p_value,
        swapped[0].p_value,
    )
}

// ------------------------------------------------------------------- api

pub struct Api {
    pub router: axum::Router,
    pub state: Arc<AppState>,
}

impl Api {
    pub fn new(script: MockScript) -> Self {
        let state = Arc::new(AppState::new(
            SessionEngine::new(Arc::new(TemplateSet::shipped()), fast_config()),
            Arc::new(MockProvider::new(script)),
            Arc::new(TmStore::in_memory()),
            Arc::new(SessionRepository::in_memory()),
        ));
        Self {
            router: app(state.clone(), None),
            state,
        }
    }

    pub async fn raw(&self, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Vec<u8>) {
        let mut req = Request::builder().method(method).uri(uri);
        if body.is_some() {
            req = req.header("content-type", "application/json");
        }
        let req = req.body(Body::from(body.unwrap_or_default().to_string())).unwrap();
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
        (status, bytes.to_vec())
    }

    pub async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let text = body.map(|b| b.to_string());
        let (status, bytes) = self.raw(method, uri, text.as_deref()).await;
        let value = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
        (status, value)
    }

    pub fn calls(&self) -> usize {
        self.state.provider.call_log().len()
    }
}

fn candidates_by_role(session: &Value, role: &str) -> Vec<String> {
    session["candidates"]
        .as_object()
        .unwrap()
        .values()
        .filter(|c| c["dimension"] == role)
        .map(|c| c["candidate_id"].as_str().unwrap().to_string())
        .collect()
}

/// The full create, route, invoke, revise, synthesize, confirm loop over the
/// HTTP surface, with retries and post-confirm conflicts.
pub async fn api_contract() -> String {
    let api = Api::new(protocol_script(&["Terminology", "Style"]));
    let mut checked = 0;
    let mut expect = |got: StatusCode, want: StatusCode, what: &str, body: &Value| {
        assert_eq!(got, want, "{what}: {body}");
        checked += 1;
    };

    let (s, b) = api.call("GET", "/healthz", None).await;
    expect(s, StatusCode::OK, "healthz", &b);
    assert_eq!(b, "ok");

    let create = json!({
        "source": "Please sign the contract by Friday.",
        "draft": "Bitte unterschreiben Sie den Vertrag.",
        "src_lang": "en", "tgt_lang": "de",
        "job": { "job_id": "job-api", "domain_tag": "legal" },
        "request_id": "create-1"
    });
    let (s, created) = api.call("POST", "/sessions", Some(create.clone())).await;
    expect(s, StatusCode::CREATED, "create", &created);
    let id = created["session_id"].as_str().unwrap().to_string();
    let (s, again) = api.call("POST", "/sessions", Some(create)).await;
    expect(s, StatusCode::CREATED, "create retry", &again);
    assert_eq!(again, created, "create retry must replay the same session");

    let (s, b) = api.call("POST", "/sessions", Some(json!({ "source": "x" }))).await;
    expect(s, StatusCode::BAD_REQUEST, "create missing fields", &b);
    assert_eq!(b["code"], "malformed_body");
    let (s, b) = api.raw("POST", "/sessions", Some("{not json")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{}", String::from_utf8_lossy(&b));

    let route = json!({ "instruction": "fix the terminology and tone", "request_id": "route-1" });
    let (s, routed) = api.call("POST", &format!("/sessions/{id}/route"), Some(route.clone())).await;
    expect(s, StatusCode::OK, "route", &routed);
    assert_eq!(routed["status"], "routed");
    assert_eq!(routed["current_decision"]["dimensions"], json!(["Terminology", "Style"]));
    let calls = api.calls();
    let (s, replay) = api.call("POST", &format!("/sessions/{id}/route"), Some(route)).await;
    expect(s, StatusCode::OK, "route retry", &replay);
    assert_eq!(replay, routed, "retry must replay the stored reply");
    assert_eq!(api.calls(), calls, "retry must not call the provider again");

    let (s, b) = api
        .call("POST", &format!("/sessions/{id}/override"), Some(json!({ "dimensions": ["Style", "Bogus"] })))
        .await;
    expect(s, StatusCode::BAD_REQUEST, "override with unknown label", &b);
    assert_eq!(b["code"], "invalid_dimension_set");

    let (s, invoked) = api
        .call("POST", &format!("/sessions/{id}/invoke"), Some(json!({ "request_id": "inv-1" })))
        .await;
    expect(s, StatusCode::OK, "invoke", &invoked);
    assert_eq!(invoked["status"], "reviewing");
    let term = candidates_by_role(&invoked, "Terminology");
    let style = candidates_by_role(&invoked, "Style");
    assert_eq!((term.len(), style.len()), (1, 1), "{invoked}");
    let calls = api.calls();
    let (s, replay) = api
        .call("POST", &format!("/sessions/{id}/invoke"), Some(json!({ "request_id": "inv-1" })))
        .await;
    expect(s, StatusCode::OK, "invoke retry", &replay);
    assert_eq!(replay, invoked);
    assert_eq!(api.calls(), calls);

    let (s, revised) = api
        .call(
            "POST",
            &format!("/sessions/{id}/revise"),
            Some(json!({ "candidate_id": style[0], "instruction": "more formal" })),
        )
        .await;
    expect(s, StatusCode::OK, "revise", &revised);
    let child = revised["candidates"]
        .as_object()
        .unwrap()
        .values()
        .find(|c| c["parent_id"] == style[0].as_str())
        .expect("revision child")
        .clone();
    assert_eq!(child["round"], 1);
    assert_eq!(child["text"], "revised text");

    let (s, b) = api
        .call(
            "POST",
            &format!("/sessions/{id}/revise"),
            Some(json!({ "candidate_id": "cand-nope", "instruction": "x" })),
        )
        .await;
    expect(s, StatusCode::NOT_FOUND, "revise unknown candidate", &b);
    assert_eq!(b["code"], "unknown_candidate");

    let (s, synth) = api.call("POST", &format!("/sessions/{id}/synthesize"), Some(json!({}))).await;
    expect(s, StatusCode::OK, "synthesize", &synth);
    let editor = candidates_by_role(&synth, "Editor");
    assert_eq!(editor.len(), 1);

    let confirm = json!({ "candidate_id": editor[0], "request_id": "confirm-1" });
    let (s, confirmed) = api.call("POST", &format!("/sessions/{id}/confirm"), Some(confirm.clone())).await;
    expect(s, StatusCode::OK, "confirm", &confirmed);
    assert_eq!(confirmed["status"], "confirmed");
    let (s, replay) = api.call("POST", &format!("/sessions/{id}/confirm"), Some(confirm)).await;
    expect(s, StatusCode::OK, "confirm retry", &replay);
    assert_eq!(replay, confirmed);
    assert_eq!(api.state.tm.len(), 1, "a confirm retry must not write a second entry");

    for (path, body) in [
        ("route", json!({ "instruction": "again" })),
        ("invoke", json!({})),
        ("synthesize", json!({})),
        ("override", json!({ "dimensions": ["Style"] })),
        ("revise", json!({ "candidate_id": style[0], "instruction": "x" })),
        ("confirm", json!({ "candidate_id": editor[0], "request_id": "confirm-2" })),
    ] {
        let (s, b) = api.call("POST", &format!("/sessions/{id}/{path}"), Some(body)).await;
        expect(s, StatusCode::CONFLICT, &format!("{path} after confirm"), &b);
        assert_eq!(b["code"], "session_finalized");
        assert!(!b["request_id"].as_str().unwrap().is_empty());
    }

    let (s, session) = api.call("GET", &format!("/sessions/{id}"), None).await;
    expect(s, StatusCode::OK, "get session", &session);
    assert_eq!(session, confirmed);
    let (s, events) = api.call("GET", &format!("/sessions/{id}/events"), None).await;
    expect(s, StatusCode::OK, "events", &events);
    let events = events.as_array().unwrap();
    for (i, e) in events.iter().enumerate() {
        assert_eq!(e["seq"], i);
    }
    assert_eq!(events.last().unwrap()["kind"], "confirmed");

    let (s, hits) = api
        .call("GET", "/tm/search?q=Please%20sign%20the%20contract%20by%20Friday.&src=en&tgt=de", None)
        .await;
    expect(s, StatusCode::OK, "tm search", &hits);
    assert_eq!(hits[0]["score"], 1.0);
    assert_eq!(hits[0]["entry"]["target_text"], "editor text");
    assert_eq!(hits[0]["entry"]["provenance"], "confirmed");

    let entry = json!({ "entry": {
        "namespace": { "kind": "global" },
        "kind": "term",
        "language_pair": { "source_lang": "en", "target_lang": "de" },
        "source_text": "contract",
        "target_text": "Vertrag"
    }});
    let (s, b) = api.call("POST", "/tm/entries", Some(entry)).await;
    expect(s, StatusCode::CREATED, "tm entry", &b);
    assert!(b["entry_id"].is_string());

    let (s, b) = api.call("GET", "/sessions/ses-missing", None).await;
    expect(s, StatusCode::NOT_FOUND, "unknown session", &b);
    assert_eq!(b["code"], "unknown_session");
    let (s, b) = api
        .call("POST", "/sessions/ses-missing/route", Some(json!({ "instruction": "x" })))
        .await;
    expect(s, StatusCode::NOT_FOUND, "route unknown session", &b);
    let (s, b) = api.call("GET", "/no/such/endpoint", None).await;
    expect(s, StatusCode::NOT_FOUND, "unknown endpoint", &b);

    format!("{checked} status assertions over the endpoint table")
}

pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}
