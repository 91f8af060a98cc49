//! Python bindings: metrics, TM search, the fallback router and a
//! mock-backed workbench for driving sessions from scripts.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use chorus_core::agents::AgentConfig;
use chorus_core::eval::{self, BleuConfig, BootstrapConfig, Condition, EvalConfig, MeteorConfig, Metric};
use chorus_core::mqm::{all_dimensions, JobContext, LanguagePair};
use chorus_core::provider::{ChatProvider, MockProvider, MockScript, RetryPolicy};
use chorus_core::router::fallback_route;
use chorus_core::session::{Session, SessionEngine, SessionError, SessionRepository};
use chorus_core::templates::TemplateSet;
use chorus_core::tm::{self, RetrievalQuery, TmStore};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn session_err(e: SessionError) -> PyErr {
    match e {
        SessionError::UnknownSession(_) | SessionError::UnknownCandidate(_) => {
            PyKeyError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Hands a serializable value to Python as plain dicts and lists.
fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn pair(src: &str, tgt: &str) -> PyResult<LanguagePair> {
    LanguagePair::new(src, tgt).map_err(value_err)
}

fn mock(script_json: Option<&str>) -> PyResult<MockProvider> {
    let script = match script_json {
        Some(text) => serde_json::from_str::<MockScript>(text).map_err(value_err)?,
        None => MockScript::echo(),
    };
    Ok(MockProvider::new(script))
}

fn quick_agents() -> AgentConfig {
    AgentConfig {
        retry: RetryPolicy::no_backoff(1),
        ..AgentConfig::default()
    }
}

#[pyfunction]
fn dimension_labels() -> Vec<&'static str> {
    all_dimensions().iter().map(|d| d.label()).collect()
}

#[pyfunction]
#[pyo3(signature = (text, lang = "en"))]
fn tokenize(text: &str, lang: &str) -> Vec<String> {
    eval::tokenize_for_metric(text, lang)
}

#[pyfunction]
#[pyo3(signature = (hypotheses, references, lang = "en"))]
fn bleu(hypotheses: Vec<String>, references: Vec<String>, lang: &str) -> PyResult<f64> {
    eval::bleu_corpus(&hypotheses, &references, lang, &BleuConfig::default()).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (hypothesis, reference, lang = "en"))]
fn meteor_lite(hypothesis: &str, reference: &str, lang: &str) -> f64 {
    eval::meteor_lite(hypothesis, reference, lang, &MeteorConfig::default())
}

#[pyfunction]
fn similarity(a: &str, b: &str) -> f64 {
    tm::similarity(a, b)
}

/// Returns `(delta, p_value)` for system A against system B.
#[pyfunction]
#[pyo3(signature = (hyps_a, hyps_b, references, metric = "bleu", lang = "en", n_resamples = 1000, seed = 0))]
fn paired_bootstrap(
    hyps_a: Vec<String>,
    hyps_b: Vec<String>,
    references: Vec<String>,
    metric: &str,
    lang: &str,
    n_resamples: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    if hyps_a.len() != hyps_b.len() || hyps_a.len() != references.len() {
        return Err(PyValueError::new_err("all three lists must have the same length"));
    }
    let metric: Metric = metric.parse().map_err(value_err)?;
    let triples: Vec<(String, String, String)> = hyps_a
        .into_iter()
        .zip(hyps_b)
        .zip(references)
        .map(|((a, b), r)| (a, b, r))
        .collect();
    let r = eval::paired_bootstrap(&triples, metric, lang, &BootstrapConfig { n_resamples, seed })
        .map_err(value_err)?;
    Ok((r.delta, r.p_value))
}

/// Keyword routing without a model, as used when the router model fails.
#[pyfunction]
fn route_fallback(py: Python<'_>, instruction: &str) -> PyResult<Py<PyAny>> {
    to_py(py, &fallback_route(instruction))
}

/// Runs one evaluation condition over a JSONL dataset with a mock provider
/// and writes the run directory. Returns the per-item results.
#[pyfunction]
#[pyo3(signature = (condition, dataset, out_dir, mock_script = None, seed = 0))]
fn run_eval(
    py: Python<'_>,
    condition: &str,
    dataset: PathBuf,
    out_dir: PathBuf,
    mock_script: Option<&str>,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let condition: Condition = condition.parse().map_err(value_err)?;
    let items = eval::load_dataset(&dataset).map_err(value_err)?;
    let provider = mock(mock_script)?;
    let cfg = EvalConfig {
        agent: quick_agents(),
        seed,
        templates: Arc::new(TemplateSet::shipped()),
    };
    let run = py
        .detach(|| {
            let run = eval::run_condition(condition, &items, &provider, &TmStore::in_memory(), &cfg)?;
            eval::write_run(&run, &out_dir)?;
            Ok::<_, eval::EvalError>(run)
        })
        .map_err(value_err)?;
    to_py(py, &run.items)
}

#[pyclass(name = "TranslationMemory")]
struct PyTranslationMemory {
    inner: Arc<TmStore>,
}

#[pymethods]
impl PyTranslationMemory {
    /// In memory when `path` is None, otherwise backed by a JSONL file.
    #[new]
    #[pyo3(signature = (path = None))]
    fn new(path: Option<PathBuf>) -> PyResult<Self> {
        let inner = match path {
            Some(p) => TmStore::open(p).map_err(value_err)?,
            None => TmStore::in_memory(),
        };
        Ok(Self {
            inner: Arc::new(inner),
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn record_confirmation(
        &self,
        source: &str,
        target: &str,
        src_lang: &str,
        tgt_lang: &str,
        job_id: &str,
    ) -> PyResult<String> {
        self.inner
            .record_confirmation(source, target, &pair(src_lang, tgt_lang)?, &JobContext::new(job_id))
            .map_err(value_err)
    }

    #[pyo3(signature = (query, src_lang, tgt_lang, k = 5))]
    fn search(&self, py: Python<'_>, query: &str, src_lang: &str, tgt_lang: &str, k: usize) -> PyResult<Py<PyAny>> {
        let q = RetrievalQuery::new(query, pair(src_lang, tgt_lang)?).top_k(k);
        let hits = self.inner.retrieve(&q).map_err(value_err)?;
        to_py(py, &hits)
    }

    fn export(&self, path: PathBuf) -> PyResult<usize> {
        self.inner.export_to(path).map_err(value_err)
    }

    fn import_file(&self, path: PathBuf) -> PyResult<usize> {
        self.inner.import_from(path).map_err(value_err)
    }
}

/// Session engine over a scripted mock provider. Each method is one
/// translator action and returns the updated session as a dict.
#[pyclass(name = "Workbench")]
struct PyWorkbench {
    engine: SessionEngine,
    provider: Arc<dyn ChatProvider>,
    tm: Arc<TmStore>,
    sessions: SessionRepository,
}

impl PyWorkbench {
    fn with_session<F>(&self, py: Python<'_>, id: &str, op: F) -> PyResult<Py<PyAny>>
    where
        F: FnOnce(&Self, &mut Session) -> Result<(), SessionError> + Send,
    {
        let handle = self.sessions.get(id).map_err(session_err)?;
        let session = py.detach(|| {
            let mut slot = handle.lock();
            let result = op(self, &mut slot.session);
            let committed = self.sessions.commit(&handle, &mut slot);
            result.and(committed).map(|_| slot.session.clone())
        });
        to_py(py, &session.map_err(session_err)?)
    }
}

#[pymethods]
impl PyWorkbench {
    #[new]
    #[pyo3(signature = (mock_script = None, tm = None))]
    fn new(mock_script: Option<&str>, tm: Option<PyRef<'_, PyTranslationMemory>>) -> PyResult<Self> {
        Ok(Self {
            engine: SessionEngine::new(Arc::new(TemplateSet::shipped()), quick_agents()),
            provider: Arc::new(mock(mock_script)?),
            tm: tm.map(|t| t.inner.clone()).unwrap_or_else(|| Arc::new(TmStore::in_memory())),
            sessions: SessionRepository::in_memory(),
        })
    }

    #[pyo3(signature = (source, src_lang, tgt_lang, job_id, draft = None, goal = ""))]
    fn create_session(
        &self,
        py: Python<'_>,
        source: &str,
        src_lang: &str,
        tgt_lang: &str,
        job_id: &str,
        draft: Option<&str>,
        goal: &str,
    ) -> PyResult<Py<PyAny>> {
        let session = Session::create(source, draft, goal, pair(src_lang, tgt_lang)?, JobContext::new(job_id))
            .map_err(session_err)?;
        let value = to_py(py, &session)?;
        self.sessions.insert(session).map_err(session_err)?;
        Ok(value)
    }

    fn session(&self, py: Python<'_>, session_id: &str) -> PyResult<Py<PyAny>> {
        let handle = self.sessions.get(session_id).map_err(session_err)?;
        to_py(py, &handle.snapshot())
    }

    fn events(&self, py: Python<'_>, session_id: &str) -> PyResult<Py<PyAny>> {
        let handle = self.sessions.get(session_id).map_err(session_err)?;
        to_py(py, &handle.snapshot().events)
    }

    fn route(&self, py: Python<'_>, session_id: &str, instruction: &str) -> PyResult<Py<PyAny>> {
        self.with_session(py, session_id, |w, s| {
            w.engine.request_routing(s, w.provider.as_ref(), instruction, &w.tm)
        })
    }

    #[pyo3(name = "override")]
    fn override_dimensions(&self, py: Python<'_>, session_id: &str, dimensions: Vec<String>) -> PyResult<Py<PyAny>> {
        self.with_session(py, session_id, |w, s| w.engine.apply_override(s, &dimensions))
    }

    fn invoke(&self, py: Python<'_>, session_id: &str) -> PyResult<Py<PyAny>> {
        self.with_session(py, session_id, |w, s| {
            w.engine.invoke_selected(s, w.provider.as_ref(), &w.tm)
        })
    }

    fn revise(&self, py: Python<'_>, session_id: &str, candidate_id: &str, instruction: &str) -> PyResult<Py<PyAny>> {
        self.with_session(py, session_id, |w, s| {
            w.engine
                .request_revision(s, w.provider.as_ref(), candidate_id, instruction, &w.tm)
        })
    }

    fn synthesize(&self, py: Python<'_>, session_id: &str) -> PyResult<Py<PyAny>> {
        self.with_session(py, session_id, |w, s| {
            w.engine.request_synthesis(s, w.provider.as_ref())
        })
    }

    fn confirm(&self, py: Python<'_>, session_id: &str, candidate_id: &str) -> PyResult<Py<PyAny>> {
        self.with_session(py, session_id, |w, s| w.engine.confirm(s, candidate_id, &w.tm))
    }

    fn provider_calls(&self) -> usize {
        self.provider.call_log().len()
    }
}

#[pymodule]
fn chorus(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(dimension_labels, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(meteor_lite, m)?)?;
    m.add_function(wrap_pyfunction!(similarity, m)?)?;
    m.add_function(wrap_pyfunction!(paired_bootstrap, m)?)?;
    m.add_function(wrap_pyfunction!(route_fallback, m)?)?;
    m.add_function(wrap_pyfunction!(run_eval, m)?)?;
    m.add_class::<PyTranslationMemory>()?;
    m.add_class::<PyWorkbench>()?;
    Ok(())
}
