//! Hook for neural metrics (BLEURT, COMET, ...) served over local HTTP. No
//! model ships with this crate; only the client side is provided.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::EvalError;

pub trait ExternalMetric: Send + Sync {
    fn name(&self) -> &str;

    fn score(&self, hypothesis: &str, reference: &str, source: &str) -> Result<f64, EvalError>;
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    hypothesis: &'a str,
    reference: &'a str,
    source: &'a str,
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: f64,
}

/// POSTs `{hypothesis, reference, source}` to an endpoint that answers
/// `{"score": <number>}`.
#[derive(Debug)]
pub struct HttpExternalMetric {
    name: String,
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl HttpExternalMetric {
    pub fn new(name: impl Into<String>, endpoint: impl Into<String>, timeout: Duration) -> Result<Self, EvalError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EvalError::External(e.to_string()))?;
        Ok(Self {
            name: name.into(),
            endpoint: endpoint.into(),
            client,
        })
    }
}

impl ExternalMetric for HttpExternalMetric {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, hypothesis: &str, reference: &str, source: &str) -> Result<f64, EvalError> {
        let response = self
            .client
            .post(&self.endpoint)
            .json(&ScoreRequest {
                hypothesis,
                reference,
                source,
            })
            .send()
            .map_err(|e| EvalError::External(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(EvalError::External(format!("{} answered {status}", self.name)));
        }
        let body: ScoreResponse = response
            .json()
            .map_err(|e| EvalError::External(format!("bad score payload: {e}")))?;
        if !body.score.is_finite() {
            return Err(EvalError::External("score is not a finite number".into()));
        }
        Ok(body.score)
    }
}
