//! Surface metrics: corpus BLEU and an exact-match METEOR variant.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use super::EvalError;

pub const BLEU_MAX_N: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_n: usize,
    pub smoothing_eps: f64,
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self {
            max_n: BLEU_MAX_N,
            smoothing_eps: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeteorConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
}

impl Default for MeteorConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            gamma: 0.5,
            beta: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Bleu,
    MeteorLite,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Self::Bleu => "bleu",
            Self::MeteorLite => "meteor_lite",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "bleu" => Ok(Self::Bleu),
            "meteor_lite" | "meteor" => Ok(Self::MeteorLite),
            other => Err(EvalError::InvalidArgument(format!("unknown metric {other:?}"))),
        }
    }
}

fn is_char_language(lang: &str) -> bool {
    let primary = lang.split(['-', '_']).next().unwrap_or("");
    matches!(primary, "zh" | "ja")
}

/// Tokenization shared by both metrics. Chinese and Japanese are split into
/// characters; everything else on whitespace, with leading and trailing
/// punctuation peeled off into single-character tokens.
pub fn tokenize_for_metric(text: &str, lang: &str) -> Vec<String> {
    let normalized: String = text.nfc().collect::<String>().to_lowercase();
    if is_char_language(lang) {
        return normalized
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(String::from)
            .collect();
    }
    let mut tokens = Vec::new();
    for word in normalized.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let Some(start) = chars.iter().position(|c| c.is_alphanumeric()) else {
            tokens.extend(chars.iter().map(|c| c.to_string()));
            continue;
        };
        let end = chars.iter().rposition(|c| c.is_alphanumeric()).unwrap_or(start) + 1;
        tokens.extend(chars[..start].iter().map(|c| c.to_string()));
        tokens.push(chars[start..end].iter().collect());
        tokens.extend(chars[end..].iter().map(|c| c.to_string()));
    }
    tokens
}

/// Per-sentence BLEU sufficient statistics; corpus BLEU sums them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BleuStats {
    pub matches: Vec<u64>,
    pub totals: Vec<u64>,
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    fn zero(max_n: usize) -> Self {
        Self {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            hyp_len: 0,
            ref_len: 0,
        }
    }

    pub fn add(&mut self, other: &BleuStats) {
        for (a, b) in self.matches.iter_mut().zip(&other.matches) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

pub fn bleu_stats(hyp: &[String], reference: &[String], max_n: usize) -> BleuStats {
    let mut stats = BleuStats::zero(max_n);
    stats.hyp_len = hyp.len() as u64;
    stats.ref_len = reference.len() as u64;
    for n in 1..=max_n {
        let h = ngram_counts(hyp, n);
        let r = ngram_counts(reference, n);
        stats.totals[n - 1] = h.values().sum();
        stats.matches[n - 1] = h
            .iter()
            .map(|(gram, &c)| c.min(r.get(gram).copied().unwrap_or(0)))
            .sum();
    }
    stats
}

/// BLEU from summed statistics. A zero higher-order match count is replaced by
/// `smoothing_eps`; an order with no hypothesis n-grams at all gets precision
/// `smoothing_eps` outright.
pub fn bleu_from_stats(stats: &BleuStats, cfg: &BleuConfig) -> f64 {
    if stats.matches.first().copied().unwrap_or(0) == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..cfg.max_n {
        let m = stats.matches[n] as f64;
        let t = stats.totals[n] as f64;
        let p = if stats.matches[n] == 0 {
            cfg.smoothing_eps / t.max(1.0)
        } else {
            m / t
        };
        log_sum += p.ln();
    }
    let bp = if stats.hyp_len > stats.ref_len {
        1.0
    } else {
        (1.0 - stats.ref_len as f64 / stats.hyp_len as f64).exp()
    };
    bp * (log_sum / cfg.max_n as f64).exp()
}

pub fn bleu_corpus<H: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[H],
    references: &[R],
    lang: &str,
    cfg: &BleuConfig,
) -> Result<f64, EvalError> {
    if hypotheses.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(EvalError::EmptyInput("bleu needs at least one sentence".into()));
    }
    if cfg.max_n == 0 {
        return Err(EvalError::InvalidArgument("max_n must be at least 1".into()));
    }
    let mut total = BleuStats::zero(cfg.max_n);
    for (h, r) in hypotheses.iter().zip(references) {
        let stats = bleu_stats(
            &tokenize_for_metric(h.as_ref(), lang),
            &tokenize_for_metric(r.as_ref(), lang),
            cfg.max_n,
        );
        total.add(&stats);
    }
    Ok(bleu_from_stats(&total, cfg))
}

/// METEOR without stemming or synonyms: greedy left-to-right exact alignment,
/// recall-weighted F-mean and a fragmentation penalty.
pub fn meteor_lite_tokens(hyp: &[String], reference: &[String], cfg: &MeteorConfig) -> f64 {
    let mut used = vec![false; reference.len()];
    // Reference position aligned to each hypothesis token, if any.
    let mut alignment: Vec<Option<usize>> = Vec::with_capacity(hyp.len());
    for token in hyp {
        let hit = reference
            .iter()
            .enumerate()
            .position(|(j, r)| !used[j] && r == token);
        if let Some(j) = hit {
            used[j] = true;
        }
        alignment.push(hit);
    }
    let m = alignment.iter().flatten().count();
    if m == 0 {
        return 0.0;
    }
    let mut chunks = 0;
    let mut prev: Option<usize> = None;
    for a in &alignment {
        match (prev, a) {
            (Some(p), Some(j)) if *j == p + 1 => {}
            (_, Some(_)) => chunks += 1,
            _ => {}
        }
        prev = *a;
    }
    let m = m as f64;
    let precision = m / hyp.len() as f64;
    let recall = m / reference.len() as f64;
    let f_mean = precision * recall / (cfg.alpha * precision + (1.0 - cfg.alpha) * recall);
    let penalty = cfg.gamma * (chunks as f64 / m).powf(cfg.beta);
    f_mean * (1.0 - penalty)
}

pub fn meteor_lite(hypothesis: &str, reference: &str, lang: &str, cfg: &MeteorConfig) -> f64 {
    meteor_lite_tokens(
        &tokenize_for_metric(hypothesis, lang),
        &tokenize_for_metric(reference, lang),
        cfg,
    )
}

/// Corpus METEOR-lite: the mean of sentence scores.
pub fn meteor_lite_corpus<H: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[H],
    references: &[R],
    lang: &str,
    cfg: &MeteorConfig,
) -> Result<f64, EvalError> {
    if hypotheses.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(EvalError::EmptyInput("meteor needs at least one sentence".into()));
    }
    let sum: f64 = hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| meteor_lite(h.as_ref(), r.as_ref(), lang, cfg))
        .sum();
    Ok(sum / hypotheses.len() as f64)
}
