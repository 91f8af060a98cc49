//! Paired bootstrap resampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{
    bleu_from_stats, bleu_stats, meteor_lite_tokens, tokenize_for_metric, BleuConfig, BleuStats,
    MeteorConfig, Metric,
};
use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            n_resamples: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// metric(A) - metric(B) on the full set.
    pub delta: f64,
    /// Fraction of resamples where metric(A) <= metric(B).
    pub p_value: f64,
    pub n_resamples: usize,
    pub seed: u64,
}

/// Per-item data precomputed once so each resample is a cheap fold.
enum Scored {
    Bleu(Vec<BleuStats>, Vec<BleuStats>),
    Meteor(Vec<f64>, Vec<f64>),
}

impl Scored {
    fn score(&self, idx: &mut dyn Iterator<Item = usize>, bleu: &BleuConfig) -> (f64, f64) {
        match self {
            Self::Bleu(a, b) => {
                let mut sa = BleuStats {
                    matches: vec![0; bleu.max_n],
                    totals: vec![0; bleu.max_n],
                    ..BleuStats::default()
                };
                let mut sb = sa.clone();
                for i in idx {
                    sa.add(&a[i]);
                    sb.add(&b[i]);
                }
                (bleu_from_stats(&sa, bleu), bleu_from_stats(&sb, bleu))
            }
            Self::Meteor(a, b) => {
                let (mut sa, mut sb, mut n) = (0.0, 0.0, 0usize);
                for i in idx {
                    sa += a[i];
                    sb += b[i];
                    n += 1;
                }
                (sa / n as f64, sb / n as f64)
            }
        }
    }
}

/// Paired bootstrap over `(hyp_a, hyp_b, reference)` triples. Ties count
/// against A, so identical systems give p >= 0.5.
pub fn paired_bootstrap<S: AsRef<str>>(
    pairs: &[(S, S, S)],
    metric: Metric,
    lang: &str,
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput("bootstrap needs at least one item".into()));
    }
    if cfg.n_resamples == 0 {
        return Err(EvalError::InvalidArgument("n_resamples must be at least 1".into()));
    }
    let bleu = BleuConfig::default();
    let meteor = MeteorConfig::default();
    let tokenized: Vec<(Vec<String>, Vec<String>, Vec<String>)> = pairs
        .iter()
        .map(|(a, b, r)| {
            (
                tokenize_for_metric(a.as_ref(), lang),
                tokenize_for_metric(b.as_ref(), lang),
                tokenize_for_metric(r.as_ref(), lang),
            )
        })
        .collect();
    let scored = match metric {
        Metric::Bleu => Scored::Bleu(
            tokenized.iter().map(|(a, _, r)| bleu_stats(a, r, bleu.max_n)).collect(),
            tokenized.iter().map(|(_, b, r)| bleu_stats(b, r, bleu.max_n)).collect(),
        ),
        Metric::MeteorLite => Scored::Meteor(
            tokenized.iter().map(|(a, _, r)| meteor_lite_tokens(a, r, &meteor)).collect(),
            tokenized.iter().map(|(_, b, r)| meteor_lite_tokens(b, r, &meteor)).collect(),
        ),
    };
    let n = pairs.len();
    let (full_a, full_b) = scored.score(&mut (0..n), &bleu);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut not_better = 0usize;
    let mut sample = vec![0usize; n];
    for _ in 0..cfg.n_resamples {
        for slot in sample.iter_mut() {
            *slot = rng.random_range(0..n);
        }
        let (a, b) = scored.score(&mut sample.iter().copied(), &bleu);
        if a <= b {
            not_better += 1;
        }
    }
    Ok(BootstrapResult {
        delta: full_a - full_b,
        p_value: not_better as f64 / cfg.n_resamples as f64,
        n_resamples: cfg.n_resamples,
        seed: cfg.seed,
    })
}
