use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bootstrap::{paired_bootstrap, BootstrapConfig};
use super::metrics::Metric;
use super::run::{score_run, Condition, ConditionRun};
use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub direction: String,
    pub condition_a: Condition,
    pub model_a: String,
    pub condition_b: Condition,
    pub model_b: String,
    pub metric: Metric,
    pub delta: f64,
    pub p_value: f64,
    pub n_resamples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub condition: Condition,
    pub model_id: String,
    pub bleu: f64,
    pub meteor_lite: f64,
    pub n_items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    pub direction: String,
    pub rows: Vec<ScoreRow>,
    pub comparisons: Vec<Comparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub directions: Vec<DirectionReport>,
}

/// Paired bootstrap of run A against run B, one comparison per shared
/// direction. Both runs must cover the same item ids in every direction.
pub fn compare_runs(
    a: &ConditionRun,
    b: &ConditionRun,
    metric: Metric,
    cfg: &BootstrapConfig,
) -> Result<Vec<Comparison>, EvalError> {
    let groups_a = a.by_direction();
    let groups_b = b.by_direction();
    if groups_a.keys().ne(groups_b.keys()) {
        return Err(EvalError::MismatchedRuns("runs cover different directions".into()));
    }
    let mut out = Vec::new();
    for (direction, items_a) in &groups_a {
        let items_b = &groups_b[direction];
        let ids_a: Vec<&str> = items_a.iter().map(|i| i.item_id.as_str()).collect();
        let ids_b: Vec<&str> = items_b.iter().map(|i| i.item_id.as_str()).collect();
        if ids_a != ids_b {
            return Err(EvalError::MismatchedRuns(format!(
                "direction {direction}: item ids differ"
            )));
        }
        let triples: Vec<(&str, &str, &str)> = items_a
            .iter()
            .zip(items_b)
            .map(|(x, y)| (x.hypothesis.as_str(), y.hypothesis.as_str(), x.reference.as_str()))
            .collect();
        let lang = items_a[0].language_pair.target_lang.as_str();
        let result = paired_bootstrap(&triples, metric, lang, cfg)?;
        out.push(Comparison {
            direction: direction.clone(),
            condition_a: a.condition(),
            model_a: a.model_id().to_string(),
            condition_b: b.condition(),
            model_b: b.model_id().to_string(),
            metric,
            delta: result.delta,
            p_value: result.p_value,
            n_resamples: result.n_resamples,
            seed: result.seed,
        });
    }
    Ok(out)
}

/// Every unordered pair of runs, in input order (run i as A against run j > i).
pub fn pairwise_comparisons(
    runs: &[ConditionRun],
    metric: Metric,
    cfg: &BootstrapConfig,
) -> Result<Vec<Comparison>, EvalError> {
    let mut out = Vec::new();
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            out.extend(compare_runs(&runs[i], &runs[j], metric, cfg)?);
        }
    }
    Ok(out)
}

fn render_markdown(report: &MetricReport) -> String {
    let mut md = String::from("# Evaluation report\n");
    for d in &report.directions {
        let _ = write!(md, "\n## {}\n\n", d.direction);
        md.push_str("| condition | model | BLEU | METEOR-lite | items |\n");
        md.push_str("|---|---|---:|---:|---:|\n");
        for r in &d.rows {
            let _ = writeln!(
                md,
                "| {} | {} | {:.2} | {:.2} | {} |",
                r.condition,
                r.model_id,
                r.bleu * 100.0,
                r.meteor_lite * 100.0,
                r.n_items
            );
        }
        if d.comparisons.is_empty() {
            continue;
        }
        md.push_str("\n| A | B | metric | delta | p-value | resamples | seed |\n");
        md.push_str("|---|---|---|---:|---:|---:|---:|\n");
        for c in &d.comparisons {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {:+.2} | {:.4} | {} | {} |",
                c.condition_a,
                c.condition_b,
                c.metric.name(),
                c.delta * 100.0,
                c.p_value,
                c.n_resamples,
                c.seed
            );
        }
    }
    md
}

/// Per-direction score tables plus the given comparisons, written to
/// `report.json` and `report.md` under `out_dir`.
pub fn build_report(
    runs: &[ConditionRun],
    comparisons: &[Comparison],
    out_dir: &Path,
) -> Result<MetricReport, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::EmptyInput("a report needs at least one run".into()));
    }
    let mut directions: BTreeMap<String, DirectionReport> = BTreeMap::new();
    for run in runs {
        for (direction, score) in score_run(run)? {
            directions
                .entry(direction.clone())
                .or_insert_with(|| DirectionReport {
                    direction,
                    rows: Vec::new(),
                    comparisons: Vec::new(),
                })
                .rows
                .push(ScoreRow {
                    condition: run.condition(),
                    model_id: run.model_id().to_string(),
                    bleu: score.bleu,
                    meteor_lite: score.meteor_lite,
                    n_items: score.n_items,
                });
        }
    }
    for c in comparisons {
        if let Some(d) = directions.get_mut(&c.direction) {
            d.comparisons.push(c.clone());
        }
    }
    let report = MetricReport {
        directions: directions.into_values().collect(),
    };
    std::fs::create_dir_all(out_dir).map_err(|e| EvalError::io(out_dir, e))?;
    let json_path = out_dir.join("report.json");
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    std::fs::write(&json_path, json).map_err(|e| EvalError::io(&json_path, e))?;
    let md_path = out_dir.join("report.md");
    std::fs::write(&md_path, render_markdown(&report)).map_err(|e| EvalError::io(&md_path, e))?;
    Ok(report)
}
