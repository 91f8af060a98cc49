use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use chorus_core::api::{self, AppState};
use chorus_core::config::Config;
use chorus_core::eval::{
    build_report, compare_runs, load_dataset, load_run, pairwise_comparisons, run_condition,
    write_run, BootstrapConfig, Condition, EvalConfig, Metric,
};
use chorus_core::session::{read_event_log, SessionRepository};
use chorus_core::templates::TemplateSet;
use chorus_core::tm::TmStore;

#[derive(Parser)]
#[command(name = "chorus", version, about = "MQM-aligned multi-agent translation workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP API.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Translation memory maintenance.
    Tm {
        #[command(subcommand)]
        action: TmAction,
    },
    /// Session log access.
    Session {
        #[command(subcommand)]
        action: SessionAction,
    },
    /// Agent-only evaluation.
    Eval {
        #[command(subcommand)]
        action: EvalAction,
    },
}

#[derive(Subcommand)]
enum TmAction {
    /// Merge a JSONL export into the store.
    Import {
        file: PathBuf,
        #[arg(long)]
        store: PathBuf,
    },
    /// Write a compacted JSONL copy of the store.
    Export {
        file: PathBuf,
        #[arg(long)]
        store: PathBuf,
    },
}

#[derive(Subcommand)]
enum SessionAction {
    /// Print a session's event log as JSON lines.
    Export {
        id: String,
        /// Directory of session logs.
        #[arg(long)]
        dir: PathBuf,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EvalAction {
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        condition: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Translation memory the agents retrieve from; empty when absent.
        #[arg(long)]
        tm: Option<PathBuf>,
    },
    Compare {
        #[arg(long)]
        run_a: PathBuf,
        #[arg(long)]
        run_b: PathBuf,
        #[arg(long, default_value = "bleu")]
        metric: String,
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "bleu")]
        metric: String,
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scores only, no pairwise comparisons.
        #[arg(long)]
        no_compare: bool,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Serve { config } => serve(&config),
        Command::Tm { action } => tm(action),
        Command::Session { action } => session(action),
        Command::Eval { action } => eval(action),
    }
}

fn serve(path: &Path) -> Result<()> {
    let config = Config::load(path).with_context(|| format!("loading {}", path.display()))?;
    let state = Arc::new(AppState::from_config(&config)?);
    // Held here so the provider (and any blocking HTTP client in it) is
    // dropped outside the async runtime.
    let keep_alive = state.clone();
    let runtime = tokio::runtime::Runtime::new()?;
    let result = runtime.block_on(api::serve(&config, state, async {
        let _ = tokio::signal::ctrl_c().await;
        log::info!("shutting down");
    }));
    runtime.shutdown_background();
    drop(keep_alive);
    result?;
    Ok(())
}

fn tm(action: TmAction) -> Result<()> {
    match action {
        TmAction::Import { file, store } => {
            let tm = TmStore::open(&store)?;
            let n = tm.import_from(&file)?;
            println!("imported {n} entries ({} total)", tm.len());
        }
        TmAction::Export { file, store } => {
            let tm = TmStore::open(&store)?;
            let n = tm.export_to(&file)?;
            println!("exported {n} entries");
        }
    }
    Ok(())
}

fn session(action: SessionAction) -> Result<()> {
    let SessionAction::Export { id, dir, out } = action;
    let repo = SessionRepository::open(&dir)?;
    let path = repo.log_path(&id).context("session directory required")?;
    if !path.exists() {
        bail!("unknown session {id}");
    }
    // Validate before export so a corrupt log is reported, not copied.
    let events = read_event_log(&path)?;
    chorus_core::session::Session::replay(&events)?;
    let text = std::fs::read_to_string(&path)?;
    match out {
        Some(out) => std::fs::write(out, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn eval(action: EvalAction) -> Result<()> {
    match action {
        EvalAction::Run {
            dataset,
            condition,
            config,
            seed,
            out,
            tm,
        } => {
            let condition: Condition = condition.parse()?;
            let config = Config::load(&config)?;
            let items = load_dataset(&dataset)?;
            if items.is_empty() {
                bail!("dataset {} is empty", dataset.display());
            }
            let provider = config.provider.build()?;
            let templates = match &config.server.templates_dir {
                Some(dir) => TemplateSet::from_dir(dir)?,
                None => TemplateSet::shipped(),
            };
            let store = match tm {
                Some(path) => TmStore::open(path)?,
                None => TmStore::in_memory(),
            };
            let cfg = EvalConfig {
                agent: config.provider.agent_config(),
                seed,
                templates: Arc::new(templates),
            };
            let run = run_condition(condition, &items, provider.as_ref(), &store, &cfg)?;
            write_run(&run, &out)?;
            let calls: u32 = run.items.iter().map(|i| i.provider_calls).sum();
            println!("{condition}: {} items, {calls} provider calls -> {}", run.items.len(), out.display());
        }
        EvalAction::Compare {
            run_a,
            run_b,
            metric,
            resamples,
            seed,
        } => {
            let metric: Metric = metric.parse()?;
            let a = load_run(&run_a)?;
            let b = load_run(&run_b)?;
            let cfg = BootstrapConfig {
                n_resamples: resamples,
                seed,
            };
            let comparisons = compare_runs(&a, &b, metric, &cfg)?;
            println!("{}", serde_json::to_string_pretty(&comparisons)?);
        }
        EvalAction::Report {
            runs,
            out,
            metric,
            resamples,
            seed,
            no_compare,
        } => {
            let metric: Metric = metric.parse()?;
            let runs = runs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>, _>>()?;
            let comparisons = if no_compare {
                Vec::new()
            } else {
                let cfg = BootstrapConfig {
                    n_resamples: resamples,
                    seed,
                };
                pairwise_comparisons(&runs, metric, &cfg)?
            };
            let report = build_report(&runs, &comparisons, &out)?;
            println!(
                "report for {} direction(s) written to {}",
                report.directions.len(),
                out.display()
            );
        }
    }
    Ok(())
}
