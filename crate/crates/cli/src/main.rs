//! `refine`: run one budgeted refinement round, report dataset metrics,
//! or validate answers, all from the command line.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use refinelab_core::data::{load_dataset, Axis, TopicDef};
use refinelab_core::pipeline::{self, ProviderMode, RunConfig, TargetsConfig};
use refinelab_core::provider::mock::MockProvider;
use refinelab_core::provider::Provider;
use refinelab_core::validator::{FixtureRetriever, Sandbox};
use refinelab_core::{data, metrics, Error};

#[derive(Parser)]
#[command(name = "refine", version, about = "budget-aware QA dataset refinement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one refinement round from a TOML config
    Run {
        #[arg(long)]
        config: PathBuf,
        /// output directory for refined.jsonl and report.json
        #[arg(long)]
        out: PathBuf,
        /// override the configured strategy (refinelab, greedy, uniform)
        #[arg(long)]
        strategy: Option<String>,
        /// override the budget as a fraction of capacity (0.25, 0.5, 1.0)
        #[arg(long)]
        budget_frac: Option<f64>,
        /// override the run seed
        #[arg(long)]
        seed: Option<u64>,
        /// force the offline provider regardless of config
        #[arg(long)]
        offline: bool,
    },
    /// Print empirical distributions and divergences for a dataset
    Metrics {
        #[arg(long)]
        dataset: PathBuf,
        /// TOML file with [topic] and optional [difficulty] target tables
        #[arg(long)]
        targets: PathBuf,
    },
    /// Route and check every sample's answer with the offline provider
    Validate {
        #[arg(long)]
        dataset: PathBuf,
        /// JSON fixture of retrieval passages
        #[arg(long)]
        passages: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_PROVIDER: u8 = 3;
const EXIT_STAGE: u8 = 4;

fn exit_for(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Argument(_)
        | Error::InvalidDistribution(_)
        | Error::InvalidTaxonomy(_) => EXIT_CONFIG,
        Error::ProviderUnavailable { .. } => EXIT_PROVIDER,
        _ => EXIT_STAGE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            strategy,
            budget_frac,
            seed,
            offline,
        } => cmd_run(config, out, strategy, budget_frac, seed, offline),
        Command::Metrics { dataset, targets } => cmd_metrics(dataset, targets),
        Command::Validate {
            dataset,
            passages,
            seed,
        } => cmd_validate(dataset, passages, seed),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}

fn cmd_run(
    config_path: PathBuf,
    out: PathBuf,
    strategy: Option<String>,
    budget_frac: Option<f64>,
    seed: Option<u64>,
    offline: bool,
) -> Result<ExitCode, Error> {
    let mut config = RunConfig::load(&config_path)?;
    if let Some(s) = strategy {
        config.strategy = s.parse()?;
    }
    if let Some(f) = budget_frac {
        config.budget.tokens = None;
        config.budget.fraction = Some(f);
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    if offline {
        config.provider.mode = ProviderMode::Mock;
    }
    config.validate()?;
    let outcome = pipeline::run(&config, &out)?;
    print!("{}", pipeline::render_report(&outcome.report));
    eprintln!("report: {}", outcome.report_path.display());
    if let Some(p) = &outcome.dataset_path {
        eprintln!("dataset: {}", p.display());
    }
    if outcome.report.failure.is_some() {
        return Ok(ExitCode::from(EXIT_STAGE));
    }
    Ok(ExitCode::SUCCESS)
}

/// Taxonomy for standalone commands: the target bins plus whatever
/// topics the dataset itself carries.
fn implied_taxonomy(topic_ids: impl IntoIterator<Item = String>) -> Vec<TopicDef> {
    let ids: BTreeSet<String> = topic_ids.into_iter().collect();
    ids.into_iter()
        .map(|id| TopicDef {
            name: id.clone(),
            id,
            description: String::new(),
            validation_route: None,
        })
        .collect()
}

fn dataset_topic_ids(path: &PathBuf) -> Result<BTreeSet<String>, Error> {
    let raw = std::fs::read_to_string(path)?;
    let mut ids = BTreeSet::new();
    for line in raw.lines().filter(|l| !l.trim().is_empty()) {
        if let Ok(v) = serde_json::from_str::<serde_json::Value>(line) {
            if let Some(t) = v.get("topic").and_then(|t| t.as_str()) {
                ids.insert(t.to_string());
            }
        }
    }
    Ok(ids)
}

fn cmd_metrics(dataset_path: PathBuf, targets_path: PathBuf) -> Result<ExitCode, Error> {
    let raw = std::fs::read_to_string(&targets_path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", targets_path.display())))?;
    let targets: TargetsConfig =
        toml::from_str(&raw).map_err(|e| Error::Config(format!("bad targets: {e}")))?;
    let spec = targets.to_spec()?;
    let mut ids = dataset_topic_ids(&dataset_path)?;
    ids.extend(targets.topic.keys().cloned());
    let taxonomy = data::Taxonomy::new(implied_taxonomy(ids))?;
    let (dataset, warnings) = load_dataset(&dataset_path, taxonomy)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let coverage = data::empirical_distribution(&dataset, Axis::Topic)?;
    let difficulty = data::empirical_distribution(&dataset, Axis::Difficulty)?;
    let out = serde_json::json!({
        "samples": dataset.len(),
        "coverage": {
            "weights": coverage.weights,
            "divergence": metrics::jsd(&coverage, &spec.topic_target)?,
        },
        "difficulty": {
            "weights": difficulty.weights,
            "divergence": metrics::jsd(&difficulty, &spec.difficulty_target)?,
        },
        "distractor_entropy": metrics::distractor_entropy(&dataset).ok(),
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("serializes"));
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(
    dataset_path: PathBuf,
    passages: Option<PathBuf>,
    seed: u64,
) -> Result<ExitCode, Error> {
    let ids = dataset_topic_ids(&dataset_path)?;
    let taxonomy = data::Taxonomy::new(implied_taxonomy(ids))?;
    let (mut dataset, warnings) = load_dataset(&dataset_path, taxonomy)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let provider = Provider::new(Box::new(MockProvider::new(seed)));
    let retriever = match passages {
        Some(p) => FixtureRetriever::load(&p)?,
        None => FixtureRetriever::default(),
    };
    let (results, warnings) =
        pipeline::validate_dataset(&dataset, &provider, &retriever, &Sandbox::default(), None)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let report = refinelab_core::validator::apply_corrections(&mut dataset, &results)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("serializes"));
    Ok(ExitCode::SUCCESS)
}
