//! One refinement round end to end: configuration, stage orchestration,
//! plan execution, and reporting.
//!
//! A run loads the dataset, labels and rates unlabeled samples, measures
//! distribution gaps, pilots each operator to estimate gain and cost,
//! solves the budgeted assignment, executes the plan, optionally
//! validates answers, and atomically writes the refined dataset plus a
//! machine-readable report. Probe traffic is accounted on a forked
//! ledger and never counts against the budget.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::{
    self, AssignmentInstance, Op, PilotContext, PilotEstimate, Plan, Selection,
};
use crate::coverage;
use crate::data::{
    empirical_distribution, gap_vector, load_dataset, save_dataset, Axis, Band, Dataset,
    Distribution, QASample, TargetSpec, Taxonomy, TopicDef, BANDS,
};
use crate::difficulty::{self, EloConfig, SeedExemplar};
use crate::error::{Error, Result};
use crate::metrics;
use crate::provider::http::{HttpBackend, HttpConfig, HttpTransport};
use crate::provider::mock::{MockFixtures, MockProvider};
use crate::provider::Provider;
use crate::validator::{self, CorrectionReport, FixtureRetriever, Route, Sandbox, ValidationResult};

/// Band shares used when a config omits the difficulty target:
/// no easy, 40% medium, 60% hard.
pub const DEFAULT_DIFFICULTY_TARGET: [(Band, f64); 3] = [
    (Band::Easy, 0.0),
    (Band::Medium, 0.4),
    (Band::Hard, 0.6),
];

/// Budget fractions accepted by `budget.fraction`.
pub const ALLOWED_FRACTIONS: [f64; 3] = [0.25, 0.5, 1.0];

/// Upper bound on the tokens one validation can cost, used to pre-charge
/// the budget gate in `in-budget` mode.
const VALIDATION_COST_CEILING: f64 = 600.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Refinelab,
    Greedy,
    Uniform,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Refinelab => "refinelab",
            Strategy::Greedy => "greedy",
            Strategy::Uniform => "uniform",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Strategy> {
        match s {
            "refinelab" => Ok(Strategy::Refinelab),
            "greedy" => Ok(Strategy::Greedy),
            "uniform" => Ok(Strategy::Uniform),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    #[serde(default)]
    pub mode: ProviderMode,
    /// seed for the offline provider; defaults to the run seed
    #[serde(default)]
    pub mock_seed: Option<u64>,
    /// JSON file of offline-provider fixtures (answer keys, overrides)
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationMode {
    #[default]
    On,
    Off,
    /// validation calls are charged against the remaining token budget
    InBudget,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    #[serde(default)]
    pub mode: ValidationMode,
    /// JSON fixture of retrieval passages keyed by keyword-set hash
    #[serde(default)]
    pub passages: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    /// absolute token budget; exclusive with `fraction`
    #[serde(default)]
    pub tokens: Option<f64>,
    /// fraction of the full-refinement capacity C; one of 0.25, 0.5, 1
    #[serde(default)]
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetsConfig {
    pub topic: BTreeMap<String, f64>,
    #[serde(default)]
    pub difficulty: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub min_dataset_size: Option<usize>,
}

impl TargetsConfig {
    pub fn to_spec(&self) -> Result<TargetSpec> {
        let difficulty = match &self.difficulty {
            Some(map) => map.clone(),
            None => DEFAULT_DIFFICULTY_TARGET
                .iter()
                .map(|(b, w)| (b.as_str().to_string(), *w))
                .collect(),
        };
        for key in difficulty.keys() {
            if Band::parse(key).is_none() {
                return Err(Error::Config(format!("unknown difficulty band `{key}`")));
            }
        }
        Ok(TargetSpec {
            topic_target: Distribution::new(Axis::Topic, self.topic.clone())?,
            difficulty_target: Distribution::new(Axis::Difficulty, difficulty)?,
            min_dataset_size: self.min_dataset_size,
        })
    }
}

/// One refinement round, fully specified. Loaded from TOML; every run
/// must carry an explicit seed so reruns are reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub domain: String,
    pub seed: u64,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default = "default_pilot_batch")]
    pub pilot_batch: usize,
    pub taxonomy: Vec<TopicDef>,
    pub targets: TargetsConfig,
    pub budget: BudgetConfig,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub elo: EloConfig,
    #[serde(default)]
    pub validation: ValidationConfig,
}

fn default_pilot_batch() -> usize {
    assignment::PILOT_BATCH_SIZE
}

impl RunConfig {
    pub fn from_toml_str(raw: &str) -> Result<RunConfig> {
        let config: RunConfig =
            toml::from_str(raw).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_toml_str(&raw)
    }

    pub fn validate(&self) -> Result<()> {
        if self.domain.trim().is_empty() {
            return Err(Error::Config("domain must be nonempty".into()));
        }
        if self.pilot_batch == 0 {
            return Err(Error::Config("pilot_batch must be >= 1".into()));
        }
        if self.taxonomy.is_empty() {
            return Err(Error::Config("taxonomy must be nonempty".into()));
        }
        Taxonomy::new(self.taxonomy.clone())?;
        self.targets.to_spec()?;
        self.elo.validate()?;
        match (self.budget.tokens, self.budget.fraction) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "budget.tokens and budget.fraction are exclusive".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "one of budget.tokens or budget.fraction is required".into(),
                ))
            }
            (Some(t), None) => {
                if !t.is_finite() || t < 0.0 {
                    return Err(Error::Config(format!("budget.tokens {t} must be >= 0")));
                }
            }
            (None, Some(f)) => {
                if !ALLOWED_FRACTIONS.iter().any(|a| (a - f).abs() < 1e-12) {
                    return Err(Error::Config(format!(
                        "budget.fraction {f} must be one of 0.25, 0.5, 1.0"
                    )));
                }
            }
        }
        if self.provider.mode == ProviderMode::Http
            && (self.provider.base_url.is_none() || self.provider.model.is_none())
        {
            return Err(Error::Config(
                "http provider requires base_url and model".into(),
            ));
        }
        Ok(())
    }

    pub fn taxonomy(&self) -> Result<Taxonomy> {
        Taxonomy::new(self.taxonomy.clone())
    }

    pub fn build_provider(&self) -> Result<Provider> {
        match self.provider.mode {
            ProviderMode::Mock => {
                let seed = self.provider.mock_seed.unwrap_or(self.seed);
                let mock = match &self.provider.fixtures {
                    Some(path) => {
                        let raw = std::fs::read_to_string(path)?;
                        let fixtures: MockFixtures = serde_json::from_str(&raw)?;
                        MockProvider::with_fixtures(seed, fixtures)
                    }
                    None => MockProvider::new(seed),
                };
                Ok(Provider::new(Box::new(mock)))
            }
            ProviderMode::Http => {
                let config = HttpConfig {
                    base_url: self.provider.base_url.clone().unwrap_or_default(),
                    model: self.provider.model.clone().unwrap_or_default(),
                    api_key_env: self
                        .provider
                        .api_key_env
                        .clone()
                        .unwrap_or_else(|| "REFINE_API_KEY".to_string()),
                };
                Ok(Provider::new(Box::new(HttpBackend::new(
                    HttpTransport::new()?,
                    config,
                ))))
            }
        }
    }
}

/// Built-in difficulty anchors: two exemplars per band at the seed
/// ratings. The band marker in the question drives the offline judge.
pub fn builtin_seed_set(domain: &str, config: &EloConfig) -> Vec<SeedExemplar> {
    let mut out = Vec::new();
    for band in BANDS {
        for j in 1..=2 {
            out.push(SeedExemplar {
                id: format!("anchor-{}-{j}", band.as_str()),
                question: format!(
                    "anchor {domain} exemplar {j} [{}] reference item",
                    band.as_str()
                ),
                band,
                rating: config.seed_rating(band),
            });
        }
    }
    out
}

/// Cost of running the single best operation on every sample: the
/// full-refinement capacity C that budget fractions are relative to.
pub fn capacity(instance: &AssignmentInstance) -> f64 {
    instance
        .samples
        .iter()
        .filter_map(|s| {
            s.choices
                .iter()
                .filter(|c| c.delta > 0.0)
                .max_by(|a, b| {
                    a.delta
                        .partial_cmp(&b.delta)
                        .unwrap()
                        .then(b.cost.partial_cmp(&a.cost).unwrap())
                })
                .map(|c| c.cost)
        })
        .sum()
}

pub fn delta_max(instance: &AssignmentInstance) -> f64 {
    instance
        .samples
        .iter()
        .flat_map(|s| s.choices.iter())
        .map(|c| c.delta)
        .fold(0.0, f64::max)
}

/// Greedy completion of a rounded plan: spends leftover budget on the
/// densest remaining choices of still-unassigned samples.
fn residual_fill(instance: &AssignmentInstance, plan: &mut Plan) {
    let mut assigned: BTreeSet<String> = plan
        .selections
        .iter()
        .map(|s| s.sample_id.clone())
        .collect();
    loop {
        let remaining = instance.budget - plan.spent;
        let mut best: Option<(String, crate::assignment::Choice)> = None;
        for s in &instance.samples {
            if assigned.contains(&s.sample_id) {
                continue;
            }
            for c in &s.choices {
                if c.delta <= 0.0 || c.cost > remaining + 1e-9 {
                    continue;
                }
                let better = match &best {
                    None => true,
                    Some((bid, b)) => {
                        let d = c.delta / c.cost - b.delta / b.cost;
                        d > 1e-15 || (d.abs() <= 1e-15 && s.sample_id < *bid)
                    }
                };
                if better {
                    best = Some((s.sample_id.clone(), c.clone()));
                }
            }
        }
        let Some((id, c)) = best else { break };
        assigned.insert(id.clone());
        plan.selections.push(Selection {
            sample_id: id,
            op: c.op,
            target: c.target.clone(),
            delta: c.delta,
            cost: c.cost,
        });
        plan.objective += c.delta;
        plan.spent += c.cost;
    }
}

/// Solves the instance under the chosen strategy. The default strategy
/// rounds the relaxation, tops it up greedily, and falls back to the
/// plain greedy plan whenever that scores higher, so it never loses to
/// the greedy baseline.
pub fn solve_plan<R: rand::Rng>(
    instance: &AssignmentInstance,
    strategy: Strategy,
    rng: &mut R,
) -> Result<Plan> {
    match strategy {
        Strategy::Greedy => assignment::baseline_greedy(instance),
        Strategy::Uniform => assignment::baseline_uniform(instance, rng),
        Strategy::Refinelab => {
            let frac = assignment::solve_lp_greedy(instance);
            let mut rounded = assignment::round(instance, &frac)?;
            residual_fill(instance, &mut rounded);
            let greedy = assignment::baseline_greedy(instance)?;
            let mut best = if rounded.objective >= greedy.objective {
                rounded
            } else {
                greedy
            };
            best.solver = "refinelab".to_string();
            best.lp_bound = Some(frac.bound);
            Ok(best)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub sample_id: String,
    pub action: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionSummary {
    pub removals: usize,
    pub additions: usize,
    pub rewrites: usize,
    pub discarded: usize,
    /// dataset size the executor aimed for
    pub target_size: usize,
    pub spent_tokens: u64,
    pub probe_tokens: u64,
}

pub struct ExecutionContext<'a> {
    pub provider: &'a Provider,
    pub domain: &'a str,
    pub seed_set: &'a [SeedExemplar],
    pub elo: EloConfig,
    pub spec: &'a TargetSpec,
}

fn axis_count_maps(dataset: &Dataset) -> (BTreeMap<String, usize>, BTreeMap<String, usize>) {
    let mut topics = BTreeMap::new();
    let mut bands = BTreeMap::new();
    for s in dataset.live() {
        *topics.entry(s.topic_bin().to_string()).or_insert(0) += 1;
        let band = s.difficulty.unwrap_or(Band::Medium);
        *bands.entry(band.as_str().to_string()).or_insert(0) += 1;
    }
    (topics, bands)
}

/// Runs the plan: removals first (bins trimmed until none exceeds its
/// share of the current size), then funded additions directed at the
/// emptiest bins on both axes, then distractor rewrites. Additions are
/// re-rated on acceptance; every non-removal op is gated on the token
/// budget. Removals cost no tokens and are capped only by the dataset
/// size floor.
pub fn execute_plan(
    dataset: &mut Dataset,
    plan: &Plan,
    budget: f64,
    ctx: &ExecutionContext,
) -> Result<(ExecutionSummary, Vec<AuditEvent>, Vec<String>)> {
    let mut summary = ExecutionSummary::default();
    let mut audit = Vec::new();
    let mut warnings = Vec::new();
    if plan.selections.is_empty() {
        return Ok((summary, audit, warnings));
    }
    let spec = ctx.spec;
    let floor = spec.min_dataset_size.unwrap_or(0);

    // removal phase: cascade until no bin holds more than its share of
    // the current live count, preferring samples over quota on both
    // axes, deterministic by id. Quotas shrink as samples leave, so the
    // endpoint is the largest quota-consistent subset.
    loop {
        if dataset.len() <= floor.max(1) {
            break;
        }
        let size = dataset.len();
        let (topics, bands) = axis_count_maps(dataset);
        let over_t = |bin: &str| {
            topics.get(bin).copied().unwrap_or(0) as f64
                - spec.topic_target.weight(bin) * size as f64
        };
        let over_b = |bin: &str| {
            bands.get(bin).copied().unwrap_or(0) as f64
                - spec.difficulty_target.weight(bin) * size as f64
        };
        let mut pick: Option<(&QASample, f64)> = None;
        for s in dataset.live() {
            let ot = over_t(s.topic_bin());
            let ob = over_b(s.difficulty.unwrap_or(Band::Medium).as_str());
            let mut score = 0.0;
            if ot >= 1.0 - 1e-9 {
                score += ot;
            }
            if ob >= 1.0 - 1e-9 {
                score += ob;
            }
            if score <= 0.0 {
                continue;
            }
            let better = match &pick {
                None => true,
                Some((p, ps)) => score > ps + 1e-12 || ((score - ps).abs() <= 1e-12 && s.id < p.id),
            };
            if better {
                pick = Some((s, score));
            }
        }
        let Some((victim, _)) = pick else { break };
        let id = victim.id.clone();
        let detail = format!(
            "{} / {}",
            victim.topic_bin(),
            victim.difficulty.unwrap_or(Band::Medium).as_str()
        );
        dataset.tombstone(&id);
        summary.removals += 1;
        audit.push(AuditEvent {
            sample_id: id,
            action: "removed".to_string(),
            detail,
        });
    }

    // addition and rewrite phase, in plan order
    let ledger_start = ctx.provider.ledger().usage().total();
    let spent = |summary: &ExecutionSummary| -> f64 {
        let _ = summary;
        (ctx.provider.ledger().usage().total() - ledger_start) as f64
    };
    let mut expansion_sources: BTreeSet<(String, String)> = BTreeSet::new();
    let mut counter = 0usize;
    for sel in &plan.selections {
        if matches!(sel.op, Op::R1 | Op::R3) {
            continue;
        }
        if spent(&summary) + sel.cost > budget + 1e-6 {
            warnings.push(format!(
                "budget exhausted before `{}` on {}",
                sel.op.as_str(),
                sel.sample_id
            ));
            break;
        }
        match sel.op {
            Op::R2 | Op::R4 => {
                // room for the incoming sample: quotas at size N+1
                let size = dataset.len() + 1;
                let (topics, bands) = axis_count_maps(dataset);
                let deficit = |counts: &BTreeMap<String, usize>, target: &Distribution| {
                    target
                        .weights
                        .iter()
                        .map(|(bin, w)| {
                            let have = counts.get(bin).copied().unwrap_or(0) as f64;
                            (bin.clone(), w * size as f64 - have)
                        })
                        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)))
                };
                let Some((topic_star, dt)) = deficit(&topics, &spec.topic_target) else {
                    continue;
                };
                let Some((band_star, db)) = deficit(&bands, &spec.difficulty_target) else {
                    continue;
                };
                if dt < 1.0 - 1e-9 && db < 1.0 - 1e-9 {
                    continue;
                }
                let band_star = Band::parse(&band_star).unwrap_or(Band::Medium);
                counter += 1;
                if sel.op == Op::R4 {
                    let source = dataset.get(&sel.sample_id).cloned();
                    match difficulty::generate_at_difficulty(
                        ctx.domain,
                        &topic_star,
                        band_star,
                        source.as_ref(),
                        format!("gen-{counter:04}"),
                        ctx.seed_set,
                        &ctx.elo,
                        ctx.provider,
                    ) {
                        Ok(out) if out.retained => {
                            let id = out.sample.id.clone();
                            dataset.push(out.sample)?;
                            summary.additions += 1;
                            audit.push(AuditEvent {
                                sample_id: id,
                                action: "generated".to_string(),
                                detail: format!("{topic_star} / {}", band_star.as_str()),
                            });
                        }
                        Ok(out) => {
                            summary.discarded += 1;
                            audit.push(AuditEvent {
                                sample_id: out.sample.id,
                                action: "discarded".to_string(),
                                detail: format!(
                                    "generated at {} but rated {}",
                                    band_star.as_str(),
                                    out.band.as_str()
                                ),
                            });
                        }
                        Err(Error::GenerationFailed(id)) | Err(Error::RatingFailed(id)) => {
                            summary.discarded += 1;
                            warnings.push(format!("generation failed for {id}"));
                        }
                        Err(e) => return Err(e),
                    }
                } else {
                    // pick an unused source in the band we need to grow,
                    // so the inherited difficulty lands where the gap is
                    let mut sources: Vec<&QASample> = dataset
                        .live()
                        .filter(|s| s.difficulty == Some(band_star))
                        .filter(|s| {
                            !expansion_sources
                                .contains(&(s.id.clone(), topic_star.clone()))
                        })
                        .collect();
                    sources.sort_by(|a, b| a.id.cmp(&b.id));
                    let source = sources
                        .first()
                        .copied()
                        .or_else(|| dataset.get(&sel.sample_id))
                        .or_else(|| dataset.live().next());
                    let Some(source) = source.cloned() else { continue };
                    expansion_sources.insert((source.id.clone(), topic_star.clone()));
                    match coverage::expand(&source, &topic_star, 1, ctx.domain, ctx.provider) {
                        Ok((cands, warn, _)) => {
                            warnings.extend(warn);
                            let accepted =
                                coverage::filter_candidates(cands, dataset, ctx.provider)?;
                            let Some(cand) = accepted.into_iter().next() else {
                                summary.discarded += 1;
                                audit.push(AuditEvent {
                                    sample_id: source.id.clone(),
                                    action: "discarded".to_string(),
                                    detail: "expansion candidate was a near-duplicate".into(),
                                });
                                continue;
                            };
                            let mut sample = cand.sample;
                            sample.id = format!("exp-{counter:04}");
                            match difficulty::rate_difficulty(
                                &sample,
                                ctx.seed_set,
                                &ctx.elo,
                                ctx.provider,
                            ) {
                                Ok((rating, band)) => {
                                    sample.elo = Some(rating);
                                    sample.difficulty = Some(band);
                                    let id = sample.id.clone();
                                    let detail =
                                        format!("{topic_star} / {} from {}", band.as_str(), source.id);
                                    dataset.push(sample)?;
                                    summary.additions += 1;
                                    audit.push(AuditEvent {
                                        sample_id: id,
                                        action: "expanded".to_string(),
                                        detail,
                                    });
                                }
                                Err(Error::RatingFailed(id)) => {
                                    summary.discarded += 1;
                                    warnings.push(format!("rating failed for expansion {id}"));
                                }
                                Err(e) => return Err(e),
                            }
                        }
                        Err(Error::ExpansionFailed(id)) => {
                            summary.discarded += 1;
                            warnings.push(format!("expansion failed for {id}"));
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
            Op::R5 => {
                let Some(sample) = dataset.get(&sel.sample_id).cloned() else {
                    continue;
                };
                let Some(band) = Band::parse(&sel.target) else {
                    continue;
                };
                match difficulty::rewrite_distractors(&sample, band, 3, ctx.provider) {
                    Ok(out) => {
                        warnings.extend(out.warnings);
                        let mut rewritten = out.sample;
                        match difficulty::rate_difficulty(
                            &rewritten,
                            ctx.seed_set,
                            &ctx.elo,
                            ctx.provider,
                        ) {
                            Ok((rating, new_band)) => {
                                rewritten.elo = Some(rating);
                                rewritten.difficulty = Some(new_band);
                                *dataset.get_mut(&sel.sample_id).unwrap() = rewritten;
                                summary.rewrites += 1;
                                audit.push(AuditEvent {
                                    sample_id: sel.sample_id.clone(),
                                    action: "rewritten".to_string(),
                                    detail: format!("toward {}", band.as_str()),
                                });
                            }
                            Err(Error::RatingFailed(id)) => {
                                warnings.push(format!("rating failed after rewrite of {id}"));
                            }
                            Err(e) => return Err(e),
                        }
                    }
                    Err(Error::Argument(msg)) | Err(Error::MiningFailed(msg)) => {
                        warnings.push(format!("rewrite skipped: {msg}"));
                    }
                    Err(Error::Format { raw, .. }) => {
                        warnings.push(format!("rewrite skipped: unparseable output {raw:?}"));
                    }
                    Err(e) => return Err(e),
                }
            }
            Op::R1 | Op::R3 => unreachable!(),
        }
    }
    summary.spent_tokens = ctx.provider.ledger().usage().total() - ledger_start;
    summary.target_size = dataset.len();
    Ok((summary, audit, warnings))
}

/// Routes and checks every live sample; `budget` caps validation spend
/// when the run charges validation against the token budget.
pub fn validate_dataset(
    dataset: &Dataset,
    provider: &Provider,
    retriever: &dyn validator::Retriever,
    sandbox: &Sandbox,
    budget: Option<f64>,
) -> Result<(Vec<ValidationResult>, Vec<String>)> {
    let mut results = Vec::new();
    let mut warnings = Vec::new();
    let start = provider.ledger().usage().total();
    let mut ids: Vec<&str> = dataset.live().map(|s| s.id.as_str()).collect();
    ids.sort_unstable();
    for id in ids {
        if let Some(b) = budget {
            let spent = (provider.ledger().usage().total() - start) as f64;
            if spent + VALIDATION_COST_CEILING > b + 1e-6 {
                warnings.push(format!("validation budget exhausted before {id}"));
                break;
            }
        }
        let sample = dataset.get(id).expect("live id");
        let result = match validator::route(sample, &dataset.taxonomy, provider) {
            Route::Code => validator::check_by_code(sample, sandbox, provider)?,
            Route::Retrieval => {
                let keywords = validator::extract_keywords(&sample.question, provider)?;
                let (passages, warn) = validator::retrieve_passages(&keywords, retriever)?;
                warnings.extend(warn);
                validator::verify_factual(sample, &passages, provider)?
            }
        };
        results.push(result);
    }
    Ok((results, warnings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSnapshot {
    pub weights: BTreeMap<String, f64>,
    pub divergence: f64,
}

fn snapshot(dataset: &Dataset, axis: Axis, target: &Distribution) -> Result<AxisSnapshot> {
    let emp = empirical_distribution(dataset, axis)?;
    Ok(AxisSnapshot {
        divergence: metrics::jsd(&emp, target)?,
        weights: emp.weights,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub solver: String,
    pub objective: f64,
    pub planned_spend: f64,
    pub budget: f64,
    pub capacity: f64,
    pub delta_max: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lp_bound: Option<f64>,
    pub op_counts: BTreeMap<String, usize>,
}

fn summarize_plan(plan: &Plan, budget: f64, cap: f64, dmax: f64) -> PlanSummary {
    let mut op_counts = BTreeMap::new();
    for sel in &plan.selections {
        *op_counts.entry(sel.op.as_str().to_string()).or_insert(0) += 1;
    }
    PlanSummary {
        solver: plan.solver.clone(),
        objective: plan.objective,
        planned_spend: plan.spent,
        budget,
        capacity: cap,
        delta_max: dmax,
        lp_bound: plan.lp_bound,
        op_counts,
    }
}

/// Everything one run produces besides the refined dataset itself.
/// Serialization is deterministic: ordered maps, fixed field order, no
/// wall-clock values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub seed: u64,
    pub strategy: String,
    pub domain: String,
    pub samples_before: usize,
    pub samples_after: usize,
    pub coverage_before: Option<AxisSnapshot>,
    pub coverage_after: Option<AxisSnapshot>,
    pub difficulty_before: Option<AxisSnapshot>,
    pub difficulty_after: Option<AxisSnapshot>,
    pub distractor_entropy_before: Option<f64>,
    pub distractor_entropy_after: Option<f64>,
    pub plan: Option<PlanSummary>,
    pub executed: Option<ExecutionSummary>,
    pub validation: Option<CorrectionReport>,
    pub warnings: Vec<String>,
    pub audit: Vec<AuditEvent>,
    pub failure: Option<String>,
}

impl RefinementReport {
    fn skeleton(config: &RunConfig) -> RefinementReport {
        RefinementReport {
            seed: config.seed,
            strategy: config.strategy.as_str().to_string(),
            domain: config.domain.clone(),
            samples_before: 0,
            samples_after: 0,
            coverage_before: None,
            coverage_after: None,
            difficulty_before: None,
            difficulty_after: None,
            distractor_entropy_before: None,
            distractor_entropy_after: None,
            plan: None,
            executed: None,
            validation: None,
            warnings: Vec::new(),
            audit: Vec::new(),
            failure: None,
        }
    }
}

pub fn report_json(report: &RefinementReport) -> String {
    let mut out = serde_json::to_string_pretty(report).expect("report serializes");
    out.push('\n');
    out
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "-".to_string(),
    }
}

/// Human-readable summary table with original and refined columns.
pub fn render_report(r: &RefinementReport) -> String {
    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    line(format!(
        "refinement report  (strategy {}, seed {}, domain {})",
        r.strategy, r.seed, r.domain
    ));
    line(format!("{:<26}{:<14}{}", "metric", "orig.", "refined"));
    line(format!(
        "{:<26}{:<14}{}",
        "samples", r.samples_before, r.samples_after
    ));
    line(format!(
        "{:<26}{:<14}{}",
        "coverage divergence",
        fmt_opt(r.coverage_before.as_ref().map(|s| s.divergence)),
        fmt_opt(r.coverage_after.as_ref().map(|s| s.divergence)),
    ));
    line(format!(
        "{:<26}{:<14}{}",
        "difficulty divergence",
        fmt_opt(r.difficulty_before.as_ref().map(|s| s.divergence)),
        fmt_opt(r.difficulty_after.as_ref().map(|s| s.divergence)),
    ));
    line(format!(
        "{:<26}{:<14}{}",
        "distractor entropy",
        fmt_opt(r.distractor_entropy_before),
        fmt_opt(r.distractor_entropy_after),
    ));
    if let Some(p) = &r.plan {
        line(format!(
            "plan: solver {}, objective {:.6}, planned spend {:.1} of budget {:.1} (capacity {:.1})",
            p.solver, p.objective, p.planned_spend, p.budget, p.capacity
        ));
        let ops = p
            .op_counts
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(", ");
        line(format!("plan ops: {ops}"));
    }
    if let Some(e) = &r.executed {
        line(format!(
            "executed: removals {}, additions {}, rewrites {}, discarded {}, tokens {} (probe {})",
            e.removals, e.additions, e.rewrites, e.discarded, e.spent_tokens, e.probe_tokens
        ));
    }
    if let Some(v) = &r.validation {
        line(format!(
            "validation: passed {}, corrected {}, failed {}, inconclusive {}, ratio {}",
            v.passed,
            v.corrected,
            v.failed,
            v.inconclusive,
            fmt_opt(v.correction_ratio)
        ));
    }
    if let Some(f) = &r.failure {
        line(format!("failed at: {f}"));
    }
    out
}

pub struct RunOutcome {
    pub report: RefinementReport,
    pub report_path: PathBuf,
    /// present only when the run completed and the dataset was written
    pub dataset_path: Option<PathBuf>,
}

fn write_report(report: &RefinementReport, out_dir: &Path) -> Result<PathBuf> {
    let path = out_dir.join("report.json");
    let mut tmp = tempfile::NamedTempFile::new_in(out_dir)?;
    tmp.write_all(report_json(report).as_bytes())?;
    tmp.flush()?;
    tmp.persist(&path)
        .map_err(|e| Error::Io(e.error))?;
    Ok(path)
}

type StageResult<T> = std::result::Result<T, (String, Error)>;

fn at<T>(stage: &str, r: Result<T>) -> StageResult<T> {
    r.map_err(|e| (stage.to_string(), e))
}

/// One full refinement round. Config and provider-setup problems are
/// hard errors; a failure in a later stage yields a partial report with
/// the failing stage recorded, and no dataset is written.
pub fn run(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let provider = config.build_provider()?;
    let mut report = RefinementReport::skeleton(config);
    let result = run_stages(config, &provider, out_dir, &mut report);
    match result {
        Ok(dataset_path) => {
            let report_path = write_report(&report, out_dir)?;
            Ok(RunOutcome {
                report,
                report_path,
                dataset_path: Some(dataset_path),
            })
        }
        Err((stage, e)) => {
            if matches!(e, Error::ProviderUnavailable { .. }) {
                return Err(e);
            }
            report.failure = Some(format!("{stage}: {e}"));
            let report_path = write_report(&report, out_dir)?;
            Ok(RunOutcome {
                report,
                report_path,
                dataset_path: None,
            })
        }
    }
}

fn run_stages(
    config: &RunConfig,
    provider: &Provider,
    out_dir: &Path,
    report: &mut RefinementReport,
) -> StageResult<PathBuf> {
    let spec = at("load", config.targets.to_spec())?;
    let taxonomy = at("load", config.taxonomy())?;
    let (mut dataset, load_warnings) = at("load", load_dataset(&config.dataset, taxonomy))?;
    report.warnings.extend(load_warnings);
    report.samples_before = dataset.len();
    let seed_set = builtin_seed_set(&config.domain, &config.elo);

    // label topics and rate difficulty where missing
    let ids: Vec<String> = {
        let mut v: Vec<String> = dataset.live().map(|s| s.id.clone()).collect();
        v.sort_unstable();
        v
    };
    for id in &ids {
        let sample = dataset.get(id).expect("live id").clone();
        if sample.topic.is_none() {
            let topic = at("label", coverage::classify_topic(&sample, &dataset.taxonomy.clone(), provider))?;
            if dataset.taxonomy.has_topic(&topic) {
                dataset.get_mut(id).unwrap().topic = Some(topic.clone());
                report.audit.push(AuditEvent {
                    sample_id: id.clone(),
                    action: "labeled".to_string(),
                    detail: topic,
                });
            }
        }
        if dataset.get(id).unwrap().difficulty.is_none() {
            let (rating, band) = at(
                "rate",
                difficulty::rate_difficulty(
                    dataset.get(id).unwrap(),
                    &seed_set,
                    &config.elo,
                    provider,
                ),
            )?;
            let s = dataset.get_mut(id).unwrap();
            s.elo = Some(rating);
            s.difficulty = Some(band);
        }
    }

    report.coverage_before = Some(at("gaps", snapshot(&dataset, Axis::Topic, &spec.topic_target))?);
    report.difficulty_before = Some(at(
        "gaps",
        snapshot(&dataset, Axis::Difficulty, &spec.difficulty_target),
    )?);
    report.distractor_entropy_before = metrics::distractor_entropy(&dataset).ok();
    let emp_topic = at("gaps", empirical_distribution(&dataset, Axis::Topic))?;
    let emp_diff = at("gaps", empirical_distribution(&dataset, Axis::Difficulty))?;
    let gaps_topic = at("gaps", gap_vector(&emp_topic, &spec.topic_target))?;
    let gaps_diff = at("gaps", gap_vector(&emp_diff, &spec.difficulty_target))?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let targets = assignment::sample_targets(&gaps_topic, &gaps_diff, &dataset, &mut rng);

    // pilot every (op, target) pair in play, on a forked ledger
    let probe = provider.fork_ledger();
    let ctx = PilotContext {
        provider: &probe,
        domain: &config.domain,
        seed_set: &seed_set,
        elo: config.elo,
    };
    let batch = pilot_batch_ids(&dataset, config.pilot_batch);
    let mut wanted: BTreeSet<(Op, String)> = BTreeSet::new();
    for t in targets.values() {
        if let Some(topic) = &t.topic {
            wanted.insert((Op::R1, topic.clone()));
            wanted.insert((Op::R2, topic.clone()));
        }
        if let Some(band) = t.difficulty {
            for op in [Op::R3, Op::R4, Op::R5] {
                wanted.insert((op, band.as_str().to_string()));
            }
        }
    }
    let mut estimates: Vec<PilotEstimate> = Vec::new();
    for (op, target) in &wanted {
        let e = at(
            "pilot",
            assignment::estimate(*op, target, &batch, &dataset, &spec, &ctx),
        )?;
        if e.flagged {
            report
                .warnings
                .push(format!("pilot ({}, {target}) failed on the whole batch", op.as_str()));
        }
        estimates.push(e);
    }
    report.executed = Some(ExecutionSummary {
        probe_tokens: probe.ledger().usage().total(),
        ..ExecutionSummary::default()
    });

    // capacity, budget, instance, plan
    let unbounded = at(
        "assign",
        assignment::build_instance(&dataset, &targets, &estimates, 1e15),
    )?;
    let cap = capacity(&unbounded);
    let budget = match (config.budget.tokens, config.budget.fraction) {
        (Some(t), None) => t,
        (None, Some(f)) => f * cap,
        _ => unreachable!("validated"),
    };
    let instance = AssignmentInstance {
        samples: unbounded.samples,
        budget,
    };
    let plan = at("assign", solve_plan(&instance, config.strategy, &mut rng))?;
    report.plan = Some(summarize_plan(&plan, budget, cap, delta_max(&instance)));

    // execute
    let exec_ctx = ExecutionContext {
        provider,
        domain: &config.domain,
        seed_set: &seed_set,
        elo: config.elo,
        spec: &spec,
    };
    let (mut exec, audit, warnings) =
        at("execute", execute_plan(&mut dataset, &plan, budget, &exec_ctx))?;
    exec.probe_tokens = report.executed.as_ref().map(|e| e.probe_tokens).unwrap_or(0);
    report.audit.extend(audit);
    report.warnings.extend(warnings);

    // validate and apply corrections
    if config.validation.mode != ValidationMode::Off {
        let retriever = match &config.validation.passages {
            Some(path) => at("validate", FixtureRetriever::load(path))?,
            None => FixtureRetriever::default(),
        };
        let remaining = match config.validation.mode {
            ValidationMode::InBudget => Some(budget - exec.spent_tokens as f64),
            _ => None,
        };
        let before = provider.ledger().usage().total();
        let (results, warnings) = at(
            "validate",
            validate_dataset(&dataset, provider, &retriever, &Sandbox::default(), remaining),
        )?;
        report.warnings.extend(warnings);
        let correction = at("validate", validator::apply_corrections(&mut dataset, &results))?;
        for r in &results {
            if r.verdict == validator::Verdict::Corrected {
                report.audit.push(AuditEvent {
                    sample_id: r.sample_id.clone(),
                    action: "corrected".to_string(),
                    detail: r.evidence.clone(),
                });
            }
        }
        if config.validation.mode == ValidationMode::InBudget {
            exec.spent_tokens += provider.ledger().usage().total() - before;
        }
        report.validation = Some(correction);
    }
    report.executed = Some(exec);

    // final metrics and atomic save
    let refined = dataset.compact();
    report.samples_after = refined.len();
    report.coverage_after = Some(at(
        "report",
        snapshot(&refined, Axis::Topic, &spec.topic_target),
    )?);
    report.difficulty_after = Some(at(
        "report",
        snapshot(&refined, Axis::Difficulty, &spec.difficulty_target),
    )?);
    report.distractor_entropy_after = metrics::distractor_entropy(&refined).ok();
    let dataset_path = out_dir.join("refined.jsonl");
    at("save", save_dataset(&refined, &dataset_path))?;
    Ok(dataset_path)
}

/// Deterministic pilot batch: evenly spaced ids from the sorted id list.
fn pilot_batch_ids(dataset: &Dataset, batch: usize) -> Vec<String> {
    let mut ids: Vec<String> = dataset.live().map(|s| s.id.clone()).collect();
    ids.sort_unstable();
    if ids.len() <= batch {
        return ids;
    }
    let stride = ids.len() as f64 / batch as f64;
    (0..batch)
        .map(|i| ids[(i as f64 * stride) as usize].clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::Choice;
    use crate::synth::{synth_dataset, synth_taxonomy, SynthSpec};

    const CONFIG: &str = r#"
        dataset = "data.jsonl"
        domain = "math"
        seed = 7

        [[taxonomy]]
        id = "alg"
        name = "algebra"

        [[taxonomy]]
        id = "geo"
        name = "geometry"

        [targets]
        topic = { alg = 0.5, geo = 0.5 }

        [budget]
        fraction = 1.0
    "#;

    #[test]
    fn config_parses_with_defaults() {
        let c = RunConfig::from_toml_str(CONFIG).unwrap();
        assert_eq!(c.strategy, Strategy::Refinelab);
        assert_eq!(c.pilot_batch, 8);
        assert_eq!(c.provider.mode, ProviderMode::Mock);
        assert_eq!(c.validation.mode, ValidationMode::On);
        let spec = c.targets.to_spec().unwrap();
        assert_eq!(spec.difficulty_target.weight("hard"), 0.6);
        assert_eq!(spec.difficulty_target.weight("medium"), 0.4);
        assert_eq!(spec.difficulty_target.weight("easy"), 0.0);
    }

    #[test]
    fn config_rejects_bad_budgets() {
        let both = CONFIG.replace("fraction = 1.0", "fraction = 1.0\ntokens = 5.0");
        assert!(matches!(
            RunConfig::from_toml_str(&both),
            Err(Error::Config(_))
        ));
        let odd = CONFIG.replace("fraction = 1.0", "fraction = 0.3");
        assert!(matches!(
            RunConfig::from_toml_str(&odd),
            Err(Error::Config(_))
        ));
        let none = CONFIG.replace("fraction = 1.0", "");
        assert!(matches!(
            RunConfig::from_toml_str(&none),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn config_requires_seed() {
        let no_seed = CONFIG.replace("seed = 7", "");
        assert!(RunConfig::from_toml_str(&no_seed).is_err());
    }

    fn choice(op: Op, target: &str, delta: f64, cost: f64) -> Choice {
        Choice {
            op,
            target: target.to_string(),
            delta,
            cost,
        }
    }

    #[test]
    fn capacity_sums_best_choice_costs() {
        let instance = AssignmentInstance {
            samples: vec![
                crate::assignment::SampleChoices {
                    sample_id: "a".into(),
                    choices: vec![
                        choice(Op::R1, "x", 0.5, 1.0),
                        choice(Op::R2, "x", 0.9, 100.0),
                    ],
                },
                crate::assignment::SampleChoices {
                    sample_id: "b".into(),
                    choices: vec![choice(Op::R1, "x", 0.2, 1.0)],
                },
                crate::assignment::SampleChoices {
                    sample_id: "c".into(),
                    choices: vec![choice(Op::R5, "hard", -0.1, 50.0)],
                },
            ],
            budget: 0.0,
        };
        // best ops: r2 on a (100), r1 on b (1); c has no positive gain
        assert_eq!(capacity(&instance), 101.0);
        assert_eq!(delta_max(&instance), 0.9);
    }

    #[test]
    fn default_solver_never_loses_to_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for case in 0..200 {
            let instance = random_instance(case);
            let greedy = assignment::baseline_greedy(&instance).unwrap();
            let plan = solve_plan(&instance, Strategy::Refinelab, &mut rng).unwrap();
            assert!(
                plan.objective >= greedy.objective - 1e-12,
                "case {case}: {} < {}",
                plan.objective,
                greedy.objective
            );
            assert!(plan.spent <= instance.budget + 1e-9);
        }
    }

    fn random_instance(seed: u64) -> AssignmentInstance {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 77 + 5);
        let n = rng.gen_range(1..7);
        let samples = (0..n)
            .map(|i| crate::assignment::SampleChoices {
                sample_id: format!("s{i}"),
                choices: (0..rng.gen_range(1..4))
                    .map(|k| {
                        choice(
                            crate::assignment::OPS[k],
                            "t",
                            rng.gen_range(-0.2..1.0),
                            rng.gen_range(0.5..20.0),
                        )
                    })
                    .collect(),
            })
            .collect();
        AssignmentInstance {
            samples,
            budget: ChaCha8Rng::seed_from_u64(seed).gen_range(0.0..40.0),
        }
    }


    #[test]
    fn removal_cascade_stops_at_quota_consistent_subset() {
        let tax = synth_taxonomy(&["A", "B"], None).unwrap();
        let samples: Vec<QASample> = (0..10)
            .map(|i| QASample {
                id: format!("s{i}"),
                question: format!("question {i} stem"),
                choices: vec!["w".into(), "x".into(), "y".into()],
                answer_index: 0,
                correct_choice: "w".into(),
                topic: Some(if i < 8 { "A".into() } else { "B".into() }),
                difficulty: Some(Band::Medium),
                elo: Some(1000.0),
                provenance: crate::data::Provenance::Original,
                distractor_types: None,
            })
            .collect();
        let mut dataset = Dataset::new(samples, tax).unwrap();
        let spec = TargetSpec {
            topic_target: Distribution::new(
                Axis::Topic,
                [("A".to_string(), 0.5), ("B".to_string(), 0.5)]
                    .into_iter()
                    .collect(),
            )
            .unwrap(),
            difficulty_target: Distribution::new(
                Axis::Difficulty,
                [("medium".to_string(), 1.0)].into_iter().collect(),
            )
            .unwrap(),
            min_dataset_size: None,
        };
        let provider = Provider::new(Box::new(MockProvider::new(1)));
        let seeds = builtin_seed_set("math", &EloConfig::default());
        let ctx = ExecutionContext {
            provider: &provider,
            domain: "math",
            seed_set: &seeds,
            elo: EloConfig::default(),
            spec: &spec,
        };
        let plan = Plan {
            selections: vec![Selection {
                sample_id: "s0".into(),
                op: Op::R1,
                target: "B".into(),
                delta: 0.01,
                cost: 1.0,
            }],
            objective: 0.01,
            spent: 1.0,
            solver: "test".into(),
            lp_bound: None,
        };
        let (summary, _, _) = execute_plan(&mut dataset, &plan, 0.0, &ctx).unwrap();
        // 8 A / 2 B against a 50/50 target: the cascade trims A until
        // its overage is below one whole sample, at 3 A / 2 B
        assert_eq!(summary.removals, 5);
        assert_eq!(dataset.len(), 5);
        let (topics, _) = axis_count_maps(&dataset);
        assert_eq!(topics["A"], 3);
        assert_eq!(topics["B"], 2);
        assert_eq!(summary.spent_tokens, 0);
    }

    fn small_run_config(dir: &Path, strategy: &str, seed: u64) -> RunConfig {
        let spec = SynthSpec {
            n: 60,
            topics: vec![
                ("alg".into(), 0.8),
                ("geo".into(), 0.2),
                ("num".into(), 0.0),
            ],
            bands: vec![(Band::Easy, 0.4), (Band::Medium, 0.4), (Band::Hard, 0.2)],
            unlabeled: 5,
            planted_errors: 0,
            seed: 11,
        };
        let tax = synth_taxonomy(&["alg", "geo", "num"], Some("retrieval")).unwrap();
        let (ds, _) = synth_dataset(&spec, tax.clone()).unwrap();
        let data_path = dir.join("data.jsonl");
        save_dataset(&ds, &data_path).unwrap();
        RunConfig {
            dataset: data_path,
            domain: "math".into(),
            seed,
            strategy: strategy.parse().unwrap(),
            pilot_batch: 4,
            taxonomy: tax.topics.clone(),
            targets: TargetsConfig {
                topic: [
                    ("alg".to_string(), 0.3),
                    ("geo".to_string(), 0.3),
                    ("num".to_string(), 0.4),
                ]
                .into_iter()
                .collect(),
                difficulty: None,
                min_dataset_size: None,
            },
            budget: BudgetConfig {
                tokens: None,
                fraction: Some(1.0),
            },
            provider: ProviderConfig::default(),
            elo: EloConfig::default(),
            validation: ValidationConfig {
                mode: ValidationMode::Off,
                passages: None,
            },
        }
    }

    #[test]
    fn end_to_end_run_improves_both_axes() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_run_config(dir.path(), "refinelab", 7);
        let out = run(&config, &dir.path().join("out")).unwrap();
        let r = &out.report;
        assert_eq!(r.failure, None, "warnings: {:?}", r.warnings);
        assert!(out.dataset_path.is_some());
        let before_cov = r.coverage_before.as_ref().unwrap().divergence;
        let after_cov = r.coverage_after.as_ref().unwrap().divergence;
        let before_diff = r.difficulty_before.as_ref().unwrap().divergence;
        let after_diff = r.difficulty_after.as_ref().unwrap().divergence;
        assert!(after_cov < before_cov, "coverage {before_cov} -> {after_cov}");
        assert!(after_diff < before_diff, "difficulty {before_diff} -> {after_diff}");
        assert!(after_cov < 0.05, "coverage divergence {after_cov}");
        assert!(after_diff < 0.05, "difficulty divergence {after_diff}");
        let exec = r.executed.as_ref().unwrap();
        assert!(exec.spent_tokens as f64 <= r.plan.as_ref().unwrap().budget + 1e-6);
        // the refined dataset on disk round-trips
        let (reloaded, _) = load_dataset(
            out.dataset_path.as_ref().unwrap(),
            config.taxonomy().unwrap(),
        )
        .unwrap();
        assert_eq!(reloaded.len(), r.samples_after);
    }

    #[test]
    fn identical_seeds_reproduce_outputs_byte_for_byte() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_run_config(dir.path(), "refinelab", 21);
        let out_a = run(&config, &dir.path().join("a")).unwrap();
        let out_b = run(&config, &dir.path().join("b")).unwrap();
        let bytes = |p: &Path| std::fs::read(p).unwrap();
        assert_eq!(
            bytes(&out_a.report_path),
            bytes(&out_b.report_path),
            "reports differ"
        );
        assert_eq!(
            bytes(out_a.dataset_path.as_ref().unwrap()),
            bytes(out_b.dataset_path.as_ref().unwrap()),
            "datasets differ"
        );
    }

    #[test]
    fn zero_budget_changes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = small_run_config(dir.path(), "refinelab", 7);
        config.budget = BudgetConfig {
            tokens: Some(0.0),
            fraction: None,
        };
        let out = run(&config, &dir.path().join("out")).unwrap();
        let r = &out.report;
        assert_eq!(r.failure, None);
        assert_eq!(r.samples_after, r.samples_before);
        let exec = r.executed.as_ref().unwrap();
        assert_eq!(exec.removals + exec.additions + exec.rewrites, 0);
        assert_eq!(exec.spent_tokens, 0);
    }

    #[test]
    fn missing_dataset_yields_partial_report() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = small_run_config(dir.path(), "refinelab", 7);
        config.dataset = dir.path().join("absent.jsonl");
        let out = run(&config, &dir.path().join("out")).unwrap();
        assert!(out.dataset_path.is_none());
        let failure = out.report.failure.as_deref().unwrap();
        assert!(failure.starts_with("load:"), "{failure}");
        assert!(out.report_path.exists());
    }

    fn fixed_report() -> RefinementReport {
        RefinementReport {
            seed: 7,
            strategy: "refinelab".into(),
            domain: "math".into(),
            samples_before: 300,
            samples_after: 300,
            coverage_before: Some(AxisSnapshot {
                weights: [("alg".to_string(), 0.8), ("geo".to_string(), 0.2)]
                    .into_iter()
                    .collect(),
                divergence: 0.31128,
            }),
            coverage_after: Some(AxisSnapshot {
                weights: [("alg".to_string(), 0.5), ("geo".to_string(), 0.5)]
                    .into_iter()
                    .collect(),
                divergence: 0.0031,
            }),
            difficulty_before: Some(AxisSnapshot {
                weights: [("easy".to_string(), 1.0)].into_iter().collect(),
                divergence: 0.1521,
            }),
            difficulty_after: Some(AxisSnapshot {
                weights: [("hard".to_string(), 1.0)].into_iter().collect(),
                divergence: 0.0099,
            }),
            distractor_entropy_before: None,
            distractor_entropy_after: Some(1.5),
            plan: Some(PlanSummary {
                solver: "refinelab".into(),
                objective: 0.123456,
                planned_spend: 1234.0,
                budget: 2000.0,
                capacity: 2000.0,
                delta_max: 0.01,
                lp_bound: Some(0.1235),
                op_counts: [("r1".to_string(), 100), ("r2".to_string(), 50)]
                    .into_iter()
                    .collect(),
            }),
            executed: Some(ExecutionSummary {
                removals: 100,
                additions: 50,
                rewrites: 0,
                discarded: 2,
                target_size: 250,
                spent_tokens: 123456,
                probe_tokens: 2345,
            }),
            validation: Some(CorrectionReport {
                passed: 280,
                corrected: 20,
                failed: 0,
                inconclusive: 0,
                rejected: Vec::new(),
                correction_ratio: Some(1.0),
            }),
            warnings: Vec::new(),
            audit: Vec::new(),
            failure: None,
        }
    }

    #[test]
    fn report_json_round_trips() {
        let r = fixed_report();
        let parsed: RefinementReport = serde_json::from_str(&report_json(&r)).unwrap();
        assert_eq!(parsed, r);
    }

    #[test]
    fn rendered_report_matches_golden_file() {
        let golden = include_str!("../tests/golden/report.txt");
        assert_eq!(render_report(&fixed_report()), golden);
    }
}
