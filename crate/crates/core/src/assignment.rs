//! Assignment Engine: per-sample target sampling, pilot-batch gain and
//! cost estimation, and budgeted operation selection. The selection
//! problem is a 0/1 knapsack with at-most-one-operation-per-sample
//! exclusivity (a multiple-choice knapsack), solved exactly on small
//! instances and by LP relaxation plus rounding otherwise.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coverage;
use crate::data::{
    empirical_distribution, Axis, Band, Dataset, Distribution, QASample, TargetSpec,
};
use crate::difficulty::{self, EloConfig, SeedExemplar};
use crate::error::{Error, Result};
use crate::metrics::jsd;
use crate::provider::Provider;

/// Variable-count ceiling for the exact branch-and-bound solver.
pub const EXACT_SOLVER_CAP: usize = 24;

/// Pilot batch size per (operation, target) pair.
pub const PILOT_BATCH_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    /// r1: drop a sample from an overrepresented topic
    R1,
    /// r2: expand toward an underrepresented topic
    R2,
    /// r3: drop a sample from an overrepresented band
    R3,
    /// r4: generate a fresh sample at a target band
    R4,
    /// r5: rewrite distractors toward a target band
    R5,
}

pub const OPS: [Op; 5] = [Op::R1, Op::R2, Op::R3, Op::R4, Op::R5];

impl Op {
    pub fn as_str(self) -> &'static str {
        match self {
            Op::R1 => "r1",
            Op::R2 => "r2",
            Op::R3 => "r3",
            Op::R4 => "r4",
            Op::R5 => "r5",
        }
    }

    /// The distribution this operation moves.
    pub fn axis(self) -> Axis {
        match self {
            Op::R1 | Op::R2 => Axis::Topic,
            Op::R3 | Op::R4 | Op::R5 => Axis::Difficulty,
        }
    }
}

/// Per-sample refinement targets drawn from the gap mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTarget {
    pub topic: Option<String>,
    pub difficulty: Option<Band>,
}

fn draw_weighted<R: Rng>(gaps: &BTreeMap<String, f64>, rng: &mut R) -> Option<String> {
    let total: f64 = gaps.values().filter(|g| **g > 0.0).sum();
    if total <= 0.0 {
        return None;
    }
    let mut ticket = rng.gen::<f64>() * total;
    for (cat, gap) in gaps {
        if *gap <= 0.0 {
            continue;
        }
        if ticket < *gap {
            return Some(cat.clone());
        }
        ticket -= gap;
    }
    gaps.iter()
        .filter(|(_, g)| **g > 0.0)
        .map(|(c, _)| c.clone())
        .next_back()
}

/// Draws a (topic, band) target per sample, with each underrepresented
/// bin chosen with probability proportional to its gap. An axis with no
/// positive gap yields no target on that axis.
pub fn sample_targets<R: Rng>(
    gaps_topic: &BTreeMap<String, f64>,
    gaps_diff: &BTreeMap<String, f64>,
    dataset: &Dataset,
    rng: &mut R,
) -> BTreeMap<String, SampleTarget> {
    let mut ids: Vec<&str> = dataset.live().map(|s| s.id.as_str()).collect();
    ids.sort_unstable();
    let mut out = BTreeMap::new();
    for id in ids {
        let topic = draw_weighted(gaps_topic, rng);
        let difficulty = draw_weighted(gaps_diff, rng).and_then(|b| Band::parse(&b));
        out.insert(id.to_string(), SampleTarget { topic, difficulty });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotEstimate {
    pub op: Op,
    pub target: String,
    pub batch_ids: Vec<String>,
    pub mean_gain: f64,
    pub mean_cost: f64,
    pub batch_size: usize,
    /// set when the operator failed on the whole batch
    pub flagged: bool,
}

impl PilotEstimate {
    pub fn from_observations(
        op: Op,
        target: &str,
        batch_ids: Vec<String>,
        gains: &[f64],
        costs: &[f64],
        flagged: bool,
    ) -> Result<PilotEstimate> {
        if gains.is_empty() || gains.len() != costs.len() {
            return Err(Error::Argument("pilot batch must be nonempty".into()));
        }
        let n = gains.len() as f64;
        Ok(PilotEstimate {
            op,
            target: target.to_string(),
            batch_size: gains.len(),
            batch_ids,
            mean_gain: gains.iter().sum::<f64>() / n,
            // token cost of an operation is never zero in practice;
            // free ops (pure removals) get a nominal 1-token cost so
            // densities stay finite
            mean_cost: (costs.iter().sum::<f64>() / n).max(1.0),
            flagged,
        })
    }

    pub fn key(&self) -> (Op, String) {
        (self.op, self.target.clone())
    }
}

/// Everything estimation needs besides the batch itself. The provider
/// here should be a probe fork: its spend does not count against B.
pub struct PilotContext<'a> {
    pub provider: &'a Provider,
    pub domain: &'a str,
    pub seed_set: &'a [SeedExemplar],
    pub elo: EloConfig,
}

fn axis_counts(dataset: &Dataset, axis: Axis) -> Result<BTreeMap<String, f64>> {
    let emp = empirical_distribution(dataset, axis)?;
    let n = dataset.len() as f64;
    Ok(emp
        .weights
        .into_iter()
        .map(|(k, w)| (k, w * n))
        .collect())
}

fn dist_from_counts(axis: Axis, counts: &BTreeMap<String, f64>) -> Result<Distribution> {
    let total: f64 = counts.values().sum();
    if total <= 0.0 {
        return Err(Error::EmptyDataset);
    }
    Distribution::new(
        axis,
        counts.iter().map(|(k, c)| (k.clone(), c / total)).collect(),
    )
}

fn sample_bin(sample: &QASample, axis: Axis) -> Result<String> {
    Ok(match axis {
        Axis::Topic => sample.topic_bin().to_string(),
        Axis::Difficulty => sample
            .difficulty
            .ok_or_else(|| Error::Argument(format!("sample `{}` is unrated", sample.id)))?
            .as_str()
            .to_string(),
    })
}

/// Dry-runs the operation on each batch member and measures the mean
/// per-sample reduction in the axis JSD plus the mean token cost. Pilot
/// outputs are discarded; only the estimate survives.
pub fn estimate(
    op: Op,
    target: &str,
    batch: &[String],
    dataset: &Dataset,
    spec: &TargetSpec,
    ctx: &PilotContext,
) -> Result<PilotEstimate> {
    if batch.is_empty() {
        return Err(Error::Argument("pilot batch must be nonempty".into()));
    }
    let axis = op.axis();
    let axis_target = match axis {
        Axis::Topic => &spec.topic_target,
        Axis::Difficulty => &spec.difficulty_target,
    };
    let counts = axis_counts(dataset, axis)?;
    let before = jsd(&dist_from_counts(axis, &counts)?, axis_target)?;
    let mut gains = Vec::with_capacity(batch.len());
    let mut costs = Vec::with_capacity(batch.len());
    let mut failures = 0usize;
    for id in batch {
        let member = dataset
            .get(id)
            .ok_or_else(|| Error::Argument(format!("unknown pilot sample `{id}`")))?;
        let spent_before = ctx.provider.ledger().usage().total();
        // run the operator for real (cost), simulate its effect (gain)
        let mut after_counts = counts.clone();
        let succeeded = match op {
            Op::R1 | Op::R3 => {
                let bin = sample_bin(member, axis)?;
                *after_counts.get_mut(&bin).unwrap() -= 1.0;
                true
            }
            Op::R2 => match coverage::expand(member, target, 1, ctx.domain, ctx.provider) {
                // rate the candidate so the probe cost matches what the
                // executor will pay (every accepted expansion is rated)
                Ok((cands, _, _)) => match difficulty::rate_difficulty(
                    &cands[0].sample,
                    ctx.seed_set,
                    &ctx.elo,
                    ctx.provider,
                ) {
                    Ok(_) => {
                        *after_counts.entry(target.to_string()).or_insert(0.0) += 1.0;
                        true
                    }
                    Err(Error::RatingFailed(_)) => false,
                    Err(e) => return Err(e),
                },
                Err(Error::ExpansionFailed(_)) => false,
                Err(e) => return Err(e),
            },
            Op::R4 => {
                let band = Band::parse(target)
                    .ok_or_else(|| Error::Argument(format!("bad band `{target}`")))?;
                let topic = member.topic_bin().to_string();
                match difficulty::generate_at_difficulty(
                    ctx.domain,
                    &topic,
                    band,
                    Some(member),
                    format!("probe-{}-{}", op.as_str(), id),
                    ctx.seed_set,
                    &ctx.elo,
                    ctx.provider,
                ) {
                    Ok(out) if out.retained => {
                        *after_counts.entry(target.to_string()).or_insert(0.0) += 1.0;
                        true
                    }
                    Ok(_) => false,
                    Err(Error::GenerationFailed(_)) | Err(Error::RatingFailed(_)) => false,
                    Err(e) => return Err(e),
                }
            }
            Op::R5 => {
                let band = Band::parse(target)
                    .ok_or_else(|| Error::Argument(format!("bad band `{target}`")))?;
                match difficulty::rewrite_distractors(member, band, 3, ctx.provider) {
                    Ok(out) => {
                        match difficulty::rate_difficulty(
                            &out.sample,
                            ctx.seed_set,
                            &ctx.elo,
                            ctx.provider,
                        ) {
                            Ok((_, new_band)) => {
                                let old = sample_bin(member, axis)?;
                                *after_counts.get_mut(&old).unwrap() -= 1.0;
                                *after_counts
                                    .entry(new_band.as_str().to_string())
                                    .or_insert(0.0) += 1.0;
                                true
                            }
                            Err(Error::RatingFailed(_)) => false,
                            Err(e) => return Err(e),
                        }
                    }
                    Err(Error::Argument(_)) | Err(Error::MiningFailed(_))
                    | Err(Error::Format { .. }) => false,
                    Err(e) => return Err(e),
                }
            }
        };
        costs.push((ctx.provider.ledger().usage().total() - spent_before) as f64);
        if succeeded {
            let after = jsd(&dist_from_counts(axis, &after_counts)?, axis_target)?;
            gains.push(before - after);
        } else {
            failures += 1;
            gains.push(0.0);
        }
    }
    PilotEstimate::from_observations(
        op,
        target,
        batch.to_vec(),
        &gains,
        &costs,
        failures == batch.len(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Choice {
    pub op: Op,
    pub target: String,
    pub delta: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleChoices {
    pub sample_id: String,
    pub choices: Vec<Choice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentInstance {
    pub samples: Vec<SampleChoices>,
    pub budget: f64,
}

impl AssignmentInstance {
    pub fn var_count(&self) -> usize {
        self.samples.iter().map(|s| s.choices.len()).sum()
    }
}

/// Fills the instance from the per-sample targets and the pilot table:
/// delta and cost of (i, k) are those of (k, z_i). Inadmissible pairs
/// are simply absent.
pub fn build_instance(
    dataset: &Dataset,
    targets: &BTreeMap<String, SampleTarget>,
    estimates: &[PilotEstimate],
    budget: f64,
) -> Result<AssignmentInstance> {
    if budget < 0.0 || !budget.is_finite() {
        return Err(Error::Config(format!("budget {budget} must be >= 0")));
    }
    let table: BTreeMap<(Op, String), &PilotEstimate> =
        estimates.iter().map(|e| (e.key(), e)).collect();
    let lookup = |op: Op, z: &str| -> Result<&PilotEstimate> {
        table
            .get(&(op, z.to_string()))
            .copied()
            .ok_or_else(|| Error::Config(format!("no pilot estimate for ({}, {z})", op.as_str())))
    };
    let mut samples = Vec::new();
    let mut ids: Vec<&QASample> = dataset.live().collect();
    ids.sort_by(|a, b| a.id.cmp(&b.id));
    for sample in ids {
        let Some(target) = targets.get(&sample.id) else {
            continue;
        };
        let mut choices = Vec::new();
        if let Some(topic) = &target.topic {
            for op in [Op::R1, Op::R2] {
                let e = lookup(op, topic)?;
                choices.push(Choice {
                    op,
                    target: topic.clone(),
                    delta: e.mean_gain,
                    cost: e.mean_cost,
                });
            }
        }
        if let Some(band) = target.difficulty {
            let mut ops = vec![Op::R3, Op::R4];
            if sample.distractors().len() >= 2 {
                ops.push(Op::R5);
            }
            for op in ops {
                let e = lookup(op, band.as_str())?;
                choices.push(Choice {
                    op,
                    target: band.as_str().to_string(),
                    delta: e.mean_gain,
                    cost: e.mean_cost,
                });
            }
        }
        samples.push(SampleChoices {
            sample_id: sample.id.clone(),
            choices,
        });
    }
    Ok(AssignmentInstance { samples, budget })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub sample_id: String,
    pub op: Op,
    pub target: String,
    pub delta: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub selections: Vec<Selection>,
    pub objective: f64,
    pub spent: f64,
    pub solver: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lp_bound: Option<f64>,
}

impl Plan {
    /// Builds a plan from (sample index, choice index) picks, asserting
    /// budget and exclusivity.
    fn from_picks(
        instance: &AssignmentInstance,
        picks: &BTreeMap<usize, usize>,
        solver: &str,
        lp_bound: Option<f64>,
    ) -> Result<Plan> {
        let mut selections = Vec::new();
        let mut objective = 0.0;
        let mut spent = 0.0;
        for (&si, &ci) in picks {
            let s = &instance.samples[si];
            let c = &s.choices[ci];
            selections.push(Selection {
                sample_id: s.sample_id.clone(),
                op: c.op,
                target: c.target.clone(),
                delta: c.delta,
                cost: c.cost,
            });
            objective += c.delta;
            spent += c.cost;
        }
        if spent > instance.budget + 1e-9 {
            return Err(Error::Config(format!(
                "plan spends {spent} over budget {}",
                instance.budget
            )));
        }
        Ok(Plan {
            selections,
            objective,
            spent,
            solver: solver.to_string(),
            lp_bound,
        })
    }

    pub fn empty(solver: &str) -> Plan {
        Plan {
            selections: Vec::new(),
            objective: 0.0,
            spent: 0.0,
            solver: solver.to_string(),
            lp_bound: None,
        }
    }
}

/// Exact optimum by depth-first branch and bound. Refuses instances
/// above the variable cap. Among equal optima it returns the
/// lexicographically smallest decision vector in (sample, choice)
/// order.
pub fn solve_exact(instance: &AssignmentInstance) -> Result<Plan> {
    let vars = instance.var_count();
    if vars > EXACT_SOLVER_CAP {
        return Err(Error::SolverCapExceeded {
            vars,
            cap: EXACT_SOLVER_CAP,
        });
    }
    let n = instance.samples.len();
    // optimistic tail bound: sum of best positive gains per sample
    let mut suffix_best = vec![0.0f64; n + 1];
    for i in (0..n).rev() {
        let best = instance.samples[i]
            .choices
            .iter()
            .map(|c| c.delta)
            .fold(0.0f64, f64::max);
        suffix_best[i] = suffix_best[i + 1] + best;
    }
    struct Dfs<'a> {
        instance: &'a AssignmentInstance,
        suffix_best: Vec<f64>,
        best_value: f64,
        best_picks: BTreeMap<usize, usize>,
        current: BTreeMap<usize, usize>,
    }
    impl Dfs<'_> {
        fn go(&mut self, i: usize, value: f64, spent: f64) {
            if i == self.instance.samples.len() {
                if value > self.best_value {
                    self.best_value = value;
                    self.best_picks = self.current.clone();
                }
                return;
            }
            // only strict improvements replace the incumbent, so a
            // branch whose optimistic bound ties can be cut
            if value + self.suffix_best[i] <= self.best_value {
                return;
            }
            // skip first, then choices from the last index down: with 0
            // tried before 1 at every variable this enumerates decision
            // vectors in lexicographic order
            self.go(i + 1, value, spent);
            let k = self.instance.samples[i].choices.len();
            for ci in (0..k).rev() {
                let c = &self.instance.samples[i].choices[ci];
                if c.delta <= 0.0 || spent + c.cost > self.instance.budget + 1e-9 {
                    continue;
                }
                self.current.insert(i, ci);
                self.go(i + 1, value + c.delta, spent + c.cost);
                self.current.remove(&i);
            }
        }
    }
    let mut dfs = Dfs {
        instance,
        suffix_best,
        best_value: 0.0,
        best_picks: BTreeMap::new(),
        current: BTreeMap::new(),
    };
    dfs.go(0, 0.0, 0.0);
    Plan::from_picks(instance, &dfs.best_picks, "exact", None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionalIncrement {
    pub sample: usize,
    /// level held before the fractional upgrade, as a choice index
    pub from: Option<usize>,
    pub to: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionalSolution {
    /// fully selected choice per sample index
    pub levels: BTreeMap<usize, usize>,
    pub fractional: Option<FractionalIncrement>,
    /// LP objective; upper-bounds every integral plan
    pub bound: f64,
    pub spent: f64,
}

/// LP relaxation of the multiple-choice knapsack by incremental
/// efficiency: within each sample only choices on the convex
/// gain-versus-cost frontier survive, their increments are taken in
/// density order, and at most one increment ends up fractional.
pub fn solve_lp_greedy(instance: &AssignmentInstance) -> FractionalSolution {
    struct Inc {
        sample: usize,
        from: Option<usize>,
        to: usize,
        dc: f64,
        dd: f64,
    }
    let mut increments: Vec<Inc> = Vec::new();
    for (si, s) in instance.samples.iter().enumerate() {
        // candidate points sorted by cost, dominated points dropped
        let mut idx: Vec<usize> = (0..s.choices.len())
            .filter(|&i| s.choices[i].delta > 0.0)
            .collect();
        idx.sort_by(|&a, &b| {
            s.choices[a]
                .cost
                .partial_cmp(&s.choices[b].cost)
                .unwrap()
                .then(
                    s.choices[b]
                        .delta
                        .partial_cmp(&s.choices[a].delta)
                        .unwrap(),
                )
        });
        let mut frontier: Vec<usize> = Vec::new();
        for i in idx {
            if let Some(&last) = frontier.last() {
                if s.choices[i].delta <= s.choices[last].delta {
                    continue; // dominated: costlier, no more gain
                }
            }
            // keep increment densities strictly decreasing
            while !frontier.is_empty() {
                let last = *frontier.last().unwrap();
                let (pc, pd) = match frontier.len() {
                    1 => (0.0, 0.0),
                    _ => {
                        let p = frontier[frontier.len() - 2];
                        (s.choices[p].cost, s.choices[p].delta)
                    }
                };
                let last_density =
                    (s.choices[last].delta - pd) / (s.choices[last].cost - pc).max(f64::MIN_POSITIVE);
                let new_density = (s.choices[i].delta - s.choices[last].delta)
                    / (s.choices[i].cost - s.choices[last].cost).max(f64::MIN_POSITIVE);
                if new_density >= last_density {
                    frontier.pop();
                } else {
                    break;
                }
            }
            frontier.push(i);
        }
        let mut prev: Option<usize> = None;
        for &i in &frontier {
            let (pc, pd) = prev
                .map(|p| (s.choices[p].cost, s.choices[p].delta))
                .unwrap_or((0.0, 0.0));
            increments.push(Inc {
                sample: si,
                from: prev,
                to: i,
                dc: s.choices[i].cost - pc,
                dd: s.choices[i].delta - pd,
            });
            prev = Some(i);
        }
    }
    increments.sort_by(|a, b| {
        let da = a.dd / a.dc.max(f64::MIN_POSITIVE);
        let db = b.dd / b.dc.max(f64::MIN_POSITIVE);
        db.partial_cmp(&da)
            .unwrap()
            .then(a.sample.cmp(&b.sample))
            .then(a.to.cmp(&b.to))
    });
    let mut levels: BTreeMap<usize, usize> = BTreeMap::new();
    let mut fractional = None;
    let mut remaining = instance.budget;
    let mut bound = 0.0;
    let mut spent = 0.0;
    for inc in increments {
        // increments of one sample appear in frontier order; an upgrade
        // only applies on top of its prerequisite level
        if levels.get(&inc.sample).copied() != inc.from {
            continue;
        }
        if inc.dc <= remaining {
            remaining -= inc.dc;
            spent += inc.dc;
            bound += inc.dd;
            levels.insert(inc.sample, inc.to);
        } else {
            if remaining > 0.0 {
                let fraction = remaining / inc.dc;
                bound += fraction * inc.dd;
                spent += remaining;
                fractional = Some(FractionalIncrement {
                    sample: inc.sample,
                    from: inc.from,
                    to: inc.to,
                    fraction,
                });
            }
            break;
        }
    }
    FractionalSolution {
        levels,
        fractional,
        bound,
        spent,
    }
}

/// Drops the fractional increment, keeping all integral selections. The
/// result is feasible and within one maximal single-op gain of the LP
/// bound.
pub fn round(instance: &AssignmentInstance, fractional: &FractionalSolution) -> Result<Plan> {
    Plan::from_picks(
        instance,
        &fractional.levels,
        "lp_greedy",
        Some(fractional.bound),
    )
}

/// Takes the feasible (sample, op) pair with the highest gain density
/// until nothing fits.
pub fn baseline_greedy(instance: &AssignmentInstance) -> Result<Plan> {
    let mut picks: BTreeMap<usize, usize> = BTreeMap::new();
    let mut remaining = instance.budget;
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for (si, s) in instance.samples.iter().enumerate() {
            if picks.contains_key(&si) {
                continue;
            }
            for (ci, c) in s.choices.iter().enumerate() {
                if c.delta <= 0.0 || c.cost > remaining {
                    continue;
                }
                let density = c.delta / c.cost.max(f64::MIN_POSITIVE);
                if best.map(|(_, _, d)| density > d).unwrap_or(true) {
                    best = Some((si, ci, density));
                }
            }
        }
        match best {
            Some((si, ci, _)) => {
                remaining -= instance.samples[si].choices[ci].cost;
                picks.insert(si, ci);
            }
            None => break,
        }
    }
    Plan::from_picks(instance, &picks, "greedy", None)
}

/// Splits the budget evenly across the operations present and fills
/// each share with randomly ordered samples.
pub fn baseline_uniform<R: Rng>(instance: &AssignmentInstance, rng: &mut R) -> Result<Plan> {
    let mut ops: Vec<Op> = Vec::new();
    for s in &instance.samples {
        for c in &s.choices {
            if !ops.contains(&c.op) {
                ops.push(c.op);
            }
        }
    }
    ops.sort_unstable();
    let mut picks: BTreeMap<usize, usize> = BTreeMap::new();
    if ops.is_empty() {
        return Plan::from_picks(instance, &picks, "uniform", None);
    }
    let share = instance.budget / ops.len() as f64;
    for op in ops {
        let mut order: Vec<usize> = (0..instance.samples.len()).collect();
        // Fisher-Yates on the sample order, one op at a time
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut remaining = share;
        for si in order {
            if picks.contains_key(&si) {
                continue;
            }
            let choice = instance.samples[si]
                .choices
                .iter()
                .position(|c| c.op == op && c.cost <= remaining);
            if let Some(ci) = choice {
                remaining -= instance.samples[si].choices[ci].cost;
                picks.insert(si, ci);
            }
        }
    }
    Plan::from_picks(instance, &picks, "uniform", None)
}
