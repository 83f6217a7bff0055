//! Difficulty Calibrator: Elo-based rating plus the difficulty-side
//! operations (removal r3, generation r4, distractor rewriting r5).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::coverage::{self, sample_as_json};
use crate::data::{Band, Distribution, Provenance, QASample};
use crate::error::{Error, Result};
use crate::provider::{cosine, CompletionRequest, Provider, TemplateId, Usage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EloConfig {
    /// step size K
    pub k: f64,
    /// logistic scale
    pub eta: f64,
    /// band boundary: rating < easy_max -> easy
    pub easy_max: f64,
    /// band boundary: rating > hard_min -> hard
    pub hard_min: f64,
    /// pairwise comparisons per rating
    pub rounds: usize,
    pub seed_rating_easy: f64,
    pub seed_rating_medium: f64,
    pub seed_rating_hard: f64,
}

impl Default for EloConfig {
    fn default() -> Self {
        EloConfig {
            k: 64.0,
            eta: 400.0,
            easy_max: 900.0,
            hard_min: 1100.0,
            rounds: 7,
            seed_rating_easy: 800.0,
            seed_rating_medium: 1000.0,
            seed_rating_hard: 1200.0,
        }
    }
}

impl EloConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k <= 0.0 || self.eta <= 0.0 {
            return Err(Error::Config("elo step and scale must be positive".into()));
        }
        if !(self.easy_max < self.hard_min) {
            return Err(Error::Config("band thresholds must be increasing".into()));
        }
        Ok(())
    }

    pub fn band_of(&self, rating: f64) -> Band {
        if rating < self.easy_max {
            Band::Easy
        } else if rating > self.hard_min {
            Band::Hard
        } else {
            Band::Medium
        }
    }

    pub fn seed_rating(&self, band: Band) -> f64 {
        match band {
            Band::Easy => self.seed_rating_easy,
            Band::Medium => self.seed_rating_medium,
            Band::Hard => self.seed_rating_hard,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EloRound {
    pub exemplar_rating: f64,
    pub outcome: f64,
    pub expected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EloState {
    pub rating: f64,
    pub history: Vec<EloRound>,
}

impl EloState {
    pub fn new(initial: f64) -> EloState {
        EloState {
            rating: initial,
            history: Vec::new(),
        }
    }
}

impl Default for EloState {
    fn default() -> Self {
        EloState::new(1000.0)
    }
}

/// A pre-rated anchor item with a fixed rating; never updated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedExemplar {
    pub id: String,
    pub question: String,
    pub band: Band,
    pub rating: f64,
}

/// P(item i beats the exemplar): (1 + 10^((e_ex - e_i)/eta))^-1.
pub fn elo_expected(e_i: f64, e_ex: f64, eta: f64) -> f64 {
    1.0 / (1.0 + 10f64.powf((e_ex - e_i) / eta))
}

/// One rating step: e_i <- e_i + K (r - p).
pub fn elo_update(state: &EloState, e_ex: f64, r: f64, config: &EloConfig) -> Result<EloState> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Argument(format!("outcome {r} outside [0,1]")));
    }
    let p = elo_expected(state.rating, e_ex, config.eta);
    let mut next = state.clone();
    next.rating = state.rating + config.k * (r - p);
    next.history.push(EloRound {
        exemplar_rating: e_ex,
        outcome: r,
        expected: p,
    });
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedMistake {
    pub label: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDistractor {
    pub text: String,
    pub mistake_type: String,
    pub plausibility: f64,
    /// 1 - cosine(candidate, correct); nonnegative, at most 2
    pub distinctiveness: f64,
    pub combined: f64,
}

/// The `m` seeds whose question embeddings are most similar to the
/// sample's; ties broken by seed id.
pub fn select_exemplars<'a>(
    sample: &QASample,
    seed_set: &'a [SeedExemplar],
    m: usize,
    provider: &Provider,
) -> Result<Vec<&'a SeedExemplar>> {
    if seed_set.is_empty() {
        return Err(Error::Config("empty difficulty seed set".into()));
    }
    let target = provider.embed(&sample.question)?;
    let mut scored: Vec<(f64, &SeedExemplar)> = Vec::with_capacity(seed_set.len());
    for seed in seed_set {
        let e = provider.embed(&seed.question)?;
        scored.push((cosine(&target, &e), seed));
    }
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.1.id.cmp(&b.1.id))
    });
    Ok(scored.into_iter().take(m).map(|(_, s)| s).collect())
}

/// Runs the configured number of pairwise judgments against the nearest
/// exemplars, folding the Elo update, and maps the final rating to a
/// band. Unparseable judge rounds are skipped; if every round fails the
/// sample stays unrated.
pub fn rate_difficulty(
    sample: &QASample,
    seed_set: &[SeedExemplar],
    config: &EloConfig,
    provider: &Provider,
) -> Result<(f64, Band)> {
    config.validate()?;
    let exemplars = select_exemplars(sample, seed_set, config.rounds.min(seed_set.len()), provider)?;
    let mut state = EloState::default();
    let mut judged = 0usize;
    for round in 0..config.rounds {
        let ex = exemplars[round % exemplars.len()];
        let mut vars = BTreeMap::new();
        vars.insert("new_question".to_string(), sample.question.clone());
        vars.insert("seed_question".to_string(), ex.question.clone());
        vars.insert("seed_difficulty".to_string(), ex.band.as_str().to_string());
        vars.insert("round".to_string(), round.to_string());
        let req = CompletionRequest::new(TemplateId::Pairwise, vars);
        let r = match provider.complete(&req) {
            Ok(c) => match c.number() {
                Some(r) if (0.0..=1.0).contains(&r) => r,
                _ => continue,
            },
            Err(Error::Format { .. }) => continue,
            Err(e) => return Err(e),
        };
        state = elo_update(&state, ex.rating, r, config)?;
        judged += 1;
    }
    if judged == 0 {
        return Err(Error::RatingFailed(sample.id.clone()));
    }
    Ok((state.rating, config.band_of(state.rating)))
}

#[derive(Debug, Clone)]
pub struct GenerationOutcome {
    pub sample: QASample,
    pub rating: f64,
    pub band: Band,
    pub retained: bool,
}

/// Generates one candidate at the target band (r4), rates it, and
/// retains it only when the rated band matches the target. Discarded
/// candidates still cost what their calls cost.
pub fn generate_at_difficulty(
    domain: &str,
    topic: &str,
    t_diff: Band,
    source: Option<&QASample>,
    id: String,
    seed_set: &[SeedExemplar],
    config: &EloConfig,
    provider: &Provider,
) -> Result<GenerationOutcome> {
    let input_qa = match source {
        Some(s) => sample_as_json(s),
        None => json!({"question": format!("fresh {domain} {topic} item stem")}).to_string(),
    };
    let mut vars = BTreeMap::new();
    vars.insert("domain".to_string(), domain.to_string());
    vars.insert("topic".to_string(), topic.to_string());
    vars.insert("target_difficulty".to_string(), t_diff.as_str().to_string());
    vars.insert("input_qa".to_string(), input_qa);
    vars.insert("fresh_id".to_string(), id.clone());
    let req = CompletionRequest::new(TemplateId::Generation, vars);
    let completion = provider
        .complete(&req)
        .map_err(|_| Error::GenerationFailed(id.clone()))?;
    let value = completion
        .json()
        .cloned()
        .ok_or_else(|| Error::GenerationFailed(id.clone()))?;
    let mut sample = parse_mcq(&value, id.clone(), topic, Provenance::Generated)
        .map_err(|_| Error::GenerationFailed(id))?;
    let (rating, band) = rate_difficulty(&sample, seed_set, config, provider)?;
    sample.elo = Some(rating);
    sample.difficulty = Some(band);
    Ok(GenerationOutcome {
        retained: band == t_diff,
        sample,
        rating,
        band,
    })
}

fn parse_mcq(
    value: &serde_json::Value,
    id: String,
    topic: &str,
    provenance: Provenance,
) -> Result<QASample> {
    let question = value["question"]
        .as_str()
        .ok_or_else(|| Error::Argument("missing question".into()))?
        .to_string();
    let choices: Vec<String> = value["choices"]
        .as_array()
        .ok_or_else(|| Error::Argument("missing choices".into()))?
        .iter()
        .map(|c| c.as_str().unwrap_or_default().to_string())
        .collect();
    let answer_index = value["answer"]
        .as_u64()
        .ok_or_else(|| Error::Argument("missing answer".into()))? as usize;
    let mut sample = QASample {
        id,
        question,
        correct_choice: value["correct_choice"]
            .as_str()
            .unwrap_or_default()
            .to_string(),
        choices,
        answer_index,
        topic: Some(topic.to_string()),
        difficulty: None,
        elo: None,
        provenance,
        distractor_types: None,
    };
    sample.validate()?;
    Ok(sample)
}

/// Mines up to `k` distinct mistake types for the sample's subject.
/// A short return is retried once; still short is accepted with a
/// warning, and an empty result is a mining failure.
pub fn mine_mistake_types(
    sample: &QASample,
    k: usize,
    provider: &Provider,
) -> Result<(Vec<MinedMistake>, Vec<String>)> {
    if k == 0 {
        return Err(Error::Argument("mistake type count must be >= 1".into()));
    }
    let subject = sample.topic.clone().unwrap_or_else(|| "general".to_string());
    let mut warnings = Vec::new();
    let mut mined: Vec<MinedMistake> = Vec::new();
    for attempt in 0..2 {
        let mut vars = BTreeMap::new();
        vars.insert("subject".to_string(), subject.clone());
        vars.insert("question".to_string(), sample.question.clone());
        vars.insert("correct_answer".to_string(), sample.correct_choice.clone());
        vars.insert("num_choices".to_string(), k.to_string());
        vars.insert("attempt".to_string(), attempt.to_string());
        let req = CompletionRequest::new(TemplateId::MistakeMining, vars);
        let parsed = match provider.complete(&req) {
            Ok(c) => c.json().cloned(),
            Err(Error::Format { .. }) => None,
            Err(e) => return Err(e),
        };
        if let Some(value) = parsed {
            if let Some(arr) = value["mistake_types"].as_array() {
                for item in arr {
                    let label = item["type"].as_str().unwrap_or("").trim().to_string();
                    if label.is_empty() {
                        continue;
                    }
                    if mined.iter().any(|m| m.label == label) {
                        warnings.push(format!("duplicate mistake type dropped: {label}"));
                        continue;
                    }
                    mined.push(MinedMistake {
                        label,
                        description: item["description"].as_str().unwrap_or("").to_string(),
                    });
                }
            }
        }
        if mined.len() >= k {
            mined.truncate(k);
            return Ok((mined, warnings));
        }
    }
    if mined.is_empty() {
        return Err(Error::MiningFailed(sample.id.clone()));
    }
    warnings.push(format!(
        "mined {} of {k} mistake types for {}",
        mined.len(),
        sample.id
    ));
    Ok((mined, warnings))
}

/// Plausibility weight in the combined distractor score.
pub const DISTRACTOR_ALPHA: f64 = 0.5;

/// Scores one candidate distractor: plausibility from the judge,
/// distinctiveness as 1 - cosine to the correct answer, combined as
/// alpha * plausibility + (1 - alpha) * distinctiveness / 2.
pub fn score_distractor(
    candidate: &str,
    mistake_type: &str,
    question: &str,
    correct: &str,
    alpha: f64,
    provider: &Provider,
) -> Result<(ScoredDistractor, Vec<String>)> {
    let mut warnings = Vec::new();
    let mut vars = BTreeMap::new();
    vars.insert("candidate".to_string(), candidate.to_string());
    vars.insert("mistake_type".to_string(), mistake_type.to_string());
    vars.insert("question".to_string(), question.to_string());
    vars.insert("correct_answer".to_string(), correct.to_string());
    let req = CompletionRequest::new(TemplateId::DistractorJudge, vars);
    let plausibility = match provider.complete(&req) {
        Ok(c) => match c.number() {
            Some(p) if (0.0..=1.0).contains(&p) => p,
            _ => {
                warnings.push(format!("unparseable plausibility for {candidate:?}"));
                0.0
            }
        },
        Err(Error::Format { .. }) => {
            warnings.push(format!("unparseable plausibility for {candidate:?}"));
            0.0
        }
        Err(e) => return Err(e),
    };
    let distinctiveness = if candidate.trim().is_empty() {
        2.0
    } else {
        1.0 - cosine(&provider.embed(candidate)?, &provider.embed(correct)?)
    };
    Ok((
        ScoredDistractor {
            text: candidate.to_string(),
            mistake_type: mistake_type.to_string(),
            plausibility,
            distinctiveness,
            combined: alpha * plausibility + (1.0 - alpha) * distinctiveness / 2.0,
        },
        warnings,
    ))
}

/// Best n candidates by combined score subject to at least one per
/// mistake type. Each type's maximum is always part of some optimum, so
/// the selection is the per-type maxima plus the best remaining fill.
pub fn select_top_n(candidates: &[ScoredDistractor], n: usize) -> Vec<usize> {
    let mut types: Vec<&str> = Vec::new();
    for c in candidates {
        if !types.contains(&c.mistake_type.as_str()) {
            types.push(&c.mistake_type);
        }
    }
    let mut chosen: Vec<usize> = Vec::new();
    if types.len() <= n {
        for t in &types {
            let best = candidates
                .iter()
                .enumerate()
                .filter(|(_, c)| c.mistake_type == *t)
                .max_by(|a, b| {
                    a.1.combined
                        .partial_cmp(&b.1.combined)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then_with(|| b.0.cmp(&a.0))
                })
                .map(|(i, _)| i)
                .unwrap();
            chosen.push(best);
        }
    }
    let mut rest: Vec<usize> = (0..candidates.len())
        .filter(|i| !chosen.contains(i))
        .collect();
    rest.sort_by(|&a, &b| {
        candidates[b]
            .combined
            .partial_cmp(&candidates[a].combined)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.cmp(&b))
    });
    for i in rest {
        if chosen.len() >= n {
            break;
        }
        chosen.push(i);
    }
    chosen.sort_unstable();
    chosen.truncate(n);
    chosen
}

#[derive(Debug, Clone)]
pub struct RewriteOutcome {
    pub sample: QASample,
    pub usage: Usage,
    pub warnings: Vec<String>,
}

/// Rewrites the incorrect options of an MCQ toward the target band
/// (r5). Hardening mines mistake types and installs the best-scoring
/// candidate set; easing drops the distractor most confusable with the
/// correct answer. The correct option is never altered.
pub fn rewrite_distractors(
    sample: &QASample,
    t_diff: Band,
    n: usize,
    provider: &Provider,
) -> Result<RewriteOutcome> {
    if sample.distractors().len() < 2 {
        return Err(Error::Argument(format!(
            "{} has fewer than 2 incorrect choices",
            sample.id
        )));
    }
    let current = sample.difficulty.unwrap_or(Band::Medium);
    let mut warnings = Vec::new();
    let correct_before = sample.correct_choice.clone();
    let mut out = sample.clone();
    if t_diff < current {
        // easing: drop the distractor with the highest cosine to the
        // correct answer, breaking ties by lower plausibility
        let correct_emb = provider.embed(&sample.correct_choice)?;
        let mut worst: Option<(usize, f64, f64)> = None;
        for (i, choice) in sample.choices.iter().enumerate() {
            if i == sample.answer_index {
                continue;
            }
            let sim = if choice.trim().is_empty() {
                1.0
            } else {
                cosine(&provider.embed(choice)?, &correct_emb)
            };
            let (scored, w) = score_distractor(
                choice,
                "existing",
                &sample.question,
                &sample.correct_choice,
                DISTRACTOR_ALPHA,
                provider,
            )?;
            warnings.extend(w);
            let replace = match worst {
                None => true,
                Some((_, s, p)) => sim > s || (sim == s && scored.plausibility < p),
            };
            if replace {
                worst = Some((i, sim, scored.plausibility));
            }
        }
        let (idx, _, _) = worst.expect("at least two distractors");
        out.choices.remove(idx);
        if idx < out.answer_index {
            out.answer_index -= 1;
        }
        if let Some(types) = &mut out.distractor_types {
            let ti = if idx > sample.answer_index { idx - 1 } else { idx };
            if ti < types.len() {
                types.remove(ti);
            }
        }
    } else {
        // hardening
        let (mined, w) = mine_mistake_types(sample, n, provider)?;
        warnings.extend(w);
        let mistake_lines = mined
            .iter()
            .map(|m| format!("{}: {}", m.label, m.description))
            .collect::<Vec<_>>()
            .join("\n");
        let mut vars = BTreeMap::new();
        vars.insert("subject".to_string(), sample.topic.clone().unwrap_or_else(|| "general".into()));
        vars.insert("question".to_string(), sample.question.clone());
        vars.insert("correct_answer".to_string(), sample.correct_choice.clone());
        vars.insert(
            "original_choices".to_string(),
            sample.choices.join("\n"),
        );
        vars.insert("mistake_types".to_string(), mistake_lines);
        let req = CompletionRequest::new(TemplateId::DistractorRewrite, vars);
        let completion = provider.complete(&req)?;
        let value = completion
            .json()
            .cloned()
            .ok_or_else(|| Error::Format {
                template: TemplateId::DistractorRewrite.as_str().to_string(),
                msg: "rewrite output is not JSON".into(),
                raw: completion.text.clone(),
            })?;
        let mut scored = Vec::new();
        for cand in value["candidates"].as_array().into_iter().flatten() {
            let text = cand["text"].as_str().unwrap_or("").to_string();
            let mtype = cand["type"].as_str().unwrap_or("").to_string();
            if text.trim().is_empty() || text == sample.correct_choice {
                continue;
            }
            let (s, w) = score_distractor(
                &text,
                &mtype,
                &sample.question,
                &sample.correct_choice,
                DISTRACTOR_ALPHA,
                provider,
            )?;
            warnings.extend(w);
            scored.push(s);
        }
        let want = sample.distractors().len().min(n.max(1));
        if scored.len() < want {
            return Err(Error::Format {
                template: TemplateId::DistractorRewrite.as_str().to_string(),
                msg: format!("only {} usable candidates, need {want}", scored.len()),
                raw: completion.text,
            });
        }
        let picked = select_top_n(&scored, want);
        let mut choices = vec![sample.correct_choice.clone()];
        let mut types = Vec::new();
        for i in &picked {
            choices.push(scored[*i].text.clone());
            types.push(scored[*i].mistake_type.clone());
        }
        out.choices = choices;
        out.answer_index = 0;
        out.distractor_types = Some(types);
    }
    out.provenance = Provenance::Rewritten;
    if let Some(w) = out.validate()? {
        warnings.push(w);
    }
    debug_assert_eq!(out.correct_choice, correct_before);
    Ok(RewriteOutcome {
        sample: out,
        usage: Usage::default(),
        warnings,
    })
}

/// Removal probability on the difficulty axis; same rule as the topic
/// axis.
pub fn removal_probability_difficulty(
    band: Band,
    empirical: &Distribution,
    target: &Distribution,
) -> f64 {
    coverage::removal_probability(band.as_str(), empirical, target)
}
