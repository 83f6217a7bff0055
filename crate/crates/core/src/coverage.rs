//! Coverage Refiner: realigns the topic distribution via removal (r1)
//! and expansion (r2).

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{Dataset, Distribution, Provenance, QASample, Taxonomy, OTHER_TOPIC};
use crate::error::{Error, Result};
use crate::provider::{cosine, CompletionRequest, Provider, TemplateId, Usage};

/// Cosine threshold above which a candidate counts as a duplicate.
pub const DEDUP_COSINE: f64 = 0.95;

/// Default number of candidates sampled per expansion call.
pub const DEFAULT_EXPANSION_COUNT: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalDecision {
    pub sample_id: String,
    pub probability: f64,
    pub draw: f64,
    pub dropped: bool,
}

#[derive(Debug, Clone)]
pub struct ExpansionCandidate {
    pub source_id: String,
    pub sample: QASample,
    pub similarity_to_source: f64,
    pub accepted: bool,
    pub usage: Usage,
}

/// Returns the sample's topic, calling the provider only when the label
/// is missing. Unmappable outputs fall back to the OTHER bin.
pub fn classify_topic(
    sample: &QASample,
    taxonomy: &Taxonomy,
    provider: &Provider,
) -> Result<String> {
    if let Some(topic) = &sample.topic {
        return Ok(topic.clone());
    }
    let topic_list = taxonomy
        .topics
        .iter()
        .map(|t| format!("- {}: {}", t.id, t.name))
        .collect::<Vec<_>>()
        .join("\n");
    let mut vars = BTreeMap::new();
    vars.insert("question".to_string(), sample.question.clone());
    vars.insert("topic_list".to_string(), topic_list);
    let req = CompletionRequest::new(TemplateId::TopicClassify, vars);
    match provider.complete(&req) {
        Ok(c) => {
            let label = c.text.trim();
            if taxonomy.has_topic(label) {
                Ok(label.to_string())
            } else {
                Ok(OTHER_TOPIC.to_string())
            }
        }
        Err(Error::Format { .. }) => Ok(OTHER_TOPIC.to_string()),
        Err(e) => Err(e),
    }
}

/// Removal probability for an overrepresented category:
/// max(0, (p_c - t_c) / p_c). In expectation this brings the bin's
/// post-removal count down to the target share of the original size.
pub fn removal_probability(category: &str, empirical: &Distribution, target: &Distribution) -> f64 {
    let p = empirical.weight(category);
    if p <= 0.0 {
        return 0.0;
    }
    (((p - target.weight(category)) / p).max(0.0)).min(1.0)
}

/// Draws the removal decision for one sample.
pub fn apply_removal<R: Rng>(sample: &QASample, prob: f64, rng: &mut R) -> RemovalDecision {
    let draw: f64 = rng.gen();
    RemovalDecision {
        sample_id: sample.id.clone(),
        probability: prob,
        draw,
        dropped: draw < prob,
    }
}

fn parse_generated_sample(
    value: &serde_json::Value,
    id: String,
    topic: &str,
    provenance: Provenance,
) -> Result<QASample> {
    let question = value["question"]
        .as_str()
        .ok_or_else(|| Error::Argument("generated record missing question".into()))?
        .to_string();
    let choices: Vec<String> = value["choices"]
        .as_array()
        .ok_or_else(|| Error::Argument("generated record missing choices".into()))?
        .iter()
        .map(|c| c.as_str().unwrap_or_default().to_string())
        .collect();
    let answer_index = value["answer"]
        .as_u64()
        .ok_or_else(|| Error::Argument("generated record missing answer".into()))?
        as usize;
    let correct_choice = value["correct_choice"]
        .as_str()
        .unwrap_or_default()
        .to_string();
    let mut sample = QASample {
        id,
        question,
        choices,
        answer_index,
        correct_choice,
        topic: Some(topic.to_string()),
        difficulty: None,
        elo: None,
        provenance,
        distractor_types: None,
    };
    sample.validate()?;
    Ok(sample)
}

pub fn sample_as_json(sample: &QASample) -> String {
    json!({
        "question": sample.question,
        "choices": sample.choices,
        "answer": sample.answer_index,
        "correct_choice": sample.correct_choice,
    })
    .to_string()
}

/// Expands one sample toward a target topic: up to `count` candidates,
/// one completion each. Candidates failing the sample invariants are
/// discarded (reported via the returned warnings); if none parse the
/// call is an expansion failure but the cost is still charged.
pub fn expand(
    sample: &QASample,
    topic_target: &str,
    count: usize,
    domain: &str,
    provider: &Provider,
) -> Result<(Vec<ExpansionCandidate>, Vec<String>, Usage)> {
    let mut candidates = Vec::new();
    let mut warnings = Vec::new();
    let mut usage = Usage::default();
    for i in 0..count.max(1) {
        let mut vars = BTreeMap::new();
        vars.insert("domain".to_string(), domain.to_string());
        vars.insert("topic".to_string(), topic_target.to_string());
        vars.insert("input_qa".to_string(), sample_as_json(sample));
        vars.insert("candidate_index".to_string(), i.to_string());
        let req = CompletionRequest::new(TemplateId::Expansion, vars);
        let completion = match provider.complete(&req) {
            Ok(c) => c,
            Err(Error::Format { raw, .. }) => {
                warnings.push(format!("expansion candidate {i} unparseable: {raw}"));
                continue;
            }
            Err(e) => return Err(e),
        };
        usage.prompt_tokens += completion.usage.prompt_tokens;
        usage.completion_tokens += completion.usage.completion_tokens;
        let value = completion.json().cloned().unwrap_or_default();
        let id = format!("{}-exp{}", sample.id, i);
        match parse_generated_sample(&value, id, topic_target, Provenance::Expanded) {
            Ok(mut cand) => {
                cand.difficulty = sample.difficulty; // provisional; re-rated later
                let sim = match (
                    provider.embed(&cand.question),
                    provider.embed(&sample.question),
                ) {
                    (Ok(a), Ok(b)) => cosine(&a, &b),
                    _ => 0.0,
                };
                candidates.push(ExpansionCandidate {
                    source_id: sample.id.clone(),
                    sample: cand,
                    similarity_to_source: sim,
                    accepted: false,
                    usage: completion.usage,
                });
            }
            Err(e) => warnings.push(format!("expansion candidate {i} discarded: {e}")),
        }
    }
    if candidates.is_empty() {
        return Err(Error::ExpansionFailed(sample.id.clone()));
    }
    Ok((candidates, warnings, usage))
}

/// Rejects duplicates (cosine >= threshold against the source, the
/// existing corpus, or an earlier candidate in the same batch) and
/// degenerate empty questions. Order-stable.
pub fn filter_candidates(
    mut candidates: Vec<ExpansionCandidate>,
    existing: &Dataset,
    provider: &Provider,
) -> Result<Vec<ExpansionCandidate>> {
    let mut corpus: Vec<crate::provider::Embedding> = Vec::new();
    for s in existing.live() {
        corpus.push(provider.embed(&s.question)?);
    }
    let mut accepted_embeddings: Vec<crate::provider::Embedding> = Vec::new();
    for cand in &mut candidates {
        if cand.sample.question.trim().is_empty() {
            cand.accepted = false;
            continue;
        }
        if cand.similarity_to_source >= DEDUP_COSINE {
            cand.accepted = false;
            continue;
        }
        let emb = provider.embed(&cand.sample.question)?;
        let dup = corpus
            .iter()
            .chain(accepted_embeddings.iter())
            .any(|e| cosine(&emb, e) >= DEDUP_COSINE);
        if dup {
            cand.accepted = false;
            continue;
        }
        cand.accepted = true;
        accepted_embeddings.push(emb);
    }
    Ok(candidates.into_iter().filter(|c| c.accepted).collect())
}
