//! Deterministic mock backend: a rule engine that is a pure function of
//! (seed, template, variables). It lets the entire pipeline run offline
//! with exactly reproducible outputs and fixed per-template usage.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::provider::{fnv1a64, Backend, CompletionRequest, Embedding, TemplateId, Usage};

/// Fixture tables consulted before the hash-based fallbacks.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockFixtures {
    /// question text -> topic id (topic classification answer key)
    #[serde(default)]
    pub topic_of: BTreeMap<String, String>,
    /// question text -> hidden difficulty in [0,1] driving the judge
    #[serde(default)]
    pub difficulty_of: BTreeMap<String, f64>,
    /// question text -> true answer index (validator answer key)
    #[serde(default)]
    pub answer_key: BTreeMap<String, usize>,
    /// question text -> "code" | "retrieval"
    #[serde(default)]
    pub route_of: BTreeMap<String, String>,
    /// question text -> keywords
    #[serde(default)]
    pub keywords_of: BTreeMap<String, Vec<String>>,
    /// subject -> (label, description) pairs
    #[serde(default)]
    pub mistake_types_of: BTreeMap<String, Vec<(String, String)>>,
    /// candidate text -> plausibility score
    #[serde(default)]
    pub plausibility_of: BTreeMap<String, f64>,
    /// question text -> raw pairwise-judge output override
    #[serde(default)]
    pub judge_overrides: BTreeMap<String, String>,
    /// questions whose wrong label the validator detects but cannot
    /// correct (reliability fixture: verdict becomes `fail`)
    #[serde(default)]
    pub broken_answers: BTreeSet<String>,
    /// questions where the validator reports low confidence
    #[serde(default)]
    pub low_confidence: BTreeSet<String>,
    /// template ids for which the mock emits unparseable output
    #[serde(default)]
    pub fail_templates: BTreeSet<String>,
}

pub const EMBED_DIM: usize = 256;

/// Hidden difficulty of the seed referenced in a pairwise prompt.
fn seed_band_difficulty(band: &str) -> f64 {
    match band {
        "easy" => 0.1,
        "medium" => 0.5,
        "hard" => 0.8,
        _ => 0.5,
    }
}

pub struct MockProvider {
    pub seed: u64,
    pub fixtures: MockFixtures,
}

impl MockProvider {
    pub fn new(seed: u64) -> MockProvider {
        MockProvider {
            seed,
            fixtures: MockFixtures::default(),
        }
    }

    pub fn with_fixtures(seed: u64, fixtures: MockFixtures) -> MockProvider {
        MockProvider { seed, fixtures }
    }

    fn mix(&self, parts: &[&str]) -> u64 {
        let mut buf = self.seed.to_le_bytes().to_vec();
        for p in parts {
            buf.extend_from_slice(p.as_bytes());
            buf.push(0x1f);
        }
        fnv1a64(&buf)
    }

    /// Hidden difficulty of a question: fixture first, then an embedded
    /// band marker like `[hard]`, then a hash-derived value.
    pub fn hidden_difficulty(&self, question: &str) -> f64 {
        if let Some(d) = self.fixtures.difficulty_of.get(question) {
            return *d;
        }
        if question.contains("[hard]") {
            0.9
        } else if question.contains("[medium]") {
            0.5
        } else if question.contains("[easy]") {
            0.1
        } else {
            (fnv1a64(question.as_bytes()) % 1000) as f64 / 999.0
        }
    }

    fn topic_marker(question: &str) -> Option<String> {
        let start = question.find("[topic:")?;
        let rest = &question[start + 7..];
        let end = rest.find(']')?;
        Some(rest[..end].to_string())
    }

    fn band_marker(question: &str) -> Option<&'static str> {
        if question.contains("[hard]") {
            Some("[hard]")
        } else if question.contains("[medium]") {
            Some("[medium]")
        } else if question.contains("[easy]") {
            Some("[easy]")
        } else {
            None
        }
    }

    /// Builds a lexically varied question that keeps the topic and band
    /// markers of the source (they carry the hidden semantics the other
    /// mock rules read).
    fn varied_question(&self, source_q: &str, topic: &str, band_hint: Option<&str>, h: u64) -> String {
        let band = band_hint
            .map(|b| format!("[{b}]"))
            .or_else(|| Self::band_marker(source_q).map(|m| m.to_string()))
            .unwrap_or_else(|| "[medium]".to_string());
        let mut words: Vec<&str> = source_q
            .split_whitespace()
            .filter(|w| !w.starts_with('['))
            .collect();
        // deterministic Fisher-Yates driven by the call hash
        let mut state = h | 1;
        for i in (1..words.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let j = (state >> 33) as usize % (i + 1);
            words.swap(i, j);
        }
        format!(
            "variant {:08x} [topic:{topic}] {band} {}",
            h & 0xffff_ffff,
            words.join(" ")
        )
    }

    fn complete_rules(&self, req: &CompletionRequest) -> Result<String> {
        let vars = &req.variables;
        let get = |k: &str| -> &str { vars.get(k).map(|s| s.as_str()).unwrap_or("") };
        if self
            .fixtures
            .fail_templates
            .contains(req.template_id.as_str())
        {
            // unparseable under every expected output format
            return Ok(String::new());
        }
        let call_hash = {
            let mut parts: Vec<&str> = vec![req.template_id.as_str()];
            for (k, v) in vars {
                parts.push(k);
                parts.push(v);
            }
            self.mix(&parts)
        };
        let out = match req.template_id {
            TemplateId::Pairwise => {
                let new_q = get("new_question");
                if let Some(o) = self.fixtures.judge_overrides.get(new_q) {
                    return Ok(o.clone());
                }
                let da = self.hidden_difficulty(new_q);
                let db = seed_band_difficulty(get("seed_difficulty"));
                let r = (0.5 + 1.25 * (da - db)).clamp(0.0, 1.0);
                format!("{r:.4}")
            }
            TemplateId::TopicClassify => {
                let q = get("question");
                if let Some(t) = self.fixtures.topic_of.get(q) {
                    t.clone()
                } else if let Some(t) = Self::topic_marker(q) {
                    t
                } else {
                    "OTHER".to_string()
                }
            }
            TemplateId::Expansion => {
                let topic = get("topic");
                let source: serde_json::Value =
                    serde_json::from_str(get("input_qa")).unwrap_or(json!({}));
                let source_q = source["question"].as_str().unwrap_or("untitled");
                let correct = source["correct_choice"].as_str().unwrap_or("answer");
                let question = self.varied_question(source_q, topic, None, call_hash);
                let answer = (call_hash % 4) as usize;
                let mut choices = Vec::new();
                for i in 0..4 {
                    if i == answer {
                        choices.push(correct.to_string());
                    } else {
                        choices.push(format!("alt {:06x} {i}", call_hash & 0xff_ffff));
                    }
                }
                json!({
                    "question": question,
                    "choices": choices,
                    "answer": answer,
                    "correct_choice": correct,
                })
                .to_string()
            }
            TemplateId::Generation => {
                let band = get("target_difficulty");
                let topic = get("topic");
                let source: serde_json::Value =
                    serde_json::from_str(get("input_qa")).unwrap_or(json!({}));
                let source_q = source["question"].as_str().unwrap_or("fresh item stem");
                let question = self.varied_question(source_q, topic, Some(band), call_hash);
                let answer = (call_hash % 4) as usize;
                let correct = format!("key {:06x}", (call_hash >> 8) & 0xff_ffff);
                let mut choices = Vec::new();
                for i in 0..4 {
                    if i == answer {
                        choices.push(correct.clone());
                    } else {
                        choices.push(format!("foil {:06x} {i}", call_hash & 0xff_ffff));
                    }
                }
                json!({
                    "question": question,
                    "choices": choices,
                    "answer": answer,
                    "correct_choice": correct,
                })
                .to_string()
            }
            TemplateId::MistakeMining => {
                let subject = get("subject");
                let k: usize = get("num_choices").parse().unwrap_or(3);
                let canon = [
                    ("Computational error", "sign error or miscalculation"),
                    ("Conceptual confusion", "conflating similar terms"),
                    ("Procedural flaw", "applying the wrong formula or method"),
                    ("Memory lapse", "forgetting a definition or fact"),
                    ("Logical misstep", "faulty deduction or overgeneralization"),
                ];
                let types: Vec<(String, String)> = match self.fixtures.mistake_types_of.get(subject)
                {
                    Some(ts) => ts.iter().take(k).cloned().collect(),
                    None => canon
                        .iter()
                        .cycle()
                        .take(k)
                        .map(|(a, b)| (a.to_string(), b.to_string()))
                        .collect(),
                };
                json!({
                    "mistake_types": types
                        .iter()
                        .map(|(t, d)| json!({"type": t, "description": d}))
                        .collect::<Vec<_>>()
                })
                .to_string()
            }
            TemplateId::DistractorRewrite => {
                // two candidates per listed mistake type, token-disjoint
                // from the correct answer
                let types: Vec<&str> = get("mistake_types")
                    .lines()
                    .filter(|l| !l.trim().is_empty())
                    .collect();
                let mut candidates = Vec::new();
                for (ti, t) in types.iter().enumerate() {
                    let label = t.split(':').next().unwrap_or(t).trim();
                    for ci in 0..2 {
                        let h = call_hash ^ ((ti as u64) << 32) ^ (ci as u64);
                        candidates.push(json!({
                            "text": format!("trap{:06x} v{ci} {label}", h & 0xff_ffff),
                            "type": label,
                        }));
                    }
                }
                json!({ "candidates": candidates }).to_string()
            }
            TemplateId::DistractorJudge => {
                let candidate = get("candidate");
                let p = self
                    .fixtures
                    .plausibility_of
                    .get(candidate)
                    .copied()
                    .unwrap_or_else(|| 0.5 + (fnv1a64(candidate.as_bytes()) % 500) as f64 / 1000.0);
                format!("{p:.4}")
            }
            TemplateId::CodeValidation => {
                let q = get("question");
                let choices: Vec<String> =
                    serde_json::from_str(get("choices_json")).unwrap_or_default();
                let claimed = get("correct_answer_text");
                let answer = match self.fixtures.answer_key.get(q) {
                    Some(&idx) => choices.get(idx).cloned().unwrap_or_else(|| claimed.into()),
                    None => claimed.to_string(),
                };
                format!("```python\nprint({answer:?})\n```")
            }
            TemplateId::RagValidation => {
                let q = get("question");
                let claimed_letter = get("correct_answer_letter").chars().next().unwrap_or('A');
                let claimed_idx = (claimed_letter as u8).saturating_sub(b'A') as usize;
                let confidence = if self.fixtures.low_confidence.contains(q) {
                    0.5
                } else {
                    0.9
                };
                match self.fixtures.answer_key.get(q) {
                    Some(&true_idx) if true_idx != claimed_idx => {
                        let selected = if self.fixtures.broken_answers.contains(q) {
                            "unknown".to_string()
                        } else {
                            ((b'A' + true_idx as u8) as char).to_string()
                        };
                        json!({
                            "reasoning": "evidence contradicts the claimed answer",
                            "selected_answer": selected,
                            "original_is_truthful": false,
                            "confidence": confidence,
                        })
                        .to_string()
                    }
                    _ => json!({
                        "reasoning": "evidence supports the claimed answer",
                        "selected_answer": claimed_letter.to_string(),
                        "original_is_truthful": true,
                        "confidence": confidence,
                    })
                    .to_string(),
                }
            }
            TemplateId::RouteClassify => {
                let q = get("question");
                self.fixtures
                    .route_of
                    .get(q)
                    .cloned()
                    .unwrap_or_else(|| "retrieval".to_string())
            }
            TemplateId::KeywordExtract => {
                let q = get("question");
                match self.fixtures.keywords_of.get(q) {
                    Some(ks) => ks.join(", "),
                    None => {
                        let mut seen = BTreeSet::new();
                        let toks: Vec<String> = q
                            .to_lowercase()
                            .split(|c: char| !c.is_alphanumeric())
                            .filter(|t| t.len() > 2 && seen.insert(t.to_string()))
                            .map(|t| t.to_string())
                            .take(5)
                            .collect();
                        toks.join(", ")
                    }
                }
            }
        };
        Ok(out)
    }
}

/// Fixed usage per template keeps pilot estimates exact in mock mode.
pub fn mock_usage(id: TemplateId) -> Usage {
    let (p, c) = match id {
        TemplateId::Expansion => (260, 120),
        TemplateId::Generation => (300, 140),
        TemplateId::Pairwise => (180, 4),
        TemplateId::MistakeMining => (220, 90),
        TemplateId::DistractorRewrite => (240, 100),
        TemplateId::CodeValidation => (380, 120),
        TemplateId::RagValidation => (420, 60),
        TemplateId::TopicClassify => (120, 6),
        TemplateId::DistractorJudge => (140, 4),
        TemplateId::RouteClassify => (90, 2),
        TemplateId::KeywordExtract => (100, 12),
    };
    Usage {
        prompt_tokens: p,
        completion_tokens: c,
    }
}

impl Backend for MockProvider {
    fn complete_once(&self, request: &CompletionRequest, _prompt: &str) -> Result<(String, Usage)> {
        let text = self.complete_rules(request)?;
        Ok((text, mock_usage(request.template_id)))
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        if text.trim().is_empty() {
            return Err(Error::Argument("cannot embed empty text".into()));
        }
        let mut v = vec![0.0; EMBED_DIM];
        for tok in text
            .to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let mut buf = self.seed.to_le_bytes().to_vec();
            buf.extend_from_slice(tok.as_bytes());
            let idx = (fnv1a64(&buf) % EMBED_DIM as u64) as usize;
            v[idx] += 1.0;
        }
        Ok(Embedding(v))
    }
}
