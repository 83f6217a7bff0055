//! Vendor-neutral LLM and embedding access with token accounting.
//!
//! Prompt templates ship as text assets with `{placeholder}` slots. The
//! mock backend is a deterministic rule engine keyed by (seed,
//! template, variables) so the whole pipeline is testable offline.

pub mod http;
pub mod mock;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TemplateId {
    Expansion,
    Generation,
    Pairwise,
    MistakeMining,
    DistractorRewrite,
    CodeValidation,
    RagValidation,
    TopicClassify,
    DistractorJudge,
    RouteClassify,
    KeywordExtract,
}

impl TemplateId {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Expansion => "expansion",
            TemplateId::Generation => "generation",
            TemplateId::Pairwise => "pairwise",
            TemplateId::MistakeMining => "mistake_mining",
            TemplateId::DistractorRewrite => "distractor_rewrite",
            TemplateId::CodeValidation => "code_validation",
            TemplateId::RagValidation => "rag_validation",
            TemplateId::TopicClassify => "topic_classify",
            TemplateId::DistractorJudge => "distractor_judge",
            TemplateId::RouteClassify => "route_classify",
            TemplateId::KeywordExtract => "keyword_extract",
        }
    }

    /// Template text shipped with the crate.
    pub fn text(self) -> &'static str {
        match self {
            TemplateId::Expansion => include_str!("../../assets/templates/expansion.txt"),
            TemplateId::Generation => include_str!("../../assets/templates/generation.txt"),
            TemplateId::Pairwise => include_str!("../../assets/templates/pairwise.txt"),
            TemplateId::MistakeMining => {
                include_str!("../../assets/templates/mistake_mining.txt")
            }
            TemplateId::DistractorRewrite => {
                include_str!("../../assets/templates/distractor_rewrite.txt")
            }
            TemplateId::CodeValidation => {
                include_str!("../../assets/templates/code_validation.txt")
            }
            TemplateId::RagValidation => {
                include_str!("../../assets/templates/rag_validation.txt")
            }
            TemplateId::TopicClassify => {
                include_str!("../../assets/templates/topic_classify.txt")
            }
            TemplateId::DistractorJudge => {
                include_str!("../../assets/templates/distractor_judge.txt")
            }
            TemplateId::RouteClassify => {
                include_str!("../../assets/templates/route_classify.txt")
            }
            TemplateId::KeywordExtract => {
                include_str!("../../assets/templates/keyword_extract.txt")
            }
        }
    }

    /// Judging and validation run at temperature 0; generation and
    /// expansion need variety.
    pub fn default_temperature(self) -> f64 {
        match self {
            TemplateId::Expansion | TemplateId::Generation | TemplateId::DistractorRewrite => 0.8,
            _ => 0.0,
        }
    }

    pub fn expected_format(self) -> ExpectedFormat {
        match self {
            TemplateId::Expansion
            | TemplateId::Generation
            | TemplateId::MistakeMining
            | TemplateId::DistractorRewrite
            | TemplateId::RagValidation => ExpectedFormat::Json,
            TemplateId::Pairwise | TemplateId::DistractorJudge => ExpectedFormat::Number,
            TemplateId::CodeValidation => ExpectedFormat::Code,
            TemplateId::TopicClassify | TemplateId::RouteClassify | TemplateId::KeywordExtract => {
                ExpectedFormat::Text
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExpectedFormat {
    Json,
    Number,
    Code,
    Text,
}

#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub template_id: TemplateId,
    pub variables: BTreeMap<String, String>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub expected_format: ExpectedFormat,
}

impl CompletionRequest {
    pub fn new(template_id: TemplateId, variables: BTreeMap<String, String>) -> Self {
        CompletionRequest {
            template_id,
            variables,
            temperature: template_id.default_temperature(),
            max_output_tokens: 1024,
            expected_format: template_id.expected_format(),
        }
    }

    /// Only deterministic (temperature 0) requests are retried.
    pub fn is_idempotent(&self) -> bool {
        self.temperature == 0.0
    }
}

/// Renders a template, replacing every `{name}` placeholder. A
/// placeholder without a matching variable is an error; literal braces
/// that do not form a `{lower_snake_case}` token are left untouched.
pub fn render_template(id: TemplateId, vars: &BTreeMap<String, String>) -> Result<String> {
    let text = id.text();
    let mut out = String::with_capacity(text.len());
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let rest = &text[i + 1..];
            if let Some(end) = rest.find('}') {
                let name = &rest[..end];
                if !name.is_empty()
                    && name
                        .bytes()
                        .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
                {
                    let value = vars.get(name).ok_or_else(|| {
                        Error::Argument(format!(
                            "template `{}` placeholder `{{{name}}}` not satisfied",
                            id.as_str()
                        ))
                    })?;
                    out.push_str(value);
                    i += name.len() + 2;
                    continue;
                }
            }
        }
        let ch = text[i..].chars().next().unwrap();
        out.push(ch);
        i += ch.len_utf8();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn total(self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParsedValue {
    Json(serde_json::Value),
    Number(f64),
    Code(String),
    Text(String),
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub text: String,
    pub parsed: Option<ParsedValue>,
    pub usage: Usage,
}

impl Completion {
    pub fn json(&self) -> Option<&serde_json::Value> {
        match &self.parsed {
            Some(ParsedValue::Json(v)) => Some(v),
            _ => None,
        }
    }

    pub fn number(&self) -> Option<f64> {
        match &self.parsed {
            Some(ParsedValue::Number(n)) => Some(*n),
            _ => None,
        }
    }

    pub fn code(&self) -> Option<&str> {
        match &self.parsed {
            Some(ParsedValue::Code(c)) => Some(c),
            _ => None,
        }
    }
}

/// A fixed-dimension embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

pub fn cosine(a: &Embedding, b: &Embedding) -> f64 {
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    let na: f64 = a.0.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.0.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Shared token ledger; increments are atomic so concurrent workers
/// never lose an update.
#[derive(Debug, Default)]
pub struct CostLedger {
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
    calls: AtomicU64,
}

impl CostLedger {
    pub fn record(&self, usage: Usage) {
        self.prompt_tokens
            .fetch_add(usage.prompt_tokens, Ordering::Relaxed);
        self.completion_tokens
            .fetch_add(usage.completion_tokens, Ordering::Relaxed);
        self.calls.fetch_add(1, Ordering::Relaxed);
    }

    pub fn usage(&self) -> Usage {
        Usage {
            prompt_tokens: self.prompt_tokens.load(Ordering::Relaxed),
            completion_tokens: self.completion_tokens.load(Ordering::Relaxed),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Per-token rates for prompt and completion tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pricing {
    pub prompt_rate: f64,
    pub completion_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cost {
    pub tokens: u64,
    pub monetary: f64,
}

/// Token total plus monetary cost (dot product with the rates).
pub fn cost_of(usage: Usage, pricing: Pricing) -> Result<Cost> {
    if pricing.prompt_rate < 0.0 || pricing.completion_rate < 0.0 {
        return Err(Error::Argument("pricing rates must be nonnegative".into()));
    }
    Ok(Cost {
        tokens: usage.total(),
        monetary: usage.prompt_tokens as f64 * pricing.prompt_rate
            + usage.completion_tokens as f64 * pricing.completion_rate,
    })
}

/// Backend behind the provider handle: one completion attempt, no
/// retries or accounting.
pub trait Backend: Send + Sync {
    fn complete_once(&self, request: &CompletionRequest, prompt: &str) -> Result<(String, Usage)>;
    fn embed(&self, text: &str) -> Result<Embedding>;
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay_ms: 50,
        }
    }
}

/// Shareable provider handle: rendering, retries, parsing, and the cost
/// ledger live here; the backend only talks to the model.
pub struct Provider {
    backend: Arc<dyn Backend>,
    ledger: Arc<CostLedger>,
    retry: RetryPolicy,
}

impl Provider {
    pub fn new(backend: Box<dyn Backend>) -> Provider {
        Provider {
            backend: Arc::from(backend),
            ledger: Arc::new(CostLedger::default()),
            retry: RetryPolicy::default(),
        }
    }

    /// Same backend, fresh ledger. Probe traffic (pilot estimation) is
    /// accounted separately from budgeted refinement traffic.
    pub fn fork_ledger(&self) -> Provider {
        Provider {
            backend: Arc::clone(&self.backend),
            ledger: Arc::new(CostLedger::default()),
            retry: self.retry,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Provider {
        self.retry = retry;
        self
    }

    pub fn ledger(&self) -> &Arc<CostLedger> {
        &self.ledger
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<Completion> {
        let prompt = render_template(request.template_id, &request.variables)?;
        let attempts = if request.is_idempotent() {
            self.retry.attempts.max(1)
        } else {
            1
        };
        let mut last_err = None;
        for attempt in 0..attempts {
            if attempt > 0 && self.retry.base_delay_ms > 0 {
                std::thread::sleep(std::time::Duration::from_millis(
                    self.retry.base_delay_ms << (attempt - 1),
                ));
            }
            match self.backend.complete_once(request, &prompt) {
                Ok((text, usage)) => {
                    self.ledger.record(usage);
                    let parsed = parse_output(request.expected_format, &text);
                    if parsed.is_none() {
                        return Err(Error::Format {
                            template: request.template_id.as_str().to_string(),
                            msg: format!("output not parseable as {:?}", request.expected_format),
                            raw: text,
                        });
                    }
                    return Ok(Completion {
                        text,
                        parsed,
                        usage,
                    });
                }
                Err(e) => last_err = Some(e),
            }
        }
        Err(Error::ProviderUnavailable {
            attempts,
            msg: last_err.map(|e| e.to_string()).unwrap_or_default(),
        })
    }

    pub fn embed(&self, text: &str) -> Result<Embedding> {
        if text.trim().is_empty() {
            return Err(Error::Argument("cannot embed empty text".into()));
        }
        self.backend.embed(text)
    }
}

fn parse_output(format: ExpectedFormat, text: &str) -> Option<ParsedValue> {
    match format {
        ExpectedFormat::Text => {
            let t = text.trim();
            if t.is_empty() {
                None
            } else {
                Some(ParsedValue::Text(t.to_string()))
            }
        }
        ExpectedFormat::Number => {
            let t = text.trim();
            if let Ok(n) = t.parse::<f64>() {
                return Some(ParsedValue::Number(n));
            }
            // fall back to the first numeric token in the output
            t.split(|c: char| c.is_whitespace() || c == ',')
                .find_map(|tok| tok.parse::<f64>().ok())
                .map(ParsedValue::Number)
        }
        ExpectedFormat::Json => {
            let t = text.trim();
            if let Ok(v) = serde_json::from_str(t) {
                return Some(ParsedValue::Json(v));
            }
            // tolerate prose around the object, or a brace-less field list
            if let (Some(start), Some(end)) = (t.find('{'), t.rfind('}')) {
                if start < end {
                    if let Ok(v) = serde_json::from_str(&t[start..=end]) {
                        return Some(ParsedValue::Json(v));
                    }
                }
            }
            serde_json::from_str(&format!("{{{t}}}"))
                .ok()
                .map(ParsedValue::Json)
        }
        ExpectedFormat::Code => {
            let t = text.trim();
            if let Some(start) = t.find("```python") {
                let body = &t[start + "```python".len()..];
                if let Some(end) = body.find("```") {
                    return Some(ParsedValue::Code(body[..end].trim().to_string()));
                }
            }
            if let Some(start) = t.find("```") {
                let body = &t[start + 3..];
                if let Some(end) = body.find("```") {
                    return Some(ParsedValue::Code(body[..end].trim().to_string()));
                }
            }
            if t.is_empty() {
                None
            } else {
                Some(ParsedValue::Code(t.to_string()))
            }
        }
    }
}

/// Stable 64-bit FNV-1a; used wherever the crate needs a hash that is
/// reproducible across builds.
pub fn fnv1a64(data: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in data {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
