//! Correctness validation: code-executing checks for procedural items
//! and retrieval-grounded checks for factual items, plus the commit
//! phase that applies high-confidence corrections.

use std::collections::BTreeMap;
use std::io::Write;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Provenance, QASample, Taxonomy};
use crate::error::{Error, Result};
use crate::provider::http::Transport;
use crate::provider::{fnv1a64, CompletionRequest, Provider, TemplateId};

/// Minimum verdict confidence for committing a correction.
pub const CONFIDENCE_THRESHOLD: f64 = 0.7;

/// Numeric tolerance (absolute and relative) for code-route answers.
pub const NUMERIC_TOLERANCE: f64 = 1e-6;

/// Wall-clock limit for one derivation script.
pub const SANDBOX_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Code,
    Retrieval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Corrected,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationResult {
    pub sample_id: String,
    pub route: Route,
    pub verdict: Verdict,
    pub corrected_answer_index: Option<usize>,
    pub confidence: Option<f64>,
    /// derivation trace or passage citations
    pub evidence: String,
}

/// Picks the validation pipeline: taxonomy metadata wins, otherwise one
/// classification call; anything unclear falls back to retrieval.
pub fn route(sample: &QASample, taxonomy: &Taxonomy, provider: &Provider) -> Route {
    if let Some(topic) = &sample.topic {
        if let Some(def) = taxonomy.topic(topic) {
            match def.validation_route.as_deref() {
                Some("code") => return Route::Code,
                Some("retrieval") => return Route::Retrieval,
                _ => {}
            }
        }
    }
    let mut vars = BTreeMap::new();
    vars.insert("question".to_string(), sample.question.clone());
    let req = CompletionRequest::new(TemplateId::RouteClassify, vars);
    match provider.complete(&req) {
        Ok(c) if c.text.trim().eq_ignore_ascii_case("code") => Route::Code,
        _ => Route::Retrieval,
    }
}

#[derive(Debug, Clone)]
pub struct SandboxOutput {
    pub stdout: String,
    pub stderr: String,
    pub success: bool,
    pub timed_out: bool,
}

/// Runs untrusted derivation scripts in a separate interpreter process
/// under a wall-clock timeout.
#[derive(Debug, Clone)]
pub struct Sandbox {
    pub interpreter: String,
    pub timeout: Duration,
}

impl Default for Sandbox {
    fn default() -> Self {
        Sandbox {
            interpreter: "python3".to_string(),
            timeout: SANDBOX_TIMEOUT,
        }
    }
}

impl Sandbox {
    pub fn run(&self, script: &str) -> Result<SandboxOutput> {
        let mut file = tempfile::NamedTempFile::new()?;
        file.write_all(script.as_bytes())?;
        file.flush()?;
        let mut child = Command::new(&self.interpreter)
            .arg("-I") // isolated mode: no site packages, no env hooks
            .arg(file.path())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Sandbox(format!("cannot start {}: {e}", self.interpreter)))?;
        let start = Instant::now();
        let status = loop {
            match child.try_wait().map_err(|e| Error::Sandbox(e.to_string()))? {
                Some(status) => break Some(status),
                None if start.elapsed() >= self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    break None;
                }
                None => std::thread::sleep(Duration::from_millis(10)),
            }
        };
        let mut stdout = String::new();
        let mut stderr = String::new();
        if let Some(mut out) = child.stdout.take() {
            use std::io::Read;
            let _ = out.read_to_string(&mut stdout);
        }
        if let Some(mut err) = child.stderr.take() {
            use std::io::Read;
            let _ = err.read_to_string(&mut stderr);
        }
        Ok(SandboxOutput {
            stdout,
            stderr,
            success: status.map(|s| s.success()).unwrap_or(false),
            timed_out: status.is_none(),
        })
    }
}

fn parse_number(text: &str) -> Option<f64> {
    text.trim().parse::<f64>().ok()
}

/// Claimed-vs-derived comparison: numeric within tolerance when both
/// sides parse as numbers, exact trimmed match otherwise.
pub fn answers_match(derived: &str, claimed: &str, tolerance: f64) -> bool {
    match (parse_number(derived), parse_number(claimed)) {
        (Some(a), Some(b)) => {
            let diff = (a - b).abs();
            diff <= tolerance || diff <= tolerance * a.abs().max(b.abs())
        }
        _ => derived.trim() == claimed.trim(),
    }
}

fn choices_block(sample: &QASample) -> String {
    sample
        .choices
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {c}", (b'A' + i as u8) as char))
        .collect::<Vec<_>>()
        .join("\n")
}

fn answer_letter(sample: &QASample) -> String {
    ((b'A' + sample.answer_index as u8) as char).to_string()
}

/// Asks the provider for an executable derivation script, runs it, and
/// compares the final printed line against the claimed answer. A match
/// passes; a match against a different choice corrects; no match fails;
/// a script error or timeout is inconclusive.
pub fn check_by_code(
    sample: &QASample,
    sandbox: &Sandbox,
    provider: &Provider,
) -> Result<ValidationResult> {
    let mut vars = BTreeMap::new();
    vars.insert("question".to_string(), sample.question.clone());
    vars.insert("choices_block".to_string(), choices_block(sample));
    vars.insert("correct_answer_letter".to_string(), answer_letter(sample));
    vars.insert(
        "correct_answer_text".to_string(),
        sample.correct_choice.clone(),
    );
    vars.insert(
        "choices_json".to_string(),
        serde_json::to_string(&sample.choices)?,
    );
    let req = CompletionRequest::new(TemplateId::CodeValidation, vars);
    let mut result = ValidationResult {
        sample_id: sample.id.clone(),
        route: Route::Code,
        verdict: Verdict::Inconclusive,
        corrected_answer_index: None,
        confidence: None,
        evidence: String::new(),
    };
    let script = match provider.complete(&req) {
        Ok(c) => match c.code() {
            Some(s) => s.to_string(),
            None => {
                result.evidence = "no executable script in provider output".into();
                return Ok(result);
            }
        },
        Err(Error::Format { raw, .. }) => {
            result.evidence = format!("unparseable script: {raw}");
            return Ok(result);
        }
        Err(e) => return Err(e),
    };
    let out = sandbox.run(&script)?;
    if out.timed_out {
        result.evidence = "derivation script timed out".into();
        return Ok(result);
    }
    if !out.success {
        result.evidence = format!("derivation script failed: {}", out.stderr.trim());
        return Ok(result);
    }
    let derived = out
        .stdout
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("")
        .trim()
        .to_string();
    if derived.is_empty() {
        result.evidence = "derivation script printed nothing".into();
        return Ok(result);
    }
    result.evidence = format!("derived answer: {derived}");
    if answers_match(&derived, &sample.correct_choice, NUMERIC_TOLERANCE) {
        result.verdict = Verdict::Pass;
    } else if let Some(idx) = sample
        .choices
        .iter()
        .position(|c| answers_match(&derived, c, NUMERIC_TOLERANCE))
    {
        result.verdict = Verdict::Corrected;
        result.corrected_answer_index = Some(idx);
    } else {
        result.verdict = Verdict::Fail;
    }
    Ok(result)
}

/// Term-frequency fallback: top 5 tokens longer than two characters,
/// most frequent first, earlier first appearance breaking ties.
fn tf_keywords(question: &str, k: usize) -> Vec<String> {
    let mut counts: Vec<(String, usize)> = Vec::new();
    for tok in question
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.len() > 2)
    {
        match counts.iter_mut().find(|(t, _)| t == tok) {
            Some((_, n)) => *n += 1,
            None => counts.push((tok.to_string(), 1)),
        }
    }
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].1.cmp(&counts[a].1).then(a.cmp(&b)));
    order
        .into_iter()
        .take(k)
        .map(|i| counts[i].0.clone())
        .collect()
}

/// One to eight lowercased, deduplicated keywords; the provider's
/// extraction with a term-frequency fallback.
pub fn extract_keywords(question: &str, provider: &Provider) -> Result<Vec<String>> {
    if question.trim().is_empty() {
        return Err(Error::Argument("cannot extract keywords from empty text".into()));
    }
    let mut vars = BTreeMap::new();
    vars.insert("question".to_string(), question.to_string());
    let req = CompletionRequest::new(TemplateId::KeywordExtract, vars);
    let mut keywords: Vec<String> = Vec::new();
    if let Ok(c) = provider.complete(&req) {
        for k in c.text.split(',') {
            let k = k.trim().to_lowercase();
            if !k.is_empty() && !keywords.contains(&k) {
                keywords.push(k);
            }
        }
    }
    if keywords.is_empty() {
        keywords = tf_keywords(question, 5);
    }
    keywords.truncate(8);
    if keywords.is_empty() {
        return Err(Error::Argument("no keywords derivable from question".into()));
    }
    Ok(keywords)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub title: String,
    pub text: String,
}

/// Stable identity of a keyword set, independent of order and case.
pub fn keyword_hash(keywords: &[String]) -> String {
    let mut sorted: Vec<String> = keywords.iter().map(|k| k.to_lowercase()).collect();
    sorted.sort();
    let mut buf = Vec::new();
    for k in sorted {
        buf.extend_from_slice(k.as_bytes());
        buf.push(0x1f);
    }
    format!("{:016x}", fnv1a64(&buf))
}

pub trait Retriever {
    fn search(&self, keywords: &[String]) -> Result<Vec<Passage>>;
}

/// Offline passage source: a JSON map from keyword-set hash to
/// passages, shipped with the test fixtures.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FixtureRetriever {
    pub passages: BTreeMap<String, Vec<Passage>>,
}

impl FixtureRetriever {
    pub fn load(path: &std::path::Path) -> Result<FixtureRetriever> {
        let raw = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&raw)?)
    }

    pub fn insert(&mut self, keywords: &[String], passages: Vec<Passage>) {
        self.passages.insert(keyword_hash(keywords), passages);
    }
}

impl Retriever for FixtureRetriever {
    fn search(&self, keywords: &[String]) -> Result<Vec<Passage>> {
        Ok(self
            .passages
            .get(&keyword_hash(keywords))
            .cloned()
            .unwrap_or_default())
    }
}

/// Live passage source speaking a JSON search API; every call hits the
/// network through the transport.
pub struct JsonSearchRetriever<T: Transport> {
    pub transport: T,
    pub base_url: String,
}

impl<T: Transport> Retriever for JsonSearchRetriever<T> {
    fn search(&self, keywords: &[String]) -> Result<Vec<Passage>> {
        let body = serde_json::json!({ "query": keywords.join(" "), "limit": 3 });
        let resp = self
            .transport
            .post_json(&format!("{}/search", self.base_url), &[], &body)?;
        let mut out = Vec::new();
        for item in resp["results"].as_array().into_iter().flatten().take(3) {
            out.push(Passage {
                title: item["title"].as_str().unwrap_or_default().to_string(),
                text: item["text"].as_str().unwrap_or_default().to_string(),
            });
        }
        Ok(out)
    }
}

/// Top passages for the keyword set; a miss is an empty list plus a
/// warning, and verification proceeds without evidence.
pub fn retrieve_passages(
    keywords: &[String],
    retriever: &dyn Retriever,
) -> Result<(Vec<Passage>, Vec<String>)> {
    let mut passages = retriever.search(keywords)?;
    passages.truncate(3);
    let warnings = if passages.is_empty() {
        vec![format!("no passages for keywords {keywords:?}")]
    } else {
        Vec::new()
    };
    Ok((passages, warnings))
}

/// Judges the claimed answer against retrieved evidence. A truthful
/// verdict passes; an untruthful one corrects only above the confidence
/// threshold and only toward an existing choice; anything weaker is
/// inconclusive.
pub fn verify_factual(
    sample: &QASample,
    passages: &[Passage],
    provider: &Provider,
) -> Result<ValidationResult> {
    let summaries = if passages.is_empty() {
        "(no passages retrieved; rely on your own knowledge)".to_string()
    } else {
        passages
            .iter()
            .map(|p| format!("[{}] {}", p.title, p.text))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let mut vars = BTreeMap::new();
    vars.insert("question".to_string(), sample.question.clone());
    vars.insert(
        "subject".to_string(),
        sample.topic.clone().unwrap_or_else(|| "general".into()),
    );
    vars.insert("choices_block".to_string(), choices_block(sample));
    vars.insert("correct_answer_letter".to_string(), answer_letter(sample));
    vars.insert(
        "correct_answer_text".to_string(),
        sample.correct_choice.clone(),
    );
    vars.insert("summaries_text".to_string(), summaries);
    let req = CompletionRequest::new(TemplateId::RagValidation, vars);
    let mut result = ValidationResult {
        sample_id: sample.id.clone(),
        route: Route::Retrieval,
        verdict: Verdict::Inconclusive,
        corrected_answer_index: None,
        confidence: None,
        evidence: passages
            .iter()
            .map(|p| p.title.clone())
            .collect::<Vec<_>>()
            .join(", "),
    };
    let verdict = match provider.complete(&req) {
        Ok(c) => match c.json() {
            Some(v) => v.clone(),
            None => return Ok(result),
        },
        Err(Error::Format { .. }) => return Ok(result),
        Err(e) => return Err(e),
    };
    let confidence = verdict["confidence"].as_f64().unwrap_or(0.0);
    result.confidence = Some(confidence);
    if verdict["original_is_truthful"].as_bool() == Some(true) {
        result.verdict = Verdict::Pass;
        return Ok(result);
    }
    if confidence < CONFIDENCE_THRESHOLD {
        return Ok(result); // flagged for review, no mutation
    }
    let selected = verdict["selected_answer"].as_str().unwrap_or("").trim();
    let idx = selected
        .chars()
        .next()
        .filter(|c| selected.len() == 1 && c.is_ascii_uppercase())
        .map(|c| (c as u8 - b'A') as usize)
        .filter(|&i| i < sample.choices.len())
        .or_else(|| sample.choices.iter().position(|c| c == selected));
    match idx {
        Some(i) => {
            result.verdict = Verdict::Corrected;
            result.corrected_answer_index = Some(i);
        }
        None => result.verdict = Verdict::Fail,
    }
    Ok(result)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub passed: usize,
    pub corrected: usize,
    pub failed: usize,
    pub inconclusive: usize,
    pub rejected: Vec<String>,
    /// corrected / (corrected + failed) among flagged samples
    pub correction_ratio: Option<f64>,
}

/// Commits corrected verdicts; everything else leaves its sample
/// untouched. Out-of-range corrections are rejected and logged.
pub fn apply_corrections(
    dataset: &mut Dataset,
    results: &[ValidationResult],
) -> Result<CorrectionReport> {
    let mut report = CorrectionReport::default();
    for r in results {
        match r.verdict {
            Verdict::Pass => report.passed += 1,
            Verdict::Fail => report.failed += 1,
            Verdict::Inconclusive => report.inconclusive += 1,
            Verdict::Corrected => {
                let Some(sample) = dataset.get_mut(&r.sample_id) else {
                    report.rejected.push(format!("{}: unknown sample", r.sample_id));
                    continue;
                };
                match r.corrected_answer_index {
                    Some(idx) if idx < sample.choices.len() => {
                        sample.answer_index = idx;
                        sample.correct_choice = sample.choices[idx].clone();
                        sample.provenance = Provenance::Corrected;
                        report.corrected += 1;
                    }
                    other => {
                        report
                            .rejected
                            .push(format!("{}: corrected index {other:?} out of range", r.sample_id));
                    }
                }
            }
        }
    }
    let flagged = report.corrected + report.failed;
    if flagged > 0 {
        report.correction_ratio = Some(report.corrected as f64 / flagged as f64);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Band, TopicDef};
    use crate::provider::mock::{MockFixtures, MockProvider};

    fn provider(seed: u64) -> Provider {
        Provider::new(Box::new(MockProvider::new(seed)))
    }

    fn taxonomy() -> Taxonomy {
        Taxonomy::new(vec![
            TopicDef {
                id: "arith".into(),
                name: "arithmetic".into(),
                description: String::new(),
                validation_route: Some("code".into()),
            },
            TopicDef {
                id: "hist".into(),
                name: "history".into(),
                description: String::new(),
                validation_route: Some("retrieval".into()),
            },
            TopicDef {
                id: "misc".into(),
                name: "misc".into(),
                description: String::new(),
                validation_route: None,
            },
        ])
        .unwrap()
    }

    fn sample(id: &str, topic: &str, answer: usize) -> QASample {
        let choices = vec!["12".to_string(), "14".to_string(), "16".to_string(), "18".to_string()];
        QASample {
            id: id.to_string(),
            question: format!("question {id} about the annual total"),
            correct_choice: choices[answer].clone(),
            choices,
            answer_index: answer,
            topic: Some(topic.to_string()),
            difficulty: Some(Band::Medium),
            elo: None,
            provenance: Provenance::Original,
            distractor_types: None,
        }
    }

    #[test]
    fn routing_follows_taxonomy_then_fixture_then_default() {
        let tax = taxonomy();
        let p = provider(1);
        assert_eq!(route(&sample("s0", "arith", 0), &tax, &p), Route::Code);
        assert_eq!(route(&sample("s1", "hist", 0), &tax, &p), Route::Retrieval);
        // no taxonomy route: classifier fixture decides
        let mut fx = MockFixtures::default();
        let s = sample("s2", "misc", 0);
        fx.route_of.insert(s.question.clone(), "code".into());
        let p2 = Provider::new(Box::new(MockProvider::with_fixtures(1, fx)));
        assert_eq!(route(&s, &tax, &p2), Route::Code);
        // unknown output: safe default
        assert_eq!(route(&sample("s3", "misc", 0), &tax, &p), Route::Retrieval);
    }

    #[test]
    fn sandbox_runs_and_captures_stdout() {
        let out = Sandbox::default().run("print(6 * 7)").unwrap();
        assert!(out.success);
        assert_eq!(out.stdout.trim(), "42");
    }

    #[test]
    fn sandbox_kills_runaway_script() {
        let sb = Sandbox {
            timeout: Duration::from_millis(300),
            ..Sandbox::default()
        };
        let start = Instant::now();
        let out = sb.run("while True:\n    pass").unwrap();
        assert!(out.timed_out);
        assert!(start.elapsed() < Duration::from_secs(5));
    }

    #[test]
    fn sandbox_reports_script_errors() {
        let out = Sandbox::default().run("raise ValueError('boom')").unwrap();
        assert!(!out.success);
        assert!(!out.timed_out);
        assert!(out.stderr.contains("boom"));
    }

    #[test]
    fn numeric_match_uses_tolerance() {
        assert!(answers_match("0.30000000001", "0.3", 1e-6));
        assert!(!answers_match("0.301", "0.3", 1e-6));
        assert!(answers_match("1e9", "1000000000.5", 1e-6)); // relative
        assert!(answers_match("paris", " paris ", 1e-6));
        assert!(!answers_match("paris", "rome", 1e-6));
    }

    #[test]
    fn code_check_passes_when_script_prints_claimed_answer() {
        let p = provider(2);
        let s = sample("s0", "arith", 1);
        let r = check_by_code(&s, &Sandbox::default(), &p).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert_eq!(r.corrected_answer_index, None);
    }

    #[test]
    fn code_check_corrects_planted_wrong_label() {
        // answer key says choice 2 is true but the sample claims 0
        let mut fx = MockFixtures::default();
        let s = sample("s0", "arith", 0);
        fx.answer_key.insert(s.question.clone(), 2);
        let p = Provider::new(Box::new(MockProvider::with_fixtures(2, fx)));
        let r = check_by_code(&s, &Sandbox::default(), &p).unwrap();
        assert_eq!(r.verdict, Verdict::Corrected);
        assert_eq!(r.corrected_answer_index, Some(2));
    }

    #[test]
    fn code_check_inconclusive_on_unparseable_script() {
        let mut fx = MockFixtures::default();
        fx.fail_templates.insert("code_validation".into());
        let p = Provider::new(Box::new(MockProvider::with_fixtures(2, fx)));
        let r = check_by_code(&sample("s0", "arith", 0), &Sandbox::default(), &p).unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn keywords_come_from_fixture_when_present() {
        let mut fx = MockFixtures::default();
        fx.keywords_of.insert(
            "who founded the observatory".into(),
            vec!["Observatory".into(), "founder".into()],
        );
        let p = Provider::new(Box::new(MockProvider::with_fixtures(2, fx)));
        let ks = extract_keywords("who founded the observatory", &p).unwrap();
        assert_eq!(ks, vec!["observatory".to_string(), "founder".to_string()]);
    }

    #[test]
    fn keyword_fallback_matches_hand_counted_frequencies() {
        // 20 words, hand-counted: the 3, river 3, delta 2, basin 2,
        // flow 2, singletons after; "on"/"it" drop below the 3-char
        // floor. top 5 by count then first appearance:
        let q = "the river delta holds the river basin while the river \
                 flow moves delta sediment across basin flow paths on it";
        let mut fx = MockFixtures::default();
        fx.fail_templates.insert("keyword_extract".into());
        let p = Provider::new(Box::new(MockProvider::with_fixtures(2, fx)));
        let ks = extract_keywords(q, &p).unwrap();
        assert_eq!(ks, vec!["the", "river", "delta", "basin", "flow"]);
    }

    #[test]
    fn empty_question_is_an_argument_error() {
        assert!(extract_keywords("  ", &provider(2)).is_err());
    }

    #[test]
    fn fixture_cache_hit_and_miss() {
        let mut retr = FixtureRetriever::default();
        let keys = vec!["observatory".to_string(), "founder".to_string()];
        retr.insert(
            &keys,
            vec![Passage {
                title: "Old Observatory".into(),
                text: "founded in 1870 by ...".into(),
            }],
        );
        let (hit, warn) = retrieve_passages(&keys, &retr).unwrap();
        assert_eq!(hit.len(), 1);
        assert!(warn.is_empty());
        assert_eq!(hit[0].title, "Old Observatory");
        // key order and case do not matter
        let reordered = vec!["Founder".to_string(), "OBSERVATORY".to_string()];
        assert_eq!(retrieve_passages(&reordered, &retr).unwrap().0.len(), 1);
        let (miss, warn) = retrieve_passages(&["nothing".to_string()], &retr).unwrap();
        assert!(miss.is_empty());
        assert_eq!(warn.len(), 1);
    }

    #[test]
    fn live_retriever_takes_top_three_from_recorded_server() {
        use crate::provider::http::RecordedTransport;
        let transport = RecordedTransport::new(vec![serde_json::json!({
            "results": [
                {"title": "t1", "text": "p1"},
                {"title": "t2", "text": "p2"},
                {"title": "t3", "text": "p3"},
                {"title": "t4", "text": "p4"},
            ]
        })]);
        let retr = JsonSearchRetriever {
            transport,
            base_url: "http://search.test".to_string(),
        };
        let (hits, _) = retrieve_passages(&["x".to_string()], &retr).unwrap();
        assert_eq!(hits.len(), 3);
        assert_eq!(hits[0].title, "t1");
    }

    #[test]
    fn factual_pass_and_correction_and_threshold() {
        let tax_passages = vec![Passage {
            title: "Evidence".into(),
            text: "supporting text".into(),
        }];
        // truthful claim
        let s_ok = sample("ok", "hist", 1);
        let mut fx = MockFixtures::default();
        fx.answer_key.insert(s_ok.question.clone(), 1);
        // wrong claim, high confidence: corrected to the key
        let s_fix = sample("fix", "hist", 0);
        fx.answer_key.insert(s_fix.question.clone(), 2);
        // wrong claim, low confidence: left alone
        let s_low = sample("low", "hist", 0);
        fx.answer_key.insert(s_low.question.clone(), 2);
        fx.low_confidence.insert(s_low.question.clone());
        let p = Provider::new(Box::new(MockProvider::with_fixtures(2, fx)));

        let r_ok = verify_factual(&s_ok, &tax_passages, &p).unwrap();
        assert_eq!(r_ok.verdict, Verdict::Pass);
        assert_eq!(r_ok.confidence, Some(0.9));

        let r_fix = verify_factual(&s_fix, &tax_passages, &p).unwrap();
        assert_eq!(r_fix.verdict, Verdict::Corrected);
        assert_eq!(r_fix.corrected_answer_index, Some(2));

        let r_low = verify_factual(&s_low, &tax_passages, &p).unwrap();
        assert_eq!(r_low.verdict, Verdict::Inconclusive);
        assert_eq!(r_low.corrected_answer_index, None);
    }

    #[test]
    fn factual_unparseable_verdict_is_inconclusive() {
        let mut fx = MockFixtures::default();
        fx.fail_templates.insert("rag_validation".into());
        let p = Provider::new(Box::new(MockProvider::with_fixtures(2, fx)));
        let r = verify_factual(&sample("s0", "hist", 0), &[], &p).unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
    }

    fn dataset(samples: Vec<QASample>) -> Dataset {
        Dataset::new(samples, taxonomy()).unwrap()
    }

    fn result(id: &str, verdict: Verdict, idx: Option<usize>) -> ValidationResult {
        ValidationResult {
            sample_id: id.to_string(),
            route: Route::Retrieval,
            verdict,
            corrected_answer_index: idx,
            confidence: Some(0.9),
            evidence: String::new(),
        }
    }

    #[test]
    fn corrections_commit_only_corrected_verdicts() {
        let mut ds = dataset(vec![
            sample("a", "hist", 0),
            sample("b", "hist", 0),
            sample("c", "hist", 0),
        ]);
        let results = vec![
            result("a", Verdict::Pass, None),
            result("b", Verdict::Corrected, Some(3)),
            result("c", Verdict::Fail, None),
        ];
        let report = apply_corrections(&mut ds, &results).unwrap();
        assert_eq!(report.corrected, 1);
        assert_eq!(report.failed, 1);
        assert_eq!(report.correction_ratio, Some(0.5));
        let b = ds.get("b").unwrap();
        assert_eq!(b.answer_index, 3);
        assert_eq!(b.correct_choice, "18");
        assert_eq!(b.provenance, Provenance::Corrected);
        let a = ds.get("a").unwrap();
        assert_eq!(a.provenance, Provenance::Original);
        assert_eq!(a.answer_index, 0);
    }

    #[test]
    fn out_of_range_correction_is_rejected() {
        let mut ds = dataset(vec![sample("a", "hist", 0)]);
        let report =
            apply_corrections(&mut ds, &[result("a", Verdict::Corrected, Some(9))]).unwrap();
        assert_eq!(report.corrected, 0);
        assert_eq!(report.rejected.len(), 1);
        assert_eq!(ds.get("a").unwrap().answer_index, 0);
    }

    #[test]
    fn no_flagged_samples_leaves_dataset_unchanged() {
        let mut ds = dataset(vec![sample("a", "hist", 0)]);
        let before = ds.clone();
        let report = apply_corrections(&mut ds, &[result("a", Verdict::Pass, None)]).unwrap();
        assert_eq!(report.correction_ratio, None);
        assert_eq!(ds, before);
    }

    #[test]
    fn planted_error_fixture_reaches_perfect_correction_ratio() {
        // 20 samples with deliberately wrong labels; the validator knows
        // the key for all of them, so every flagged sample is corrected
        let mut fx = MockFixtures::default();
        let mut samples = Vec::new();
        for i in 0..20 {
            let s = sample(&format!("p{i}"), "hist", 0);
            fx.answer_key.insert(s.question.clone(), 2);
            samples.push(s);
        }
        let p = Provider::new(Box::new(MockProvider::with_fixtures(2, fx)));
        let mut ds = dataset(samples.clone());
        let mut results = Vec::new();
        for s in &samples {
            results.push(verify_factual(s, &[], &p).unwrap());
        }
        let report = apply_corrections(&mut ds, &results).unwrap();
        assert_eq!(report.corrected, 20);
        assert_eq!(report.correction_ratio, Some(1.0));
    }

    #[test]
    fn broken_answer_fixture_yields_fail_and_ninety_five_percent_ratio() {
        // 19 of 20 planted errors correctable, one flagged but
        // uncorrectable: ratio 0.95
        let mut fx = MockFixtures::default();
        let mut samples = Vec::new();
        for i in 0..20 {
            let s = sample(&format!("p{i}"), "hist", 0);
            fx.answer_key.insert(s.question.clone(), 2);
            if i == 0 {
                fx.broken_answers.insert(s.question.clone());
            }
            samples.push(s);
        }
        let p = Provider::new(Box::new(MockProvider::with_fixtures(2, fx)));
        let mut ds = dataset(samples.clone());
        let mut results = Vec::new();
        for s in &samples {
            results.push(verify_factual(s, &[], &p).unwrap());
        }
        let report = apply_corrections(&mut ds, &results).unwrap();
        assert_eq!(report.corrected, 19);
        assert_eq!(report.failed, 1);
        assert_eq!(report.correction_ratio, Some(0.95));
    }
}
