//! Chat-completion-style HTTP backend, generic over a transport so tests
//! run on recorded responses without touching the network.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::provider::{Backend, CompletionRequest, Embedding, Usage};

/// Count of real network requests issued by this process. The offline
/// test suite asserts this stays at zero.
pub static NETWORK_REQUESTS: AtomicU64 = AtomicU64::new(0);

pub fn network_requests() -> u64 {
    NETWORK_REQUESTS.load(Ordering::SeqCst)
}

pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &Value) -> Result<Value>;
}

/// Real transport over reqwest. Every call counts against the network
/// guard.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new() -> Result<HttpTransport> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(HttpTransport { client })
    }
}

impl Transport for HttpTransport {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &Value) -> Result<Value> {
        NETWORK_REQUESTS.fetch_add(1, Ordering::SeqCst);
        let mut req = self.client.post(url).json(body);
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let resp = req.send().map_err(|e| Error::ProviderUnavailable {
            attempts: 1,
            msg: e.to_string(),
        })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Error::ProviderUnavailable {
                attempts: 1,
                msg: format!("http status {status}"),
            });
        }
        resp.json().map_err(|e| Error::ProviderUnavailable {
            attempts: 1,
            msg: format!("invalid json response: {e}"),
        })
    }
}

/// Record/replay transport: pops one recorded body per request, in order.
#[derive(Default)]
pub struct RecordedTransport {
    responses: Mutex<VecDeque<Value>>,
    pub requests: Mutex<Vec<(String, Value)>>,
}

impl RecordedTransport {
    pub fn new(responses: Vec<Value>) -> RecordedTransport {
        RecordedTransport {
            responses: Mutex::new(responses.into()),
            requests: Mutex::new(Vec::new()),
        }
    }
}

impl Transport for RecordedTransport {
    fn post_json(&self, url: &str, _headers: &[(String, String)], body: &Value) -> Result<Value> {
        self.requests
            .lock()
            .unwrap()
            .push((url.to_string(), body.clone()));
        self.responses
            .lock()
            .unwrap()
            .pop_front()
            .ok_or_else(|| Error::ProviderUnavailable {
                attempts: 1,
                msg: "no recorded response left".into(),
            })
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable carrying the API key.
    pub api_key_env: String,
}

pub struct HttpBackend<T: Transport> {
    transport: T,
    config: HttpConfig,
}

impl<T: Transport> HttpBackend<T> {
    pub fn new(transport: T, config: HttpConfig) -> HttpBackend<T> {
        HttpBackend { transport, config }
    }

    fn headers(&self) -> Vec<(String, String)> {
        let mut h = vec![("Content-Type".to_string(), "application/json".to_string())];
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            h.push(("Authorization".to_string(), format!("Bearer {key}")));
        }
        h
    }
}

impl<T: Transport> Backend for HttpBackend<T> {
    fn complete_once(&self, request: &CompletionRequest, prompt: &str) -> Result<(String, Usage)> {
        let url = format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let resp = self.transport.post_json(&url, &self.headers(), &body)?;
        let text = resp["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| Error::ProviderUnavailable {
                attempts: 1,
                msg: "response missing choices[0].message.content".into(),
            })?
            .to_string();
        let usage = Usage {
            prompt_tokens: resp["usage"]["prompt_tokens"].as_u64().ok_or_else(|| {
                Error::ProviderUnavailable {
                    attempts: 1,
                    msg: "response missing usage.prompt_tokens".into(),
                }
            })?,
            completion_tokens: resp["usage"]["completion_tokens"].as_u64().ok_or_else(|| {
                Error::ProviderUnavailable {
                    attempts: 1,
                    msg: "response missing usage.completion_tokens".into(),
                }
            })?,
        };
        Ok((text, usage))
    }

    fn embed(&self, text: &str) -> Result<Embedding> {
        let url = format!("{}/embeddings", self.config.base_url.trim_end_matches('/'));
        let body = json!({"model": self.config.model, "input": text});
        let resp = self.transport.post_json(&url, &self.headers(), &body)?;
        let vector = resp["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| Error::ProviderUnavailable {
                attempts: 1,
                msg: "response missing data[0].embedding".into(),
            })?
            .iter()
            .map(|v| v.as_f64().unwrap_or(0.0))
            .collect();
        Ok(Embedding(vector))
    }
}
