//! HTTP client for a local chat-completion server (Ollama-compatible).
//!
//! Chat: `POST {"model", "messages": [...], "stream": false, "options": {"temperature"}}`,
//! answer at `message.content`. Embeddings: `POST {"model", "prompt"}`, vector at
//! `embedding`.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::embed::{Embedder, EmbeddingVector};
use super::{BackendError, CellContext, ChatBackend, ChatRequest};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): base * 2^(retry-1), capped.
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry.saturating_sub(1));
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    fn run<T>(
        &self,
        mut attempt: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, (u32, BackendError)> {
        let mut tries = 0;
        loop {
            tries += 1;
            match attempt() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_transient() && tries <= self.max_retries => {
                    let wait = self.delay(tries);
                    log::warn!("attempt {tries} failed: {e}; retrying in {wait:?}");
                    std::thread::sleep(wait);
                }
                Err(e) => return Err((tries, e)),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireConfig {
    pub chat_url: String,
    pub embed_url: String,
    pub model: String,
    pub embed_model: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    /// Send instruction and chunk as one user message instead of system + user.
    pub single_message: bool,
    /// Refuse requests whose instruction + payload exceed this many characters.
    pub max_prompt_chars: Option<usize>,
}

impl Default for WireConfig {
    fn default() -> Self {
        Self {
            chat_url: "http://localhost:11434/api/chat".into(),
            embed_url: "http://localhost:11434/api/embeddings".into(),
            model: "qwen2:7b".into(),
            embed_model: "gritlm".into(),
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
            max_in_flight: 4,
            single_message: false,
            max_prompt_chars: None,
        }
    }
}

/// Counting semaphore bounding concurrent requests.
struct InFlight {
    used: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            used: Mutex::new(0),
            freed: Condvar::new(),
            limit: limit.max(1),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().expect("semaphore poisoned");
        while *used >= self.limit {
            used = self.freed.wait(used).expect("semaphore poisoned");
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut used = self.0.used.lock().expect("semaphore poisoned");
        *used -= 1;
        self.0.freed.notify_one();
    }
}

fn post_json(
    client: &reqwest::blocking::Client,
    url: &str,
    body: &Value,
) -> Result<Value, BackendError> {
    let resp = client
        .post(url)
        .json(body)
        .send()
        .map_err(|e| BackendError::Transport(e.to_string()))?;
    let status = resp.status();
    let text = resp
        .text()
        .map_err(|e| BackendError::Transport(e.to_string()))?;
    if !status.is_success() {
        return Err(BackendError::Status {
            status: status.as_u16(),
            body: text.chars().take(500).collect(),
        });
    }
    serde_json::from_str(&text).map_err(|e| BackendError::Response(e.to_string()))
}

fn build_client(timeout: Duration) -> Result<reqwest::blocking::Client, BackendError> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| BackendError::Transport(e.to_string()))
}

pub struct WireBackend {
    config: WireConfig,
    client: reqwest::blocking::Client,
    in_flight: InFlight,
}

impl WireBackend {
    pub fn new(config: WireConfig) -> Result<Self, BackendError> {
        Ok(Self {
            client: build_client(config.timeout)?,
            in_flight: InFlight::new(config.max_in_flight),
            config,
        })
    }

    pub fn config(&self) -> &WireConfig {
        &self.config
    }

    /// Request body for one chat call.
    pub fn request_body(&self, request: &ChatRequest) -> Value {
        let model = if request.model_name.is_empty() {
            &self.config.model
        } else {
            &request.model_name
        };
        let messages = if self.config.single_message {
            json!([{"role": "user", "content": format!("{}\n\n{}", request.instruction, request.payload)}])
        } else {
            json!([
                {"role": "system", "content": request.instruction},
                {"role": "user", "content": request.payload},
            ])
        };
        json!({
            "model": model,
            "messages": messages,
            "stream": false,
            "options": {"temperature": request.temperature},
        })
    }

    fn call_once(&self, body: &Value) -> Result<String, BackendError> {
        let _permit = self.in_flight.acquire();
        let value = post_json(&self.client, &self.config.chat_url, body)?;
        value
            .get("message")
            .and_then(|m| m.get("content"))
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Response("missing message.content".into()))
    }
}

impl ChatBackend for WireBackend {
    fn generate(&self, request: &ChatRequest, cell: &CellContext) -> Result<String, BackendError> {
        request.validate()?;
        if let Some(limit) = self.config.max_prompt_chars {
            let n = request.instruction.chars().count() + request.payload.chars().count();
            if n > limit {
                return Err(BackendError::InvalidRequest(format!(
                    "prompt of {n} chars exceeds max_prompt_chars {limit}"
                )));
            }
        }
        let body = self.request_body(request);
        let started = Instant::now();
        let result = self.config.retry.run(|| self.call_once(&body));
        let elapsed = started.elapsed();
        match result {
            Ok(text) => {
                log::info!(
                    "cell {}/{}/{} answered in {} ms",
                    cell.document_id,
                    cell.category_id,
                    cell.chunk_index,
                    elapsed.as_millis()
                );
                Ok(text)
            }
            Err((attempts, last)) => Err(BackendError::Exhausted {
                document_id: cell.document_id.clone(),
                category_id: cell.category_id,
                chunk_index: cell.chunk_index,
                attempts,
                last: Box::new(last),
            }),
        }
    }
}

pub struct WireEmbedder {
    config: WireConfig,
    client: reqwest::blocking::Client,
    in_flight: InFlight,
}

impl WireEmbedder {
    pub fn new(config: WireConfig) -> Result<Self, BackendError> {
        Ok(Self {
            client: build_client(config.timeout)?,
            in_flight: InFlight::new(config.max_in_flight),
            config,
        })
    }
}

impl<T: Scalar> Embedder<T> for WireEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector<T>, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::Embedding("empty text".into()));
        }
        let body = json!({"model": self.config.embed_model, "prompt": text});
        let values = self
            .config
            .retry
            .run(|| {
                let _permit = self.in_flight.acquire();
                let v = post_json(&self.client, &self.config.embed_url, &body)?;
                v.get("embedding")
                    .and_then(Value::as_array)
                    .ok_or_else(|| BackendError::Response("missing embedding".into()))?
                    .iter()
                    .map(|x| {
                        x.as_f64()
                            .map(T::from_f64_lossy)
                            .ok_or_else(|| BackendError::Response("non-numeric embedding".into()))
                    })
                    .collect::<Result<Vec<T>, _>>()
            })
            .map_err(|(_, e)| BackendError::Embedding(e.to_string()))?;
        EmbeddingVector::normalized(values)
    }
}
