//! Collects predictions for a test corpus from a text-generation endpoint.
//!
//! The endpoint is treated as a black box: one JSON POST per prompt, the
//! generated text read back from a configurable field path. Requests run with
//! bounded concurrency, retry transient failures with exponential backoff and
//! jitter, and results come back in input order.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use futures::{StreamExt, TryStreamExt};
use rand::Rng;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;
use velvet_core::alpaca::InstructionPair;
use velvet_core::generation::GenerationParams;
use velvet_core::jsonl::PredictionRecord;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("authentication rejected by endpoint (HTTP {0})")]
    Auth(u16),
    #[error("auth token variable '{0}' is not set")]
    MissingToken(String),
    #[error("invalid endpoint configuration: {0}")]
    Config(String),
    #[error("nothing to generate: input is empty")]
    EmptyInput,
    #[error("HTTP client: {0}")]
    Http(#[from] reqwest::Error),
}

/// Where the prompt and sampling parameters go in the request body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireFormat {
    /// Top-level field carrying the prompt.
    pub prompt_field: String,
    /// Field the sampling parameters are nested under; top level when `None`.
    pub parameters_field: Option<String>,
    /// Dotted path to the generated text in the response, numeric segments
    /// index arrays (`choices.0.text`).
    pub response_path: String,
    /// Top-level field for the model identifier; omitted when `None`.
    pub model_field: Option<String>,
}

impl Default for WireFormat {
    fn default() -> Self {
        WireFormat {
            prompt_field: "inputs".into(),
            parameters_field: Some("parameters".into()),
            response_path: "generated_text".into(),
            model_field: Some("model".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Environment variable holding a bearer token.
    pub auth_env: Option<String>,
    pub timeout: Duration,
    pub max_retries: u32,
    pub max_concurrency: usize,
    pub backoff_base: Duration,
    pub backoff_max: Duration,
    /// Log progress every this many completions; 0 disables.
    pub progress_every: usize,
    pub wire: WireFormat,
    /// Prepended to every prompt when set.
    pub system_instruction: Option<String>,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model: model.into(),
            auth_env: None,
            timeout: Duration::from_secs(60),
            max_retries: 3,
            max_concurrency: 4,
            backoff_base: Duration::from_millis(500),
            backoff_max: Duration::from_secs(30),
            progress_every: 50,
            wire: WireFormat::default(),
            system_instruction: None,
        }
    }

    pub fn check(&self) -> Result<(), ClientError> {
        if self.max_concurrency == 0 {
            return Err(ClientError::Config("max concurrency must be at least 1".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(ClientError::Config(format!(
                "endpoint URL must be http(s): {}",
                self.base_url
            )));
        }
        if self.wire.prompt_field.is_empty() || self.wire.response_path.is_empty() {
            return Err(ClientError::Config("wire format fields must be non-empty".into()));
        }
        Ok(())
    }

    fn token(&self) -> Result<Option<String>, ClientError> {
        match &self.auth_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ClientError::MissingToken(var.clone())),
        }
    }

    /// Delay before retry number `attempt` (0-based): exponential, capped,
    /// scaled by a random factor in [0.5, 1].
    pub fn backoff(&self, attempt: u32) -> Duration {
        let exp = self
            .backoff_base
            .saturating_mul(1u32.checked_shl(attempt).unwrap_or(u32::MAX));
        let capped = exp.min(self.backoff_max);
        capped.mul_f64(rand::rng().random_range(0.5..=1.0))
    }
}

/// Joins system instruction, instruction and (non-empty) input with newlines.
pub fn build_prompt(system: Option<&str>, pair: &InstructionPair) -> String {
    let mut parts: Vec<&str> = Vec::with_capacity(3);
    if let Some(s) = system {
        if !s.is_empty() && s != pair.instruction {
            parts.push(s);
        }
    }
    parts.push(&pair.instruction);
    if !pair.input.is_empty() {
        parts.push(&pair.input);
    }
    parts.join("\n")
}

pub fn request_body(cfg: &EndpointConfig, params: &GenerationParams, prompt: &str) -> Value {
    let sampling = json!({
        "temperature": params.temperature(),
        "top_p": params.top_p(),
        "do_sample": params.do_sample(),
        "max_new_tokens": params.max_new_tokens(),
    });
    let mut body = Map::new();
    body.insert(cfg.wire.prompt_field.clone(), Value::String(prompt.to_string()));
    if let Some(f) = &cfg.wire.model_field {
        body.insert(f.clone(), Value::String(cfg.model.clone()));
    }
    match &cfg.wire.parameters_field {
        Some(f) => {
            body.insert(f.clone(), sampling);
        }
        None => {
            if let Value::Object(m) = sampling {
                body.extend(m);
            }
        }
    }
    Value::Object(body)
}

/// Follows a dotted path; numeric segments index arrays.
pub fn extract_path<'a>(value: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.')
        .filter(|s| !s.is_empty())
        .try_fold(value, |v, seg| match v {
            Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get(i)),
            Value::Object(m) => m.get(seg),
            _ => None,
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub records: Vec<PredictionRecord>,
    /// Requests sent per record, same order as `records`.
    pub attempts: Vec<u32>,
}

impl BatchResult {
    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.error.is_some()).count()
    }
}

enum Outcome {
    Text(String),
    Retry(String),
    Fail(String),
}

async fn send_once(
    client: &reqwest::Client,
    cfg: &EndpointConfig,
    token: Option<&str>,
    body: &Value,
) -> Result<Outcome, ClientError> {
    let mut req = client.post(&cfg.base_url).json(body);
    if let Some(t) = token {
        req = req.bearer_auth(t);
    }
    let resp = match req.send().await {
        Ok(r) => r,
        Err(e) => return Ok(Outcome::Retry(format!("request failed: {e}"))),
    };
    let status = resp.status();
    if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
        return Err(ClientError::Auth(status.as_u16()));
    }
    let text = match resp.text().await {
        Ok(t) => t,
        Err(e) => return Ok(Outcome::Retry(format!("reading body failed: {e}"))),
    };
    if status.is_server_error()
        || status == StatusCode::TOO_MANY_REQUESTS
        || status == StatusCode::REQUEST_TIMEOUT
    {
        return Ok(Outcome::Retry(format!("HTTP {status}")));
    }
    if !status.is_success() {
        return Ok(Outcome::Fail(format!("HTTP {status}: {}", truncate(&text, 200))));
    }
    if text.trim().is_empty() {
        return Ok(Outcome::Fail("empty response body".into()));
    }
    let value: Value = match serde_json::from_str(&text) {
        Ok(v) => v,
        Err(e) => return Ok(Outcome::Fail(format!("response is not JSON: {e}"))),
    };
    match extract_path(&value, &cfg.wire.response_path) {
        Some(Value::String(s)) => Ok(Outcome::Text(s.clone())),
        Some(other) => Ok(Outcome::Fail(format!(
            "'{}' is not a string: {}",
            cfg.wire.response_path,
            truncate(&other.to_string(), 200)
        ))),
        None => Ok(Outcome::Fail(format!(
            "response has no '{}'",
            cfg.wire.response_path
        ))),
    }
}

fn truncate(s: &str, n: usize) -> String {
    match s.char_indices().nth(n) {
        Some((i, _)) => format!("{}…", &s[..i]),
        None => s.to_string(),
    }
}

async fn generate_one(
    client: &reqwest::Client,
    cfg: &EndpointConfig,
    token: Option<&str>,
    params: &GenerationParams,
    pair: &InstructionPair,
) -> Result<(PredictionRecord, u32), ClientError> {
    let prompt = build_prompt(cfg.system_instruction.as_deref(), pair);
    let body = request_body(cfg, params, &prompt);
    let input = if pair.input.is_empty() {
        pair.instruction.clone()
    } else {
        pair.input.clone()
    };
    let mut attempts = 0;
    let mut last_error = String::new();
    while attempts <= cfg.max_retries {
        if attempts > 0 {
            tokio::time::sleep(cfg.backoff(attempts - 1)).await;
        }
        attempts += 1;
        let outcome = tokio::time::timeout(cfg.timeout, send_once(client, cfg, token, &body)).await;
        let outcome = match outcome {
            Ok(r) => r?,
            Err(_) => Outcome::Retry(format!("timed out after {:?}", cfg.timeout)),
        };
        match outcome {
            Outcome::Text(prediction) => {
                log::debug!("attempt {attempts}: ok");
                return Ok((
                    PredictionRecord {
                        input,
                        reference: pair.response.clone(),
                        prediction,
                        error: None,
                    },
                    attempts,
                ));
            }
            Outcome::Fail(e) => {
                log::warn!("attempt {attempts}: {e}");
                last_error = e;
                break;
            }
            Outcome::Retry(e) => {
                log::warn!("attempt {attempts}: {e}");
                last_error = e;
            }
        }
    }
    Ok((
        PredictionRecord {
            input,
            reference: pair.response.clone(),
            prediction: String::new(),
            error: Some(last_error),
        },
        attempts,
    ))
}

/// Generates one prediction per pair. Per-request failures are recorded in
/// the output; an authentication rejection aborts the whole batch.
pub async fn generate_batch(
    cfg: &EndpointConfig,
    params: &GenerationParams,
    pairs: &[InstructionPair],
) -> Result<BatchResult, ClientError> {
    cfg.check()?;
    if pairs.is_empty() {
        return Err(ClientError::EmptyInput);
    }
    let token = cfg.token()?;
    let client = reqwest::Client::builder().build()?;
    let done = AtomicUsize::new(0);
    let total = pairs.len();

    let mut results: Vec<(usize, PredictionRecord, u32)> =
        futures::stream::iter(pairs.iter().enumerate())
            .map(|(i, pair)| {
                let (client, token, done) = (&client, token.as_deref(), &done);
                async move {
                    let (rec, attempts) = generate_one(client, cfg, token, params, pair).await?;
                    let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                    if cfg.progress_every > 0 && (n % cfg.progress_every == 0 || n == total) {
                        log::info!("generated {n}/{total}");
                    }
                    Ok::<_, ClientError>((i, rec, attempts))
                }
            })
            .buffer_unordered(cfg.max_concurrency)
            .try_collect()
            .await?;
    results.sort_by_key(|(i, _, _)| *i);
    let (records, attempts) = results.into_iter().map(|(_, r, a)| (r, a)).unzip();
    Ok(BatchResult { records, attempts })
}
