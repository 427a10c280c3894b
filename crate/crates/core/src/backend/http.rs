use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::cache::{CacheKey, ResponseCache};
use super::{scores_from_logits, scores_from_top_logprobs, BackendConfig, BackendError, OptionScores, ScoreBackend};
use crate::prompting::PromptText;

/// Response shape spoken by the remote endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WireFormat {
    /// OpenAI-style chat completion with `logprobs` / `top_logprobs` on the first token.
    #[default]
    ChatLogprobs,
    /// Local inference server returning first-position logits as
    /// `{"first_token_logits": {"A": 5.9, "B": 6.2, ...}}`.
    FullLogits,
}

impl WireFormat {
    /// Converts a raw response body into option scores.
    pub fn extract(self, raw: &Value, allow_floor: bool, backend: &str) -> Result<OptionScores, BackendError> {
        match self {
            WireFormat::ChatLogprobs => {
                let candidates = chat_candidates(raw)?;
                let record = candidates_json(&candidates);
                scores_from_top_logprobs(&candidates, allow_floor, backend, record)
            }
            WireFormat::FullLogits => {
                let table = raw
                    .get("first_token_logits")
                    .and_then(Value::as_object)
                    .ok_or_else(|| {
                        BackendError::Config("server did not return `first_token_logits`; it cannot serve full-logit requests".into())
                    })?;
                let mut candidates = Vec::with_capacity(table.len());
                for (tok, v) in table {
                    let s = v
                        .as_f64()
                        .ok_or_else(|| BackendError::Protocol(format!("logit for {tok:?} is not a number")))?;
                    candidates.push((tok.clone(), s));
                }
                let record = candidates_json(&candidates);
                scores_from_logits(&candidates, backend, record)
            }
        }
    }
}

fn candidates_json(candidates: &[(String, f64)]) -> Value {
    Value::Array(candidates.iter().map(|(t, s)| json!([t, s])).collect())
}

fn chat_candidates(raw: &Value) -> Result<Vec<(String, f64)>, BackendError> {
    let choice = raw
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
    let logprobs = match choice.get("logprobs") {
        Some(v) if !v.is_null() => v,
        _ => {
            return Err(BackendError::Config(
                "backend returned no first-token log-probabilities; it must support logprobs with greedy decoding".into(),
            ))
        }
    };
    // chat-completions layout
    if let Some(first) = logprobs.get("content").and_then(|c| c.get(0)) {
        let top = first
            .get("top_logprobs")
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::Protocol("first token has no top_logprobs".into()))?;
        let mut out = Vec::with_capacity(top.len());
        for entry in top {
            let token = entry
                .get("token")
                .and_then(Value::as_str)
                .ok_or_else(|| BackendError::Protocol("top_logprobs entry without token".into()))?;
            let lp = entry
                .get("logprob")
                .and_then(Value::as_f64)
                .ok_or_else(|| BackendError::Protocol("top_logprobs entry without logprob".into()))?;
            out.push((token.to_string(), lp));
        }
        return Ok(out);
    }
    // legacy completions layout: top_logprobs is a list of {token: logprob} maps
    if let Some(first) = logprobs
        .get("top_logprobs")
        .and_then(|t| t.get(0))
        .and_then(Value::as_object)
    {
        let mut out = Vec::with_capacity(first.len());
        for (tok, v) in first {
            let lp = v
                .as_f64()
                .ok_or_else(|| BackendError::Protocol(format!("logprob for {tok:?} is not a number")))?;
            out.push((tok.clone(), lp));
        }
        return Ok(out);
    }
    Err(BackendError::Protocol("unrecognized logprobs layout".into()))
}

/// Counting semaphore that admits waiters in arrival order.
struct FairLimiter {
    cap: usize,
    state: Mutex<LimiterState>,
    cv: Condvar,
}

struct LimiterState {
    next_ticket: u64,
    serving: u64,
    in_flight: usize,
}

struct Permit<'a>(&'a FairLimiter);

impl FairLimiter {
    fn new(cap: usize) -> Self {
        Self {
            cap,
            state: Mutex::new(LimiterState {
                next_ticket: 0,
                serving: 0,
                in_flight: 0,
            }),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut s = self.state.lock().unwrap();
        let ticket = s.next_ticket;
        s.next_ticket += 1;
        while s.serving != ticket || s.in_flight >= self.cap {
            s = self.cv.wait(s).unwrap();
        }
        s.serving += 1;
        s.in_flight += 1;
        self.cv.notify_all();
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut s = self.0.state.lock().unwrap();
        s.in_flight -= 1;
        self.0.cv.notify_all();
    }
}

/// HTTP client for a chat-completion endpoint, with an optional response cache in front.
///
/// Cached prompts never touch the network, so a warm cache replays a whole run offline.
pub struct HttpBackend {
    config: BackendConfig,
    config_digest: String,
    agent: ureq::Agent,
    cache: Option<ResponseCache>,
    limiter: FairLimiter,
    network_calls: AtomicUsize,
    max_observed_in_flight: AtomicUsize,
    current_in_flight: AtomicUsize,
}

impl HttpBackend {
    pub fn new(config: BackendConfig, cache: Option<ResponseCache>) -> Result<Self, BackendError> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            config_digest: config.digest(),
            limiter: FairLimiter::new(config.max_in_flight),
            config,
            agent,
            cache,
            network_calls: AtomicUsize::new(0),
            max_observed_in_flight: AtomicUsize::new(0),
            current_in_flight: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    /// Number of HTTP requests issued (including retries).
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    /// Highest number of concurrent requests seen so far.
    pub fn max_observed_in_flight(&self) -> usize {
        self.max_observed_in_flight.load(Ordering::SeqCst)
    }

    pub fn cache_key(&self, prompt: &PromptText) -> CacheKey {
        CacheKey {
            prompt_digest: prompt.digest(),
            model: self.config.model.clone(),
            config_digest: self.config_digest.clone(),
        }
    }

    pub fn request_body(&self, prompt: &PromptText) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": prompt.messages,
            "temperature": 0,
            "max_tokens": 1,
            "logprobs": true,
            "top_logprobs": self.config.top_candidates,
        });
        if self.config.wire == WireFormat::FullLogits {
            body["return_first_token_logits"] = json!(true);
        }
        body
    }

    fn token(&self) -> Result<Option<String>, BackendError> {
        match &self.config.token_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| BackendError::Config(format!("environment variable {var} is not set"))),
        }
    }

    fn send_once(&self, body: &Value, token: Option<&str>) -> Result<Value, BackendError> {
        self.network_calls.fetch_add(1, Ordering::SeqCst);
        let _permit = self.limiter.acquire();
        let now = self.current_in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_observed_in_flight.fetch_max(now, Ordering::SeqCst);
        let result = (|| {
            let mut req = self.agent.post(&self.config.endpoint);
            if let Some(t) = token {
                req = req.header("Authorization", &format!("Bearer {t}"));
            }
            let mut resp = req.send_json(body).map_err(|e| BackendError::Transport {
                attempts: 1,
                message: e.to_string(),
            })?;
            let status = resp.status().as_u16();
            let text = resp.body_mut().read_to_string().map_err(|e| BackendError::Transport {
                attempts: 1,
                message: e.to_string(),
            })?;
            if status == 429 || status >= 500 {
                return Err(BackendError::Transport {
                    attempts: 1,
                    message: format!("HTTP {status}: {text}"),
                });
            }
            if !(200..300).contains(&status) {
                return Err(BackendError::Http { status, body: text });
            }
            serde_json::from_str(&text).map_err(|e| BackendError::Protocol(format!("invalid JSON body: {e}")))
        })();
        self.current_in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }

    /// Posts the prompt, retrying transport failures with exponential backoff.
    pub fn fetch_raw(&self, prompt: &PromptText) -> Result<Value, BackendError> {
        let token = self.token()?;
        let body = self.request_body(prompt);
        let policy = &self.config.retry;
        let mut attempt = 1;
        loop {
            match self.send_once(&body, token.as_deref()) {
                Ok(v) => return Ok(v),
                Err(BackendError::Transport { message, .. }) if attempt < policy.max_attempts => {
                    let wait = policy.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                    log::warn!("attempt {attempt} failed ({message}); retrying in {wait} ms");
                    thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
                Err(BackendError::Transport { message, .. }) => {
                    return Err(BackendError::Transport {
                        attempts: attempt,
                        message,
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

impl ScoreBackend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}:{}", self.config.model, &self.config_digest[..12])
    }

    fn query(&self, prompt: &PromptText) -> Result<OptionScores, BackendError> {
        let key = self.cache_key(prompt);
        let raw = match self.cache.as_ref().and_then(|c| c.get(&key)) {
            Some(raw) => raw,
            None => {
                let raw = self.fetch_raw(prompt)?;
                // validate before caching so a bad response is never replayed
                self.config.wire.extract(&raw, self.config.allow_floor, &self.id())?;
                if let Some(c) = &self.cache {
                    c.insert(key, raw.clone())?;
                }
                raw
            }
        };
        self.config.wire.extract(&raw, self.config.allow_floor, &self.id())
    }
}
