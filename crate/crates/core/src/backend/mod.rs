//! First-token option scores from an LLM.
//!
//! Every backend answers one question: given a rendered prompt, what scores does the model
//! assign to the tokens `A`, `B` and `C` at the first generated position? The HTTP client
//! speaks the chat-completion shape with top-candidate log-probabilities (or a full-logit
//! variant for local inference servers); the mocks answer from a fixed rule with no I/O.

mod cache;
mod http;
mod mock;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompting::{OptionLetter, PromptText};

pub use cache::{CacheKey, CachedResponse, ResponseCache};
pub use http::{HttpBackend, WireFormat};
pub use mock::{parse_option_mapping, MockBackend, MockRule};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("missing option token {letter:?} in first-token candidates {candidates:?}")]
    MissingOptionToken {
        letter: OptionLetter,
        candidates: Vec<(String, f64)>,
    },
    #[error("backend configuration error: {0}")]
    Config(String),
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("invalid option scores {scores:?}: {reason}")]
    InvalidScores { scores: [f64; 3], reason: &'static str },
    #[error("response cache error: {0}")]
    Cache(String),
    #[error("scripted mock has no entry for prompt digest {0}")]
    ScriptMissing(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport { .. })
    }
}

/// What the three option scores mean numerically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSemantics {
    /// Pre-softmax logits read from the model.
    RawLogit,
    /// Log-probabilities from a top-k candidate list; always ≤ 0.
    LogProbability,
}

impl fmt::Display for ScoreSemantics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreSemantics::RawLogit => "raw_logit",
            ScoreSemantics::LogProbability => "log_probability",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub backend: String,
    /// Letters whose score was substituted by the floor value.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub floored: Vec<OptionLetter>,
    /// The first-token candidate record the scores were read from.
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub raw: Value,
}

impl Provenance {
    pub fn new(backend: impl Into<String>) -> Self {
        Self {
            backend: backend.into(),
            floored: Vec::new(),
            raw: Value::Null,
        }
    }
}

/// Scores for option letters A, B, C.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionScores {
    scores: [f64; 3],
    semantics: ScoreSemantics,
    provenance: Provenance,
}

impl OptionScores {
    pub fn new(scores: [f64; 3], semantics: ScoreSemantics, provenance: Provenance) -> Result<Self, BackendError> {
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(BackendError::InvalidScores {
                scores,
                reason: "scores must be finite",
            });
        }
        if semantics == ScoreSemantics::LogProbability && scores.iter().any(|s| *s > 0.0) {
            return Err(BackendError::InvalidScores {
                scores,
                reason: "log-probabilities must be <= 0",
            });
        }
        Ok(Self {
            scores,
            semantics,
            provenance,
        })
    }

    pub fn raw_logits(scores: [f64; 3]) -> Result<Self, BackendError> {
        Self::new(scores, ScoreSemantics::RawLogit, Provenance::new("literal"))
    }

    pub fn log_probabilities(scores: [f64; 3]) -> Result<Self, BackendError> {
        Self::new(scores, ScoreSemantics::LogProbability, Provenance::new("literal"))
    }

    pub fn scores(&self) -> [f64; 3] {
        self.scores
    }

    pub fn get(&self, letter: OptionLetter) -> f64 {
        self.scores[letter.index()]
    }

    pub fn semantics(&self) -> ScoreSemantics {
        self.semantics
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn is_floored(&self) -> bool {
        !self.provenance.floored.is_empty()
    }
}

/// Anything that can score a prompt's first token. Implementations must be deterministic
/// for a fixed backend state.
pub trait ScoreBackend: Send + Sync {
    fn id(&self) -> String;

    fn query(&self, prompt: &PromptText) -> Result<OptionScores, BackendError>;
}

impl<T: ScoreBackend + ?Sized> ScoreBackend for &T {
    fn id(&self) -> String {
        (**self).id()
    }

    fn query(&self, prompt: &PromptText) -> Result<OptionScores, BackendError> {
        (**self).query(prompt)
    }
}

impl<T: ScoreBackend + ?Sized> ScoreBackend for Box<T> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn query(&self, prompt: &PromptText) -> Result<OptionScores, BackendError> {
        (**self).query(prompt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: Option<String>,
    pub top_candidates: u32,
    pub timeout_secs: f64,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub wire: WireFormat,
    /// Substitute a floor score for letters missing from a top-k list.
    pub allow_floor: bool,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: String::new(),
            token_env: None,
            top_candidates: 20,
            timeout_secs: 60.0,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
            wire: WireFormat::ChatLogprobs,
            allow_floor: true,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.top_candidates < 3 {
            return Err(BackendError::Config("top_candidates must be >= 3".into()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(BackendError::Config("timeout_secs must be > 0".into()));
        }
        if self.max_in_flight < 1 {
            return Err(BackendError::Config("max_in_flight must be >= 1".into()));
        }
        if self.retry.max_attempts < 1 {
            return Err(BackendError::Config("retry.max_attempts must be >= 1".into()));
        }
        if self.model.is_empty() {
            return Err(BackendError::Config("model name is required".into()));
        }
        Ok(())
    }

    /// Digest of the fields that can change a response. Transport settings are excluded.
    pub fn digest(&self) -> String {
        let v = serde_json::json!({
            "wire": self.wire,
            "model": self.model,
            "top_candidates": self.top_candidates,
            "temperature": 0,
            "max_tokens": 1,
        });
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}

impl FromStr for WireFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chat-logprobs" => Ok(WireFormat::ChatLogprobs),
            "full-logits" => Ok(WireFormat::FullLogits),
            other => Err(format!("unknown wire format {other:?}")),
        }
    }
}

fn letter_match(token: &str, letter: OptionLetter) -> Option<bool> {
    let l = letter.as_str();
    if token == l {
        return Some(true);
    }
    let mut chars = token.chars();
    match chars.next() {
        Some(c) if c.is_whitespace() && chars.as_str() == l => Some(false),
        _ => None,
    }
}

/// Picks the score of each option letter out of a candidate list.
///
/// The exact letter wins over its single-leading-whitespace variant. Returns `None` for
/// letters that appear in neither form.
pub fn match_option_tokens(candidates: &[(String, f64)]) -> [Option<f64>; 3] {
    OptionLetter::ALL.map(|letter| {
        let mut exact: Option<f64> = None;
        let mut spaced: Option<f64> = None;
        for (tok, score) in candidates {
            match letter_match(tok, letter) {
                Some(true) => exact = Some(exact.map_or(*score, |e: f64| e.max(*score))),
                Some(false) => spaced = Some(spaced.map_or(*score, |e: f64| e.max(*score))),
                None => {}
            }
        }
        exact.or(spaced)
    })
}

/// Builds log-probability scores from a top-k candidate list, flooring absent letters at
/// (lowest observed log-probability − 1) when `allow_floor` is set.
pub fn scores_from_top_logprobs(
    candidates: &[(String, f64)],
    allow_floor: bool,
    backend: &str,
    raw: Value,
) -> Result<OptionScores, BackendError> {
    let matched = match_option_tokens(candidates);
    let floor = candidates.iter().map(|(_, s)| *s).fold(f64::INFINITY, f64::min) - 1.0;
    let mut scores = [0.0; 3];
    let mut floored = Vec::new();
    for letter in OptionLetter::ALL {
        scores[letter.index()] = match matched[letter.index()] {
            Some(s) => s,
            None if allow_floor && floor.is_finite() => {
                floored.push(letter);
                floor
            }
            None => {
                return Err(BackendError::MissingOptionToken {
                    letter,
                    candidates: candidates.to_vec(),
                })
            }
        };
    }
    OptionScores::new(
        scores,
        ScoreSemantics::LogProbability,
        Provenance {
            backend: backend.to_string(),
            floored,
            raw,
        },
    )
}

/// Builds raw-logit scores from a logit table. Every letter must be present.
pub fn scores_from_logits(candidates: &[(String, f64)], backend: &str, raw: Value) -> Result<OptionScores, BackendError> {
    let matched = match_option_tokens(candidates);
    let mut scores = [0.0; 3];
    for letter in OptionLetter::ALL {
        scores[letter.index()] = matched[letter.index()].ok_or_else(|| BackendError::MissingOptionToken {
            letter,
            candidates: candidates.to_vec(),
        })?;
    }
    OptionScores::new(
        scores,
        ScoreSemantics::RawLogit,
        Provenance {
            backend: backend.to_string(),
            floored: Vec::new(),
            raw,
        },
    )
}
