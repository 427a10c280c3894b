//! From first-token option scores to model judgment distributions.
//!
//! Each (option mapping, explanation batch) pair yields one prompt and one backend query.
//! Scores are turned into option probabilities (plain normalization or temperature
//! softmax), routed to labels through the mapping, and averaged over the full schedule in
//! a fixed order so the result is bit-reproducible.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{BackendError, OptionScores, ScoreBackend, ScoreSemantics};
use crate::data::{ExplanationAnnotation, JudgmentDistribution, NliItem, PairedDataset};
use crate::io::{read_jsonl, write_atomic, IoError};
use crate::prompting::{
    explanation_batches, option_mappings, render_prompt, ExplanationBatch, ExplanationMode, OptionLetter, OptionMapping,
    PromptError, PromptType, TemplateVersion,
};

/// Value substituted for non-positive raw logits under [`NegativePolicy::ClampEpsilon`].
pub const CLAMP_EPSILON: f64 = 1e-6;

pub const DEFAULT_TEMPERATURE: f64 = 20.0;

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("invalid estimation config: {0}")]
    Config(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("backend failed for mapping #{mapping_index} ({mapping}) batch {batch:?}: {source}")]
    Backend {
        mapping_index: usize,
        mapping: String,
        batch: Vec<usize>,
        #[source]
        source: BackendError,
    },
    #[error("non-positive score in {0:?}")]
    NonPositiveScore([f64; 3]),
    #[error("scores {0:?} have no positive mass")]
    DegenerateScores([f64; 3]),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformMethod {
    #[default]
    Normalize,
    Softmax,
}

impl FromStr for TransformMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normalize" | "norm" => Ok(TransformMethod::Normalize),
            "softmax" | "sfmax" => Ok(TransformMethod::Softmax),
            other => Err(format!("unknown transform {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativePolicy {
    Error,
    #[default]
    ClampEpsilon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformConfig {
    pub method: TransformMethod,
    pub temperature: f64,
    pub negative_policy: NegativePolicy,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            method: TransformMethod::Normalize,
            temperature: DEFAULT_TEMPERATURE,
            negative_policy: NegativePolicy::ClampEpsilon,
        }
    }
}

impl TransformConfig {
    pub fn normalize() -> Self {
        Self::default()
    }

    pub fn softmax(temperature: f64) -> Self {
        Self {
            method: TransformMethod::Softmax,
            temperature,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EstimateError> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(EstimateError::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        Ok(())
    }

    /// Applies the configured transform; the flag reports whether clamping fired.
    pub fn apply(&self, scores: &OptionScores) -> Result<([f64; 3], bool), EstimateError> {
        match self.method {
            TransformMethod::Normalize => normalize_scores(scores, self.negative_policy),
            TransformMethod::Softmax => Ok((softmax_scores(scores, self.temperature), false)),
        }
    }
}

/// Divides each score by the sum of scores.
///
/// Log-probabilities are exponentiated first. Raw logits are used as they are, with
/// non-positive components rejected or clamped to [`CLAMP_EPSILON`] per `policy`.
pub fn normalize_scores(scores: &OptionScores, policy: NegativePolicy) -> Result<([f64; 3], bool), EstimateError> {
    let raw = scores.scores();
    let (values, clamped) = match scores.semantics() {
        ScoreSemantics::LogProbability => (raw.map(f64::exp), false),
        ScoreSemantics::RawLogit => {
            if raw.iter().all(|s| *s > 0.0) {
                (raw, false)
            } else {
                match policy {
                    NegativePolicy::Error => return Err(EstimateError::NonPositiveScore(raw)),
                    NegativePolicy::ClampEpsilon => (raw.map(|s| if s > 0.0 { s } else { CLAMP_EPSILON }), true),
                }
            }
        }
    };
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return Err(EstimateError::DegenerateScores(raw));
    }
    Ok((values.map(|v| v / total), clamped))
}

/// Temperature softmax, stabilized by subtracting the maximum score.
pub fn softmax_scores(scores: &OptionScores, temperature: f64) -> [f64; 3] {
    let s = scores.scores();
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = s.map(|x| ((x - max) / temperature).exp());
    let total: f64 = e.iter().sum();
    e.map(|x| x / total)
}

/// Routes option probabilities to labels: the label shown on letter X receives `p[X]`.
pub fn map_to_labels(option_probs: [f64; 3], mapping: &OptionMapping) -> JudgmentDistribution {
    let mut out = [0.0; 3];
    for letter in OptionLetter::ALL {
        out[mapping.label(letter).index()] = option_probs[letter.index()];
    }
    JudgmentDistribution::new(out).expect("a permutation of a simplex point stays on the simplex")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    pub prompt_type: PromptType,
    /// `None` exactly when the prompt type takes no explanations.
    pub mode: Option<ExplanationMode>,
    pub transform: TransformConfig,
    pub mappings: Vec<OptionMapping>,
    #[serde(default)]
    pub template: TemplateVersion,
}

impl EstimationConfig {
    pub fn new(prompt_type: PromptType, mode: Option<ExplanationMode>, transform: TransformConfig) -> Self {
        Self {
            prompt_type,
            mode,
            transform,
            mappings: option_mappings(),
            template: TemplateVersion::V1,
        }
    }

    pub fn validate(&self) -> Result<(), EstimateError> {
        self.transform.validate()?;
        match (self.prompt_type.uses_explanations(), self.mode) {
            (false, Some(m)) => {
                return Err(EstimateError::Config(format!(
                    "{} takes no explanation mode, got {m}",
                    self.prompt_type
                )))
            }
            (true, None) => {
                return Err(EstimateError::Config(format!("{} needs an explanation mode", self.prompt_type)))
            }
            _ => {}
        }
        if self.mappings.is_empty() {
            return Err(EstimateError::Config("at least one option mapping is required".into()));
        }
        Ok(())
    }

    /// Short human-readable cell name such as `with-explicit-explanations/parallel/softmax-t20`.
    pub fn label(&self) -> String {
        let mode = self.mode.map_or("none".to_string(), |m| m.to_string());
        let transform = match self.transform.method {
            TransformMethod::Normalize => "normalize".to_string(),
            TransformMethod::Softmax => format!("softmax-t{}", self.transform.temperature),
        };
        format!("{}/{}/{}", self.prompt_type, mode, transform)
    }

    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// The batches queried for an item with `m` explanations.
    pub fn batches(&self, m: usize) -> Result<Vec<ExplanationBatch>, EstimateError> {
        match self.mode {
            None => Ok(vec![ExplanationBatch::empty()]),
            Some(mode) => Ok(explanation_batches(m, mode)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub mapping_index: usize,
    pub mapping: OptionMapping,
    pub batch: ExplanationBatch,
    pub prompt_digest: String,
    pub scores: OptionScores,
    pub option_probs: [f64; 3],
    pub distribution: JudgmentDistribution,
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceFlags {
    /// Responses where at least one option letter was floored.
    pub floored: usize,
    /// Records whose raw logits were clamped before normalization.
    pub clamped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationTrace {
    pub item_id: String,
    pub records: Vec<TraceRecord>,
    pub mjd: JudgmentDistribution,
    pub flags: TraceFlags,
}

/// Averages distributions in the given order, then renormalizes.
pub fn mean_distribution(dists: &[JudgmentDistribution]) -> Option<JudgmentDistribution> {
    if dists.is_empty() {
        return None;
    }
    let mut acc = [0.0; 3];
    for d in dists {
        for (a, p) in acc.iter_mut().zip(d.probs()) {
            *a += p;
        }
    }
    let n = dists.len() as f64;
    JudgmentDistribution::from_weights(acc.map(|a| a / n)).ok()
}

/// Queries every (mapping, batch) pair for one item and averages the resulting
/// label distributions, mapping-major then batch order.
pub fn estimate_mjd(
    item: &NliItem,
    explanations: &[ExplanationAnnotation],
    config: &EstimationConfig,
    backend: &dyn ScoreBackend,
) -> Result<EstimationTrace, EstimateError> {
    config.validate()?;
    let batches = config.batches(explanations.len())?;
    let mut records = Vec::with_capacity(config.mappings.len() * batches.len());
    let mut flags = TraceFlags::default();
    for (mapping_index, mapping) in config.mappings.iter().enumerate() {
        for batch in &batches {
            let resolved = batch.resolve(explanations);
            let prompt = render_prompt(item, &resolved, mapping, config.prompt_type, config.template)?;
            let scores = backend.query(&prompt).map_err(|source| EstimateError::Backend {
                mapping_index,
                mapping: mapping.code(),
                batch: batch.indices().to_vec(),
                source,
            })?;
            let (option_probs, clamped) = config.transform.apply(&scores)?;
            flags.floored += usize::from(scores.is_floored());
            flags.clamped += usize::from(clamped);
            records.push(TraceRecord {
                mapping_index,
                mapping: *mapping,
                batch: batch.clone(),
                prompt_digest: prompt.digest(),
                distribution: map_to_labels(option_probs, mapping),
                option_probs,
                scores,
                clamped,
            });
        }
    }
    let dists: Vec<JudgmentDistribution> = records.iter().map(|r| r.distribution).collect();
    let mjd = mean_distribution(&dists).ok_or_else(|| EstimateError::Config("empty schedule".into()))?;
    Ok(EstimationTrace {
        item_id: item.id.clone(),
        records,
        mjd,
        flags,
    })
}

#[derive(Debug, Default)]
pub struct DatasetEstimate {
    pub traces: BTreeMap<String, EstimationTrace>,
    /// Item id → error message for items that failed.
    pub failures: BTreeMap<String, String>,
    /// The first failure's error, kept typed so callers can classify it.
    pub first_error: Option<EstimateError>,
}

impl DatasetEstimate {
    pub fn mjd_table(&self) -> BTreeMap<String, JudgmentDistribution> {
        self.traces.iter().map(|(k, t)| (k.clone(), t.mjd)).collect()
    }
}

/// Runs [`estimate_mjd`] over every record with up to `workers` items in flight.
/// Failures are collected per item rather than aborting the run.
pub fn estimate_dataset(
    dataset: &PairedDataset,
    config: &EstimationConfig,
    backend: &dyn ScoreBackend,
    workers: usize,
) -> Result<DatasetEstimate, EstimateError> {
    config.validate()?;
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::with_capacity(dataset.len()));
    std::thread::scope(|s| {
        for _ in 0..workers.max(1).min(dataset.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(rec) = dataset.records.get(i) else { break };
                let r = estimate_mjd(&rec.item, &rec.explanations, config, backend);
                results.lock().unwrap().push((rec.item.id.clone(), r));
            });
        }
    });
    let mut out = DatasetEstimate::default();
    let mut results = results.into_inner().unwrap();
    results.sort_by(|a, b| a.0.cmp(&b.0));
    for (id, r) in results {
        match r {
            Ok(t) => {
                out.traces.insert(id, t);
            }
            Err(e) => {
                out.failures.insert(id, e.to_string());
                if out.first_error.is_none() {
                    out.first_error = Some(e);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MjdFlags {
    pub queries: usize,
    pub floored: usize,
    pub clamped: usize,
}

/// One line of an MJD file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MjdRecord {
    pub id: String,
    pub config_digest: String,
    pub mjd: JudgmentDistribution,
    pub flags: MjdFlags,
    /// Digest of the dataset file the item came from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_digest: Option<String>,
}

impl MjdRecord {
    pub fn from_trace(trace: &EstimationTrace, config_digest: &str, input_digest: Option<&str>) -> Self {
        Self {
            id: trace.item_id.clone(),
            config_digest: config_digest.to_string(),
            mjd: trace.mjd,
            flags: MjdFlags {
                queries: trace.records.len(),
                floored: trace.flags.floored,
                clamped: trace.flags.clamped,
            },
            input_digest: input_digest.map(String::from),
        }
    }
}

impl fmt::Display for MjdRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [e, n, c] = self.mjd.probs();
        write!(f, "{} [{e:.4}, {n:.4}, {c:.4}]", self.id)
    }
}

pub fn mjd_file_contents(records: &[MjdRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_mjd_file(path: &Path, records: &[MjdRecord]) -> Result<(), EstimateError> {
    Ok(write_atomic(path, mjd_file_contents(records).as_bytes())?)
}

pub fn read_mjd_file(path: &Path) -> Result<Vec<MjdRecord>, EstimateError> {
    Ok(read_jsonl(path)?)
}

pub fn write_trace_file(path: &Path, traces: &BTreeMap<String, EstimationTrace>) -> Result<(), EstimateError> {
    let mut out = String::new();
    for t in traces.values() {
        out.push_str(&serde_json::to_string(t).expect("trace serializes"));
        out.push('\n');
    }
    Ok(write_atomic(path, out.as_bytes())?)
}
