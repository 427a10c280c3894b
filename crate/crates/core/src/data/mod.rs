//! Domain types for NLI items, annotations and judgment distributions, plus
//! dataset alignment and the seeded dev/test split.

mod formats;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use formats::{load_dataset, parse_dataset, to_canonical_jsonl, ChaosView, DatasetFormat};

/// Tolerance on the component sum of a [`JudgmentDistribution`].
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("degenerate counts: every label count is zero")]
    DegenerateCounts,
    #[error("invalid distribution {0:?}: components must be finite, non-negative and sum to 1")]
    InvalidDistribution([f64; 3]),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("line {line}: field `{field}`: {message}")]
    Record {
        line: usize,
        field: String,
        message: String,
    },
    #[error("line {line}: duplicate item id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("{0} references unknown item id {1:?}")]
    UnknownId(&'static str, String),
    #[error("invalid item {id:?}: {message}")]
    InvalidItem { id: String, message: String },
    #[error("exclude set contains ids not in the dataset: {0:?}")]
    ExcludeNotSubset(Vec<String>),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The three NLI labels, in canonical order E < N < C.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

impl NliLabel {
    pub const ALL: [NliLabel; 3] = [NliLabel::Entailment, NliLabel::Neutral, NliLabel::Contradiction];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<NliLabel> {
        Self::ALL.get(i).copied()
    }

    /// Capitalized label word as it appears in prompts.
    pub fn word(self) -> &'static str {
        match self {
            NliLabel::Entailment => "Entailment",
            NliLabel::Neutral => "Neutral",
            NliLabel::Contradiction => "Contradiction",
        }
    }

    pub fn letter(self) -> char {
        match self {
            NliLabel::Entailment => 'e',
            NliLabel::Neutral => 'n',
            NliLabel::Contradiction => 'c',
        }
    }
}

impl fmt::Display for NliLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

impl FromStr for NliLabel {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "e" | "entailment" => Ok(NliLabel::Entailment),
            "n" | "neutral" => Ok(NliLabel::Neutral),
            "c" | "contradiction" => Ok(NliLabel::Contradiction),
            _ => Err(DataError::UnknownLabel(s.to_string())),
        }
    }
}

impl Serialize for NliLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.letter().to_string())
    }
}

impl<'de> Deserialize<'de> for NliLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A point on the probability simplex over [`NliLabel`], indexed E, N, C.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JudgmentDistribution([f64; 3]);

impl JudgmentDistribution {
    /// Validates the simplex invariants.
    pub fn new(probs: [f64; 3]) -> Result<Self, DataError> {
        let ok = probs.iter().all(|p| p.is_finite() && *p >= 0.0)
            && (probs.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOLERANCE;
        if ok {
            Ok(Self(probs))
        } else {
            Err(DataError::InvalidDistribution(probs))
        }
    }

    /// Accepts any non-negative finite vector with positive mass and rescales it to sum to 1.
    pub fn from_weights(weights: [f64; 3]) -> Result<Self, DataError> {
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || !(total > 0.0) {
            return Err(DataError::InvalidDistribution(weights));
        }
        Ok(Self(weights.map(|w| w / total)))
    }

    pub fn uniform() -> Self {
        Self([1.0 / 3.0; 3])
    }

    pub fn probs(&self) -> [f64; 3] {
        self.0
    }

    pub fn get(&self, label: NliLabel) -> f64 {
        self.0[label.index()]
    }

    /// Most probable label; ties go to the earliest label in canonical order.
    pub fn argmax(&self) -> NliLabel {
        self.argmax_with_tie().0
    }

    /// Like [`argmax`](Self::argmax), also reporting whether a tie was broken.
    pub fn argmax_with_tie(&self) -> (NliLabel, bool) {
        let mut best = 0;
        for i in 1..3 {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        let tie = (0..3).any(|i| i != best && self.0[i] == self.0[best]);
        (NliLabel::ALL[best], tie)
    }
}

impl Serialize for JudgmentDistribution {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for JudgmentDistribution {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let probs = <[f64; 3]>::deserialize(deserializer)?;
        JudgmentDistribution::new(probs).map_err(serde::de::Error::custom)
    }
}

/// Normalizes per-label counts into a distribution.
pub fn parse_judgment_counts(counts: &BTreeMap<NliLabel, u64>) -> Result<JudgmentDistribution, DataError> {
    let total: u64 = counts.values().sum();
    if total == 0 {
        return Err(DataError::DegenerateCounts);
    }
    let mut probs = [0.0; 3];
    for (label, &c) in counts {
        probs[label.index()] = c as f64 / total as f64;
    }
    Ok(JudgmentDistribution(probs))
}

pub fn one_hot(label: NliLabel) -> JudgmentDistribution {
    let mut probs = [0.0; 3];
    probs[label.index()] = 1.0;
    JudgmentDistribution(probs)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NliItem {
    pub id: String,
    pub premise: String,
    pub hypothesis: String,
}

impl NliItem {
    pub fn new(id: impl Into<String>, premise: impl Into<String>, hypothesis: impl Into<String>) -> Result<Self, DataError> {
        let item = Self {
            id: id.into(),
            premise: premise.into(),
            hypothesis: hypothesis.into(),
        };
        item.validate()?;
        Ok(item)
    }

    fn validate(&self) -> Result<(), DataError> {
        let fail = |message: &str| DataError::InvalidItem {
            id: self.id.clone(),
            message: message.to_string(),
        };
        if self.id.is_empty() {
            return Err(fail("empty id"));
        }
        if self.premise.trim().is_empty() {
            return Err(fail("empty premise"));
        }
        if self.hypothesis.trim().is_empty() {
            return Err(fail("empty hypothesis"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanationAnnotation {
    pub annotator: String,
    pub label: NliLabel,
    pub text: String,
}

impl ExplanationAnnotation {
    pub fn new(annotator: impl Into<String>, label: NliLabel, text: impl Into<String>) -> Result<Self, DataError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(DataError::InvalidItem {
                id: String::new(),
                message: "empty explanation text".into(),
            });
        }
        Ok(Self {
            annotator: annotator.into(),
            label,
            text,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanationSet {
    pub item_id: String,
    pub explanations: Vec<ExplanationAnnotation>,
}

impl ExplanationSet {
    pub fn len(&self) -> usize {
        self.explanations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.explanations.is_empty()
    }
}

/// Items with their distributions and (optionally) explanations.
///
/// Items are kept in ascending id order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledDataset {
    items: Vec<NliItem>,
    distributions: BTreeMap<String, JudgmentDistribution>,
    explanations: Option<BTreeMap<String, ExplanationSet>>,
    annotator_count: Option<u32>,
}

impl LabeledDataset {
    pub fn new(
        mut items: Vec<NliItem>,
        distributions: BTreeMap<String, JudgmentDistribution>,
        explanations: Option<BTreeMap<String, ExplanationSet>>,
        annotator_count: Option<u32>,
    ) -> Result<Self, DataError> {
        items.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in items.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(DataError::DuplicateId {
                    line: 0,
                    id: pair[0].id.clone(),
                });
            }
        }
        for item in &items {
            item.validate()?;
        }
        let ids: BTreeSet<&str> = items.iter().map(|i| i.id.as_str()).collect();
        if let Some(id) = distributions.keys().find(|k| !ids.contains(k.as_str())) {
            return Err(DataError::UnknownId("distribution", id.clone()));
        }
        if let Some(expl) = &explanations {
            for (key, set) in expl {
                if !ids.contains(key.as_str()) {
                    return Err(DataError::UnknownId("explanation set", key.clone()));
                }
                if set.item_id != *key {
                    return Err(DataError::UnknownId("explanation set", set.item_id.clone()));
                }
            }
        }
        Ok(Self {
            items,
            distributions,
            explanations,
            annotator_count,
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn items(&self) -> &[NliItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|i| i.id.as_str())
    }

    pub fn item(&self, id: &str) -> Option<&NliItem> {
        self.items
            .binary_search_by(|i| i.id.as_str().cmp(id))
            .ok()
            .map(|idx| &self.items[idx])
    }

    pub fn distributions(&self) -> &BTreeMap<String, JudgmentDistribution> {
        &self.distributions
    }

    pub fn distribution(&self, id: &str) -> Option<&JudgmentDistribution> {
        self.distributions.get(id)
    }

    pub fn explanations(&self) -> Option<&BTreeMap<String, ExplanationSet>> {
        self.explanations.as_ref()
    }

    pub fn explanation_set(&self, id: &str) -> Option<&ExplanationSet> {
        self.explanations.as_ref().and_then(|e| e.get(id))
    }

    pub fn annotator_count(&self) -> Option<u32> {
        self.annotator_count
    }

    /// Restricts the dataset to the given ids, keeping every per-id attachment.
    pub fn subset(&self, keep: &BTreeSet<&str>) -> LabeledDataset {
        let items = self.items.iter().filter(|i| keep.contains(i.id.as_str())).cloned().collect();
        let distributions = self
            .distributions
            .iter()
            .filter(|(k, _)| keep.contains(k.as_str()))
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        let explanations = self.explanations.as_ref().map(|e| {
            e.iter()
                .filter(|(k, _)| keep.contains(k.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect()
        });
        LabeledDataset {
            items,
            distributions,
            explanations,
            annotator_count: self.annotator_count,
        }
    }
}

/// One id shared by two aligned datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedRecord {
    pub item: NliItem,
    pub left: Option<JudgmentDistribution>,
    pub right: Option<JudgmentDistribution>,
    pub explanations: Vec<ExplanationAnnotation>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairedDataset {
    pub records: Vec<PairedRecord>,
}

impl PairedDataset {
    /// Treats a single dataset as a pairing with itself on the left side only.
    pub fn from_single(dataset: &LabeledDataset) -> Self {
        let records = dataset
            .items()
            .iter()
            .map(|item| PairedRecord {
                item: item.clone(),
                left: dataset.distribution(&item.id).copied(),
                right: None,
                explanations: dataset
                    .explanation_set(&item.id)
                    .map(|s| s.explanations.clone())
                    .unwrap_or_default(),
            })
            .collect();
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.item.id.as_str())
    }
}

/// Joins two datasets on id.
///
/// `filter` sees the explanation count of each shared id (taken from `a` when it carries
/// explanations for the id, otherwise from `b`). The result is in ascending id order.
pub fn align_datasets(a: &LabeledDataset, b: &LabeledDataset, filter: Option<&dyn Fn(usize) -> bool>) -> PairedDataset {
    let mut records = Vec::new();
    for item in a.items() {
        let Some(_) = b.item(&item.id) else {
            continue;
        };
        let explanations = a
            .explanation_set(&item.id)
            .or_else(|| b.explanation_set(&item.id))
            .map(|s| s.explanations.clone())
            .unwrap_or_default();
        if let Some(f) = filter {
            if !f(explanations.len()) {
                continue;
            }
        }
        records.push(PairedRecord {
            item: item.clone(),
            left: a.distribution(&item.id).copied(),
            right: b.distribution(&item.id).copied(),
            explanations,
        });
    }
    PairedDataset { records }
}

/// Explanation-count filter keeping items with exactly `m` explanations.
pub fn exactly(m: usize) -> impl Fn(usize) -> bool {
    move |n| n == m
}

fn split_key(seed: u64, id: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(id.as_bytes());
    hasher.finalize().into()
}

/// Splits the items not in `exclude_ids` into dev and test halves.
///
/// Items are ordered by a seeded SHA-256 of their id and assigned alternately, so the
/// halves differ in size by at most one and the split depends only on ids and seed.
pub fn split_remainder(
    full: &LabeledDataset,
    exclude_ids: &BTreeSet<String>,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset), DataError> {
    let missing: Vec<String> = exclude_ids.iter().filter(|id| full.item(id).is_none()).cloned().collect();
    if !missing.is_empty() {
        return Err(DataError::ExcludeNotSubset(missing));
    }
    let mut rest: Vec<(&str, [u8; 32])> = full
        .ids()
        .filter(|id| !exclude_ids.contains(*id))
        .map(|id| (id, split_key(seed, id)))
        .collect();
    rest.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let mut dev = BTreeSet::new();
    let mut test = BTreeSet::new();
    for (i, (id, _)) in rest.into_iter().enumerate() {
        if i % 2 == 0 {
            dev.insert(id);
        } else {
            test.insert(id);
        }
    }
    Ok((full.subset(&dev), full.subset(&test)))
}
