//! Dataset file readers: the canonical JSONL layout plus adapters for the published
//! ChaosNLI and VariErr NLI files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde_json::{Map, Value};

use super::{
    one_hot, parse_judgment_counts, DataError, ExplanationAnnotation, ExplanationSet, JudgmentDistribution,
    LabeledDataset, NliItem, NliLabel,
};

/// Which distribution a ChaosNLI record contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChaosView {
    /// The 100-annotator crowd distribution.
    #[default]
    Hjd,
    /// The original MNLI gold label as a one-hot vector.
    MnliLabel,
    /// The original five MNLI annotator labels as a distribution.
    MnliDistribution,
}

impl FromStr for ChaosView {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hjd" => Ok(ChaosView::Hjd),
            "mnli-label" => Ok(ChaosView::MnliLabel),
            "mnli-dist" | "mnli-distribution" => Ok(ChaosView::MnliDistribution),
            other => Err(format!("unknown ChaosNLI view {other:?} (expected hjd, mnli-label, mnli-dist)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    Canonical,
    ChaosNli(ChaosView),
    VariErr,
}

impl FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "canonical" => Ok(DatasetFormat::Canonical),
            "chaos-nli" | "chaosnli" => Ok(DatasetFormat::ChaosNli(ChaosView::Hjd)),
            "varierr" => Ok(DatasetFormat::VariErr),
            other => Err(format!("unknown dataset format {other:?} (expected canonical, chaos-nli, varierr)")),
        }
    }
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<LabeledDataset, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text, format)
}

/// Serializes a dataset in the canonical one-record-per-line layout, ascending by id.
/// Reading the output back with [`DatasetFormat::Canonical`] reproduces the dataset exactly.
pub fn to_canonical_jsonl(dataset: &LabeledDataset) -> String {
    let mut out = String::new();
    for item in dataset.items() {
        let mut obj = Map::new();
        obj.insert("id".into(), Value::String(item.id.clone()));
        obj.insert("premise".into(), Value::String(item.premise.clone()));
        obj.insert("hypothesis".into(), Value::String(item.hypothesis.clone()));
        if let Some(d) = dataset.distribution(&item.id) {
            obj.insert("distribution".into(), serde_json::to_value(d).expect("distribution serializes"));
        }
        if let Some(set) = dataset.explanation_set(&item.id) {
            obj.insert("explanations".into(), serde_json::to_value(&set.explanations).expect("explanations serialize"));
        }
        out.push_str(&Value::Object(obj).to_string());
        out.push('\n');
    }
    out
}

struct Parsed {
    item: NliItem,
    distribution: Option<JudgmentDistribution>,
    explanations: Option<Vec<ExplanationAnnotation>>,
    annotators: Option<u32>,
}

/// Parses dataset text. JSON-lines is the default; a top-level JSON array is also accepted,
/// in which case "line" in error messages is the 1-based element index.
pub fn parse_dataset(text: &str, format: DatasetFormat) -> Result<LabeledDataset, DataError> {
    let records: Vec<(usize, Value)> = if text.trim_start().starts_with('[') {
        let values: Vec<Value> = serde_json::from_str(text).map_err(|e| DataError::Record {
            line: e.line(),
            field: "<document>".into(),
            message: e.to_string(),
        })?;
        values.into_iter().enumerate().map(|(i, v)| (i + 1, v)).collect()
    } else {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let v: Value = serde_json::from_str(line).map_err(|e| DataError::Record {
                line: i + 1,
                field: "<record>".into(),
                message: e.to_string(),
            })?;
            out.push((i + 1, v));
        }
        out
    };

    let mut items = Vec::with_capacity(records.len());
    let mut distributions = BTreeMap::new();
    let mut explanations: BTreeMap<String, ExplanationSet> = BTreeMap::new();
    let mut any_explanations = false;
    let mut annotator_count = None;
    let mut seen = BTreeMap::new();

    for (line, value) in records {
        let obj = value.as_object().ok_or_else(|| DataError::Record {
            line,
            field: "<record>".into(),
            message: "expected a JSON object".into(),
        })?;
        let parsed = match format {
            DatasetFormat::Canonical => parse_canonical(obj, line)?,
            DatasetFormat::ChaosNli(view) => parse_chaos(obj, line, view)?,
            DatasetFormat::VariErr => parse_varierr(obj, line)?,
        };
        let id = parsed.item.id.clone();
        if seen.insert(id.clone(), line).is_some() {
            return Err(DataError::DuplicateId { line, id });
        }
        if let Some(d) = parsed.distribution {
            distributions.insert(id.clone(), d);
        }
        if let Some(ex) = parsed.explanations {
            any_explanations = true;
            explanations.insert(
                id.clone(),
                ExplanationSet {
                    item_id: id.clone(),
                    explanations: ex,
                },
            );
        }
        if parsed.annotators.is_some() {
            annotator_count = annotator_count.max(parsed.annotators);
        }
        items.push(parsed.item);
    }

    LabeledDataset::new(
        items,
        distributions,
        any_explanations.then_some(explanations),
        annotator_count,
    )
}

fn bad(line: usize, field: &str, message: impl Into<String>) -> DataError {
    DataError::Record {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn str_field<'a>(obj: &'a Map<String, Value>, line: usize, names: &[&str]) -> Result<&'a str, DataError> {
    for name in names {
        if let Some(v) = obj.get(*name) {
            return match v {
                Value::String(s) if !s.trim().is_empty() => Ok(s),
                Value::String(_) => Err(bad(line, name, "must not be empty")),
                _ => Err(bad(line, name, "expected a string")),
            };
        }
    }
    Err(bad(line, names[0], "missing"))
}

fn id_field(obj: &Map<String, Value>, line: usize, names: &[&str]) -> Result<String, DataError> {
    for name in names {
        match obj.get(*name) {
            Some(Value::String(s)) if !s.is_empty() => return Ok(s.clone()),
            Some(Value::Number(n)) => return Ok(n.to_string()),
            Some(_) => return Err(bad(line, name, "expected a non-empty string or number")),
            None => {}
        }
    }
    Err(bad(line, names[0], "missing"))
}

fn item(id: String, premise: &str, hypothesis: &str, line: usize) -> Result<NliItem, DataError> {
    NliItem::new(id, premise, hypothesis).map_err(|e| bad(line, "id", e.to_string()))
}

fn label_field(v: &Value, line: usize, field: &str) -> Result<NliLabel, DataError> {
    v.as_str()
        .ok_or_else(|| bad(line, field, "expected a label string"))?
        .parse()
        .map_err(|e: DataError| bad(line, field, e.to_string()))
}

fn counts_field(v: &Value, line: usize, field: &str) -> Result<BTreeMap<NliLabel, u64>, DataError> {
    let obj = v.as_object().ok_or_else(|| bad(line, field, "expected an object of label counts"))?;
    let mut counts = BTreeMap::new();
    for (k, c) in obj {
        let label: NliLabel = k.parse().map_err(|e: DataError| bad(line, field, e.to_string()))?;
        let c = c
            .as_u64()
            .ok_or_else(|| bad(line, field, format!("count for {k:?} must be a non-negative integer")))?;
        *counts.entry(label).or_insert(0) += c;
    }
    Ok(counts)
}

fn dist_field(v: &Value, line: usize, field: &str) -> Result<JudgmentDistribution, DataError> {
    let arr = v
        .as_array()
        .filter(|a| a.len() == 3)
        .ok_or_else(|| bad(line, field, "expected an array of 3 numbers"))?;
    let mut probs = [0.0; 3];
    for (slot, x) in probs.iter_mut().zip(arr) {
        *slot = x.as_f64().ok_or_else(|| bad(line, field, "expected numbers"))?;
    }
    // Published files round to a few decimals; accept small drift and renormalize.
    if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-3 {
        return Err(bad(line, field, format!("{probs:?} does not sum to 1")));
    }
    JudgmentDistribution::new(probs)
        .or_else(|_| JudgmentDistribution::from_weights(probs))
        .map_err(|e| bad(line, field, e.to_string()))
}

fn counts_to_dist(counts: &BTreeMap<NliLabel, u64>, line: usize, field: &str) -> Result<JudgmentDistribution, DataError> {
    parse_judgment_counts(counts).map_err(|e| bad(line, field, e.to_string()))
}

fn parse_canonical(obj: &Map<String, Value>, line: usize) -> Result<Parsed, DataError> {
    let id = id_field(obj, line, &["id"])?;
    let item = item(
        id,
        str_field(obj, line, &["premise"])?,
        str_field(obj, line, &["hypothesis"])?,
        line,
    )?;
    let distribution = if let Some(v) = obj.get("label_counts") {
        Some(counts_to_dist(&counts_field(v, line, "label_counts")?, line, "label_counts")?)
    } else if let Some(v) = obj.get("distribution") {
        Some(dist_field(v, line, "distribution")?)
    } else if let Some(v) = obj.get("label") {
        Some(one_hot(label_field(v, line, "label")?))
    } else {
        None
    };
    let explanations = match obj.get("explanations") {
        None | Some(Value::Null) => None,
        Some(Value::Array(list)) => {
            let mut out = Vec::with_capacity(list.len());
            for (i, e) in list.iter().enumerate() {
                let field = format!("explanations[{i}]");
                let e = e.as_object().ok_or_else(|| bad(line, &field, "expected an object"))?;
                let annotator = match e.get("annotator") {
                    Some(Value::String(s)) => s.clone(),
                    Some(Value::Number(n)) => n.to_string(),
                    None => String::new(),
                    Some(_) => return Err(bad(line, &format!("{field}.annotator"), "expected a string")),
                };
                let label = label_field(
                    e.get("label").ok_or_else(|| bad(line, &format!("{field}.label"), "missing"))?,
                    line,
                    &format!("{field}.label"),
                )?;
                let text = str_field(e, line, &["text"]).map_err(|_| bad(line, &format!("{field}.text"), "missing or empty"))?;
                out.push(ExplanationAnnotation {
                    annotator,
                    label,
                    text: text.to_string(),
                });
            }
            Some(out)
        }
        Some(_) => return Err(bad(line, "explanations", "expected an array")),
    };
    Ok(Parsed {
        item,
        distribution,
        explanations,
        annotators: None,
    })
}

fn parse_chaos(obj: &Map<String, Value>, line: usize, view: ChaosView) -> Result<Parsed, DataError> {
    let id = id_field(obj, line, &["uid", "id"])?;
    let example = obj
        .get("example")
        .and_then(Value::as_object)
        .ok_or_else(|| bad(line, "example", "missing or not an object"))?;
    let item = item(
        id,
        str_field(example, line, &["premise"])?,
        str_field(example, line, &["hypothesis"])?,
        line,
    )?;
    let (distribution, annotators) = match view {
        ChaosView::Hjd => {
            if let Some(v) = obj.get("label_counter") {
                let counts = counts_field(v, line, "label_counter")?;
                let total = counts.values().sum::<u64>() as u32;
                (counts_to_dist(&counts, line, "label_counter")?, total)
            } else if let Some(v) = obj.get("label_dist") {
                (dist_field(v, line, "label_dist")?, 100)
            } else {
                return Err(bad(line, "label_counter", "missing (and no label_dist)"));
            }
        }
        ChaosView::MnliLabel => {
            let v = obj.get("old_label").ok_or_else(|| bad(line, "old_label", "missing"))?;
            (one_hot(label_field(v, line, "old_label")?), 1)
        }
        ChaosView::MnliDistribution => {
            let v = obj
                .get("old_labels")
                .and_then(Value::as_array)
                .ok_or_else(|| bad(line, "old_labels", "missing or not an array"))?;
            let mut counts = BTreeMap::new();
            for l in v {
                *counts.entry(label_field(l, line, "old_labels")?).or_insert(0u64) += 1;
            }
            (counts_to_dist(&counts, line, "old_labels")?, v.len() as u32)
        }
    };
    Ok(Parsed {
        item,
        distribution: Some(distribution),
        explanations: None,
        annotators: Some(annotators),
    })
}

fn parse_varierr(obj: &Map<String, Value>, line: usize) -> Result<Parsed, DataError> {
    let id = id_field(obj, line, &["id", "uid"])?;
    let item = item(
        id,
        str_field(obj, line, &["context", "premise"])?,
        str_field(obj, line, &["statement", "hypothesis"])?,
        line,
    )?;
    let mut explanations = Vec::new();
    let mut annotators = std::collections::BTreeSet::new();
    for label in NliLabel::ALL {
        let key = label.word().to_ascii_lowercase();
        let Some(v) = obj.get(&key) else { continue };
        let list = v.as_array().ok_or_else(|| bad(line, &key, "expected an array"))?;
        for (i, e) in list.iter().enumerate() {
            let field = format!("{key}[{i}]");
            let (annotator, text) = match e {
                Value::String(s) => (String::new(), s.clone()),
                Value::Object(o) => {
                    let annotator = match o.get("annotator") {
                        Some(Value::String(s)) => s.clone(),
                        Some(Value::Number(n)) => n.to_string(),
                        _ => String::new(),
                    };
                    let text = str_field(o, line, &["reason", "text", "explanation"])
                        .map_err(|_| bad(line, &format!("{field}.reason"), "missing or empty"))?;
                    (annotator, text.to_string())
                }
                _ => return Err(bad(line, &field, "expected an object or string")),
            };
            if text.trim().is_empty() {
                return Err(bad(line, &field, "empty explanation"));
            }
            if !annotator.is_empty() {
                annotators.insert(annotator.clone());
            }
            explanations.push(ExplanationAnnotation { annotator, label, text });
        }
    }
    let distribution = if let Some(v) = obj.get("label_count_round_1") {
        Some(counts_to_dist(&counts_field(v, line, "label_count_round_1")?, line, "label_count_round_1")?)
    } else if !explanations.is_empty() {
        let mut counts = BTreeMap::new();
        for e in &explanations {
            *counts.entry(e.label).or_insert(0u64) += 1;
        }
        Some(counts_to_dist(&counts, line, "explanations")?)
    } else {
        None
    };
    Ok(Parsed {
        item,
        distribution,
        explanations: Some(explanations),
        annotators: (!annotators.is_empty()).then_some(annotators.len() as u32),
    })
}
