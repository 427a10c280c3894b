use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CliError, Table, TableSpec};
use crate::data::{align_datasets, exactly, split_remainder, to_canonical_jsonl, ExplanationSet, JudgmentDistribution, LabeledDataset};
use crate::io::{file_digest, write_atomic};
use crate::metrics::{argmax_table, dataset_report, pairwise_errors, DistributionMatrix, MetricConfig, MetricReport};
use crate::viz::{csv_sidecar, render_error_plot, render_scatter, ErrorPair, PlotSpec, Series};

#[derive(Debug, Clone)]
pub struct IngestArgs {
    pub input: TableSpec,
    pub out: PathBuf,
    pub align: Option<TableSpec>,
    pub explanation_count: Option<usize>,
    pub remainder_out_dir: Option<PathBuf>,
    pub split_seed: u64,
}

#[derive(Serialize)]
struct Provenance<'a> {
    inputs: BTreeMap<&'a str, String>,
    items: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    explanation_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    split_seed: Option<u64>,
}

/// `<out>.provenance.json` next to a dataset file, since the canonical layout has no header.
fn provenance_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".provenance.json");
    out.with_file_name(name)
}

fn write_dataset(path: &Path, ds: &LabeledDataset, provenance: &Provenance) -> Result<(), CliError> {
    write_atomic(path, to_canonical_jsonl(ds).as_bytes())?;
    let mut json = serde_json::to_string_pretty(provenance).expect("provenance serializes");
    json.push('\n');
    write_atomic(&provenance_path(path), json.as_bytes())?;
    Ok(())
}

/// Converts a dataset to canonical JSONL. With `align`, keeps only ids present in both files
/// (distributions from the input, explanations from whichever side has them); the items that
/// alignment drops can be split into seeded dev/test halves.
pub fn cmd_ingest(args: &IngestArgs) -> Result<String, CliError> {
    let full = args.input.load_dataset()?;
    let mut inputs = BTreeMap::from([("input", args.input.digest()?.unwrap_or_default())]);
    let mut summary = String::new();
    let Some(align) = &args.align else {
        if args.explanation_count.is_some() || args.remainder_out_dir.is_some() {
            return Err(CliError::Usage("--explanation-count and --remainder-out-dir need --align".into()));
        }
        write_dataset(
            &args.out,
            &full,
            &Provenance {
                inputs,
                items: full.len(),
                explanation_count: None,
                split_seed: None,
            },
        )?;
        return Ok(format!("{} items -> {}", full.len(), args.out.display()));
    };
    let other = align.load_dataset()?;
    inputs.insert("align", align.digest()?.unwrap_or_default());
    let filter = args.explanation_count.map(exactly);
    let paired = align_datasets(&full, &other, filter.as_ref().map(|f| f as &dyn Fn(usize) -> bool));
    let items: Vec<_> = paired.records.iter().map(|r| r.item.clone()).collect();
    let distributions: BTreeMap<String, JudgmentDistribution> =
        paired.records.iter().filter_map(|r| r.left.map(|d| (r.item.id.clone(), d))).collect();
    let explanations: BTreeMap<String, ExplanationSet> = paired
        .records
        .iter()
        .filter(|r| !r.explanations.is_empty())
        .map(|r| {
            (
                r.item.id.clone(),
                ExplanationSet {
                    item_id: r.item.id.clone(),
                    explanations: r.explanations.clone(),
                },
            )
        })
        .collect();
    let has_explanations = !explanations.is_empty();
    let aligned = LabeledDataset::new(items, distributions, has_explanations.then_some(explanations), full.annotator_count())?;
    write_dataset(
        &args.out,
        &aligned,
        &Provenance {
            inputs: inputs.clone(),
            items: aligned.len(),
            explanation_count: args.explanation_count,
            split_seed: None,
        },
    )?;
    writeln!(summary, "{} aligned items -> {}", aligned.len(), args.out.display()).unwrap();
    if let Some(dir) = &args.remainder_out_dir {
        let exclude: BTreeSet<String> = aligned.ids().map(String::from).collect();
        let (dev, test) = split_remainder(&full, &exclude, args.split_seed)?;
        for (name, part) in [("dev", &dev), ("test", &test)] {
            let path = dir.join(format!("{name}.jsonl"));
            write_dataset(
                &path,
                part,
                &Provenance {
                    inputs: inputs.clone(),
                    items: part.len(),
                    explanation_count: args.explanation_count,
                    split_seed: Some(args.split_seed),
                },
            )?;
            writeln!(summary, "{} {name} items -> {}", part.len(), path.display()).unwrap();
        }
    }
    Ok(summary.trim_end().to_string())
}

#[derive(Debug, Clone)]
pub struct CompareArgs {
    pub reference: TableSpec,
    pub candidate: TableSpec,
    pub metrics: MetricConfig,
    pub intersect: bool,
    pub classify: bool,
    pub out_dir: Option<PathBuf>,
}

fn load_pair(reference: &TableSpec, candidate: &TableSpec) -> Result<(Table, Table), CliError> {
    if reference.is_uniform() {
        return Err(CliError::Usage("the reference table cannot be uniform".into()));
    }
    let r = reference.load_table(None)?;
    let ids: Vec<String> = r.rows.keys().cloned().collect();
    let c = candidate.load_table(Some(&ids))?;
    Ok((r, c))
}

fn intersect(a: &mut BTreeMap<String, JudgmentDistribution>, b: &mut BTreeMap<String, JudgmentDistribution>) {
    a.retain(|k, _| b.contains_key(k));
    b.retain(|k, _| a.contains_key(k));
}

/// Metrics of a candidate table against a reference table; writes `report.json` and
/// `report.csv` when an output directory is given.
pub fn cmd_compare(args: &CompareArgs) -> Result<MetricReport, CliError> {
    let (mut r, mut c) = load_pair(&args.reference, &args.candidate)?;
    if args.intersect {
        intersect(&mut r.rows, &mut c.rows);
        if r.rows.is_empty() {
            return Err(CliError::Invalid("the two tables share no ids".into()));
        }
    }
    let predictions = args.classify.then(|| argmax_table(&c.rows));
    let mut report = dataset_report(&r.rows, &c.rows, &args.metrics, predictions.as_ref())?;
    if let Some(d) = r.digest {
        report.inputs.insert("reference".into(), d);
    }
    report
        .inputs
        .insert("candidate".into(), c.digest.unwrap_or_else(|| "uniform".into()));
    if let Some(dir) = &args.out_dir {
        write_atomic(&dir.join("report.json"), report.to_json().as_bytes())?;
        write_atomic(&dir.join("report.csv"), report.to_csv().as_bytes())?;
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct PlotArgs {
    pub inputs: Vec<(String, TableSpec)>,
    pub error_lines: bool,
    pub zoom: f64,
    pub title: String,
    pub point_radius: f64,
    pub out: PathBuf,
    pub csv: Option<PathBuf>,
}

pub fn cmd_plot(args: &PlotArgs) -> Result<String, CliError> {
    if args.inputs.is_empty() {
        return Err(CliError::Usage("plot needs at least one --input".into()));
    }
    if args.error_lines && args.inputs.len() != 2 {
        return Err(CliError::Usage("--error-lines needs exactly two inputs".into()));
    }
    let spec = PlotSpec {
        title: args.title.clone(),
        point_radius: args.point_radius,
        zoom: args.zoom,
        ..PlotSpec::default()
    };
    let mut tables = Vec::with_capacity(args.inputs.len());
    for (label, t) in &args.inputs {
        let ids: Option<Vec<String>> = tables.first().map(|(_, t): &(String, Table)| t.rows.keys().cloned().collect());
        tables.push((label.clone(), t.load_table(ids.as_deref())?));
    }
    let series: Vec<Series> = tables
        .iter()
        .map(|(label, t)| Series {
            label: label.clone(),
            points: t.rows.iter().map(|(id, d)| (id.clone(), *d)).collect(),
        })
        .collect();
    let (svg, drawn) = if args.error_lines {
        let (mut a, mut b) = (tables[0].1.rows.clone(), tables[1].1.rows.clone());
        intersect(&mut a, &mut b);
        if a.is_empty() {
            return Err(CliError::Invalid("the two inputs share no ids".into()));
        }
        let errors = pairwise_errors(&DistributionMatrix::from_table(&a), &DistributionMatrix::from_table(&b))?;
        let pairs: Vec<ErrorPair> = errors
            .into_iter()
            .map(|e| ErrorPair {
                reference: a[&e.id],
                candidate: b[&e.id],
                distance: e.norm,
                id: e.id,
            })
            .collect();
        let n = pairs.len();
        (render_error_plot(&pairs, [&tables[0].0, &tables[1].0], &spec)?, format!("{n} error lines"))
    } else {
        let n: usize = series.iter().map(|s| s.points.len()).sum();
        (render_scatter(&series, &spec)?, format!("{n} points"))
    };
    write_atomic(&args.out, svg.as_bytes())?;
    if let Some(csv) = &args.csv {
        write_atomic(csv, csv_sidecar(&series, &spec)?.as_bytes())?;
    }
    Ok(format!("{drawn} -> {}", args.out.display()))
}

/// One line of a soft-label training file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabelRecord {
    pub id: String,
    pub premise: String,
    pub hypothesis: String,
    /// Probabilities for (entailment, neutral, contradiction).
    pub soft_label: JudgmentDistribution,
    /// Digest of the file the soft label came from.
    pub source_digest: String,
}

#[derive(Debug, Clone)]
pub struct ExportArgs {
    pub source: TableSpec,
    /// Item texts; when absent the source must be a dataset file.
    pub items: Option<TableSpec>,
    pub out: PathBuf,
}

/// Writes one training record per soft label, ascending by id.
pub fn cmd_export_softlabels(args: &ExportArgs) -> Result<String, CliError> {
    let source = args.source.load_table(None)?;
    let source_digest = source.digest.clone().unwrap_or_default();
    let items = match (&args.items, &source.dataset) {
        (Some(spec), _) => spec.load_dataset()?,
        (None, Some(ds)) => ds.clone(),
        (None, None) => return Err(CliError::Usage("--items is required when the source has no item texts".into())),
    };
    let missing: Vec<&String> = source.rows.keys().filter(|id| items.item(id).is_none()).collect();
    if !missing.is_empty() {
        return Err(CliError::Invalid(format!(
            "{} soft-label ids have no item text, e.g. {:?}",
            missing.len(),
            &missing[..missing.len().min(5)]
        )));
    }
    let mut out = String::new();
    for (id, d) in &source.rows {
        let item = items.item(id).expect("checked above");
        let rec = SoftLabelRecord {
            id: id.clone(),
            premise: item.premise.clone(),
            hypothesis: item.hypothesis.clone(),
            soft_label: *d,
            source_digest: source_digest.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    write_atomic(&args.out, out.as_bytes())?;
    Ok(format!("{} records -> {} (source {})", source.rows.len(), args.out.display(), &source_digest[..source_digest.len().min(12)]))
}

pub(super) fn digest_of(path: &Path) -> Result<String, CliError> {
    Ok(file_digest(path)?)
}
