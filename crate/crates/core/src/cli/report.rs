use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::commands::digest_of;
use super::estimate::Manifest;
use super::{CliError, TableSpec};
use crate::estimator::read_mjd_file;
use crate::io::{read_to_string, write_atomic};
use crate::metrics::{dataset_report, MeanMetrics, MetricConfig};

/// Scores of a fine-tuned classifier on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitMetrics {
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    pub kl: f64,
    pub ce: f64,
}

/// The metrics file written by the fine-tuning harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneMetrics {
    /// Row name for runs that do not come from an estimate cell (e.g. human labels).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev: Option<SplitMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<SplitMetrics>,
    /// 1-based epoch chosen by dev macro F1.
    pub selected_epoch: usize,
    pub config_digest: String,
    pub training_file_digest: String,
    /// `source_digest` of the exported soft-label records the model was trained on.
    pub source_digest: String,
}

impl FinetuneMetrics {
    pub fn validate(&self) -> Result<(), String> {
        if self.dev.is_none() && self.test.is_none() {
            return Err("no split metrics".into());
        }
        for s in self.dev.iter().chain(&self.test) {
            if [s.accuracy, s.weighted_f1, s.macro_f1, s.kl, s.ce].iter().any(|v| !v.is_finite()) {
                return Err("non-finite metric value".into());
            }
        }
        if self.config_digest.is_empty() || self.training_file_digest.is_empty() || self.source_digest.is_empty() {
            return Err("missing digest".into());
        }
        if self.selected_epoch == 0 {
            return Err("selected_epoch is 1-based".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub means: Option<MeanMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance_correlation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finetune: Option<FinetuneMetrics>,
}

#[derive(Debug, Clone)]
pub struct ReportArgs {
    pub manifest: PathBuf,
    pub reference: TableSpec,
    pub finetune: Vec<PathBuf>,
    pub metrics: MetricConfig,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ReportOutcome {
    pub rows: Vec<ReportRow>,
    pub table: String,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

/// Joins every estimate cell of a manifest with the reference table (and, when given,
/// fine-tuning metrics whose `source_digest` matches a cell's distribution file).
pub fn cmd_report(args: &ReportArgs) -> Result<ReportOutcome, CliError> {
    let manifest = Manifest::load(&args.manifest)?;
    if manifest.cells.is_empty() {
        return Err(CliError::Invalid(format!("{}: manifest has no cells", args.manifest.display())));
    }
    let base = args.manifest.parent().map(PathBuf::from).unwrap_or_default();
    let reference = args.reference.load_table(None)?;

    let mut finetune: BTreeMap<String, FinetuneMetrics> = BTreeMap::new();
    for path in &args.finetune {
        let m: FinetuneMetrics = serde_json::from_str(&read_to_string(path)?)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        m.validate().map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
        if let Some(prev) = finetune.get(&m.source_digest) {
            if prev != &m {
                return Err(CliError::Invalid(format!(
                    "{}: conflicting fine-tuning metrics for source {}",
                    path.display(),
                    m.source_digest
                )));
            }
        }
        finetune.insert(m.source_digest.clone(), m);
    }

    let mut seen_cells: BTreeMap<&str, Option<&str>> = BTreeMap::new();
    let mut rows = Vec::new();
    for cell in &manifest.cells {
        if let Some(prev) = seen_cells.insert(&cell.config_digest, cell.mjd_digest.as_deref()) {
            if prev != cell.mjd_digest.as_deref() {
                return Err(CliError::Invalid(format!("conflicting digests for cell {}", cell.config_digest)));
            }
            continue;
        }
        let Some(file) = &cell.mjd_file else {
            rows.push(ReportRow {
                label: cell.label.clone(),
                config_digest: Some(cell.config_digest.clone()),
                n: Some(0),
                means: None,
                distance_correlation: None,
                finetune: None,
            });
            continue;
        };
        let path = base.join(file);
        let actual = digest_of(&path)?;
        if Some(actual.as_str()) != cell.mjd_digest.as_deref() {
            return Err(CliError::Invalid(format!(
                "{} does not match the digest recorded in the manifest",
                path.display()
            )));
        }
        let mjd: BTreeMap<_, _> = read_mjd_file(&path)?.into_iter().map(|r| (r.id, r.mjd)).collect();
        let missing: Vec<&String> = mjd.keys().filter(|id| !reference.rows.contains_key(*id)).collect();
        if !missing.is_empty() {
            return Err(CliError::Invalid(format!(
                "{} ids of {} are missing from the reference, e.g. {:?}",
                missing.len(),
                path.display(),
                &missing[..missing.len().min(5)]
            )));
        }
        let hjd: BTreeMap<_, _> = reference.rows.iter().filter(|(id, _)| mjd.contains_key(*id)).map(|(k, v)| (k.clone(), *v)).collect();
        let report = dataset_report(&hjd, &mjd, &args.metrics, None)?;
        rows.push(ReportRow {
            label: cell.label.clone(),
            config_digest: Some(cell.config_digest.clone()),
            n: Some(report.n),
            means: Some(report.means),
            distance_correlation: Some(report.distance_correlation),
            finetune: finetune.remove(&actual),
        });
    }
    for (digest, m) in finetune {
        rows.push(ReportRow {
            label: m.label.clone().unwrap_or_else(|| format!("finetune:{}", &digest[..digest.len().min(12)])),
            config_digest: None,
            n: None,
            means: None,
            distance_correlation: None,
            finetune: Some(m),
        });
    }

    let with_ft = rows.iter().any(|r| r.finetune.is_some());
    let mut header = vec!["cell", "n", "KL", "JSD", "TVD", "D.Corr"];
    if with_ft {
        header.extend(["dev W-F1", "dev KL", "dev CE", "test W-F1", "test KL", "test CE"]);
    }
    let mut table = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    let mut csv = header.join(",") + "\n";
    for r in &rows {
        let mut cols = vec![
            r.label.clone(),
            r.n.map_or("-".into(), |n| n.to_string()),
            fmt_opt(r.means.map(|m| m.kl)),
            fmt_opt(r.means.map(|m| m.jsd)),
            fmt_opt(r.means.map(|m| m.tvd)),
            fmt_opt(r.distance_correlation),
        ];
        if with_ft {
            let ft = r.finetune.as_ref();
            for split in [ft.and_then(|f| f.dev.as_ref()), ft.and_then(|f| f.test.as_ref())] {
                cols.push(fmt_opt(split.map(|s| s.weighted_f1)));
                cols.push(fmt_opt(split.map(|s| s.kl)));
                cols.push(fmt_opt(split.map(|s| s.ce)));
            }
        }
        writeln!(table, "| {} |", cols.join(" | ")).unwrap();
        writeln!(csv, "{}", cols.join(",")).unwrap();
    }
    if let Some(dir) = &args.out_dir {
        let json = serde_json::json!({
            "manifest_input_digest": manifest.input_digest,
            "reference_digest": reference.digest,
            "metrics_config": args.metrics,
            "metrics_config_digest": args.metrics.digest(),
            "rows": rows,
        });
        write_atomic(&dir.join("report.json"), (serde_json::to_string_pretty(&json).unwrap() + "\n").as_bytes())?;
        write_atomic(&dir.join("report.csv"), csv.as_bytes())?;
        write_atomic(&dir.join("report.md"), table.as_bytes())?;
    }
    Ok(ReportOutcome { rows, table })
}
