//! Command-line layer: configuration, persistence layout and the six subcommands.
//!
//! Every `cmd_*` function takes typed arguments and returns the text it would print, so the
//! commands are usable (and testable) without going through argument parsing.

mod commands;
mod config;
mod estimate;
mod report;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendError;
use crate::data::{load_dataset, ChaosView, DataError, DatasetFormat, JudgmentDistribution, LabeledDataset};
use crate::estimator::{read_mjd_file, EstimateError, MjdRecord};
use crate::io::{file_digest, IoError};
use crate::metrics::{LogBase, MetricConfig, MetricError, SmoothingTarget};
use crate::viz::VizError;

pub use commands::{
    cmd_compare, cmd_export_softlabels, cmd_ingest, cmd_plot, CompareArgs, ExportArgs, IngestArgs, PlotArgs, SoftLabelRecord,
};
pub use config::{BackendKind, BackendSection, BuiltBackend, GridConfig, MockSection, RunConfig};
pub use estimate::{cmd_estimate, CellEntry, EstimateOutcome, Manifest};
pub use report::{cmd_report, FinetuneMetrics, ReportArgs, ReportOutcome, ReportRow, SplitMetrics};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Viz(#[from] VizError),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{failed} of {total} item estimates failed:\n{summary}")]
    Partial { failed: usize, total: usize, summary: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Backend(_) => EXIT_BACKEND,
            CliError::Partial { .. } => EXIT_PARTIAL,
            _ => EXIT_DATA,
        }
    }
}

impl From<EstimateError> for CliError {
    fn from(e: EstimateError) -> Self {
        match e {
            EstimateError::Config(m) => CliError::Usage(m),
            EstimateError::Backend { source, .. } => CliError::Backend(source),
            EstimateError::Io(e) => CliError::Io(e),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

/// A file holding one distribution per item id.
///
/// `format` is `auto` (model-distribution file if it parses as one, else canonical dataset),
/// `mjd`, `uniform` (no file; uniform rows over the ids of the other side), or a dataset
/// format name (`canonical`, `chaos-nli`, `varierr`) with an optional ChaosNLI `view`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSpec {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "auto")]
    pub format: String,
    #[serde(default)]
    pub view: Option<String>,
}

fn auto() -> String {
    "auto".into()
}

impl TableSpec {
    pub fn new(path: impl Into<PathBuf>, format: &str) -> Self {
        Self {
            path: Some(path.into()),
            format: format.into(),
            view: None,
        }
    }

    pub fn uniform() -> Self {
        Self {
            path: None,
            format: "uniform".into(),
            view: None,
        }
    }

    pub fn with_view(mut self, view: &str) -> Self {
        self.view = Some(view.into());
        self
    }

    pub fn is_uniform(&self) -> bool {
        self.format == "uniform"
    }

    fn path(&self) -> Result<&Path, CliError> {
        self.path
            .as_deref()
            .ok_or_else(|| CliError::Usage(format!("a path is required for format {:?}", self.format)))
    }

    pub fn dataset_format(&self) -> Result<DatasetFormat, CliError> {
        let format: DatasetFormat = self.format.parse().map_err(CliError::Usage)?;
        match (format, &self.view) {
            (_, None) => Ok(format),
            (DatasetFormat::ChaosNli(_), Some(v)) => Ok(DatasetFormat::ChaosNli(v.parse::<ChaosView>().map_err(CliError::Usage)?)),
            (_, Some(_)) => Err(CliError::Usage(format!("--view only applies to chaos-nli files, not {:?}", self.format))),
        }
    }

    pub fn load_dataset(&self) -> Result<LabeledDataset, CliError> {
        let format = if self.format == "auto" {
            DatasetFormat::Canonical
        } else {
            self.dataset_format()?
        };
        Ok(load_dataset(self.path()?, format)?)
    }

    pub fn digest(&self) -> Result<Option<String>, CliError> {
        match &self.path {
            Some(p) => Ok(Some(file_digest(p)?)),
            None => Ok(None),
        }
    }

    /// Loads id → distribution. `uniform` tables need the ids of the opposite side.
    pub fn load_table(&self, uniform_ids: Option<&[String]>) -> Result<Table, CliError> {
        if self.is_uniform() {
            let ids = uniform_ids.ok_or_else(|| CliError::Usage("uniform needs another table to take ids from".into()))?;
            return Ok(Table {
                rows: ids.iter().map(|id| (id.clone(), JudgmentDistribution::uniform())).collect(),
                digest: None,
                label: "uniform".into(),
                dataset: None,
            });
        }
        let path = self.path()?;
        let digest = Some(file_digest(path)?);
        let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let as_mjd = |records: Vec<MjdRecord>| -> Result<Table, CliError> {
            let mut rows = BTreeMap::new();
            for r in records {
                if rows.insert(r.id.clone(), r.mjd).is_some() {
                    return Err(CliError::Invalid(format!("{}: duplicate id {:?}", path.display(), r.id)));
                }
            }
            Ok(Table {
                rows,
                digest: digest.clone(),
                label: label.clone(),
                dataset: None,
            })
        };
        match self.format.as_str() {
            "mjd" => as_mjd(read_mjd_file(path)?),
            "auto" => match read_mjd_file(path) {
                Ok(records) if !records.is_empty() => as_mjd(records),
                _ => self.dataset_table(digest, label),
            },
            _ => self.dataset_table(digest, label),
        }
    }

    fn dataset_table(&self, digest: Option<String>, label: String) -> Result<Table, CliError> {
        let ds = self.load_dataset()?;
        Ok(Table {
            rows: ds.distributions().clone(),
            digest,
            label,
            dataset: Some(ds),
        })
    }
}

/// A loaded distribution table with its provenance.
#[derive(Debug, Clone)]
pub struct Table {
    pub rows: BTreeMap<String, JudgmentDistribution>,
    pub digest: Option<String>,
    pub label: String,
    /// Present when the table came from a dataset file (carries item texts).
    pub dataset: Option<LabeledDataset>,
}

/// Smoothing and log-base flags shared by `compare` and `report`.
#[derive(Debug, Clone, Default, Args)]
pub struct MetricFlags {
    /// Run-config file whose `[metrics]` table supplies defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Smoothing added before taking logs in KL and cross-entropy.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Smooth the reference distribution too (default: candidate only).
    #[arg(long)]
    pub smooth_both: bool,
    /// Skip renormalization after smoothing.
    #[arg(long)]
    pub no_renormalize: bool,
    #[arg(long)]
    pub kl_base: Option<LogBase>,
    #[arg(long)]
    pub jsd_base: Option<LogBase>,
}

impl MetricFlags {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<MetricConfig, CliError> {
        let mut m = match &self.config {
            Some(p) => RunConfig::load(p)?.metrics,
            None => MetricConfig::default(),
        };
        if let Some(e) = self.epsilon {
            m.smoothing.epsilon = e;
        }
        if self.smooth_both {
            m.smoothing.applied_to = SmoothingTarget::Both;
        }
        if self.no_renormalize {
            m.smoothing.renormalize = false;
        }
        if let Some(b) = self.kl_base {
            m.kl_base = b;
        }
        if let Some(b) = self.jsd_base {
            m.jsd_base = b;
        }
        m.smoothing.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(m)
    }
}

#[derive(Debug, Parser)]
#[command(name = "hlv", version, about = "Estimate and evaluate NLI label distributions from LLM first-token scores")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a dataset to the canonical layout, optionally aligning and splitting it.
    Ingest(IngestCli),
    /// Query a backend over the configured grid and write one distribution file per cell.
    Estimate(EstimateCli),
    /// Compare a candidate distribution table against a reference table.
    Compare(CompareCli),
    /// Draw ternary scatter or pairwise-error figures.
    Plot(PlotCli),
    /// Write a soft-label training file.
    ExportSoftlabels(ExportCli),
    /// Aggregate estimate cells (and fine-tuning metrics) into one table.
    Report(ReportCli),
}

#[derive(Debug, Args)]
pub struct IngestCli {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "canonical")]
    pub format: String,
    #[arg(long)]
    pub view: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep only ids also present in this file; explanations are taken from either side.
    #[arg(long)]
    pub align: Option<PathBuf>,
    #[arg(long, default_value = "canonical")]
    pub align_format: String,
    #[arg(long)]
    pub align_view: Option<String>,
    /// Keep only items with exactly this many explanations (applies with --align).
    #[arg(long)]
    pub explanation_count: Option<usize>,
    /// Split the items left out by --align into dev/test files in this directory.
    #[arg(long)]
    pub remainder_out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Default, Args)]
pub struct EstimateCli {
    /// Run-config file (TOML). Flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset with items and explanations.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub input_format: Option<String>,
    #[arg(long)]
    pub explanation_count: Option<usize>,
    /// Replaces the grid's prompt types (repeatable).
    #[arg(long = "prompt-type")]
    pub prompt_types: Vec<String>,
    /// Replaces the grid's explanation modes: serial, parallel, k<N> (repeatable).
    #[arg(long = "mode")]
    pub modes: Vec<String>,
    /// Replaces the grid's transforms: normalize, softmax (repeatable).
    #[arg(long = "transform")]
    pub transforms: Vec<String>,
    /// Replaces the softmax temperature list (repeatable).
    #[arg(long = "temperature")]
    pub temperatures: Vec<f64>,
    /// http, mock-position-biased or mock-label-faithful.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long)]
    pub no_traces: bool,
}

#[derive(Debug, Args)]
pub struct CompareCli {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long, default_value = "auto")]
    pub reference_format: String,
    #[arg(long)]
    pub reference_view: Option<String>,
    /// Candidate file; omit with --candidate-format uniform.
    #[arg(long)]
    pub candidate: Option<PathBuf>,
    #[arg(long, default_value = "auto")]
    pub candidate_format: String,
    #[arg(long)]
    pub candidate_view: Option<String>,
    /// Compare on the shared ids instead of requiring identical id sets.
    #[arg(long)]
    pub intersect: bool,
    /// Add accuracy / F1 of the candidate argmax against the reference argmax.
    #[arg(long)]
    pub classify: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub metrics: MetricFlags,
}

#[derive(Debug, Args)]
pub struct PlotCli {
    /// `[LABEL=]PATH`, repeatable.
    #[arg(long = "input")]
    pub inputs: Vec<String>,
    #[arg(long, default_value = "auto")]
    pub format: String,
    #[arg(long)]
    pub view: Option<String>,
    /// Draw lines between the two inputs' points for each shared id.
    #[arg(long)]
    pub error_lines: bool,
    #[arg(long, default_value_t = 1.0)]
    pub zoom: f64,
    #[arg(long, default_value = "")]
    pub title: String,
    #[arg(long, default_value_t = 3.0)]
    pub point_radius: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write raw coordinates as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportCli {
    /// Distribution source (model-distribution file or dataset).
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long, default_value = "auto")]
    pub source_format: String,
    #[arg(long)]
    pub source_view: Option<String>,
    /// Item texts; defaults to the source when it is a dataset.
    #[arg(long)]
    pub items: Option<PathBuf>,
    #[arg(long, default_value = "canonical")]
    pub items_format: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportCli {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long, default_value = "auto")]
    pub reference_format: String,
    #[arg(long)]
    pub reference_view: Option<String>,
    /// Fine-tuning metrics JSON files (repeatable).
    #[arg(long = "finetune")]
    pub finetune: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub metrics: MetricFlags,
}

fn spec(path: Option<PathBuf>, format: String, view: Option<String>) -> TableSpec {
    TableSpec { path, format, view }
}

fn parse_input(s: &str) -> (String, PathBuf) {
    match s.split_once('=') {
        Some((label, path)) if !label.is_empty() => (label.to_string(), PathBuf::from(path)),
        _ => {
            let p = PathBuf::from(s);
            let label = p.file_stem().map(|x| x.to_string_lossy().into_owned()).unwrap_or_else(|| s.to_string());
            (label, p)
        }
    }
}

/// Dispatches a parsed command and returns the text to print.
pub fn dispatch(command: Command) -> Result<String, CliError> {
    match command {
        Command::Ingest(a) => cmd_ingest(&IngestArgs {
            input: TableSpec {
                path: Some(a.input),
                format: a.format,
                view: a.view,
            },
            out: a.out,
            align: a.align.map(|p| spec(Some(p), a.align_format, a.align_view)),
            explanation_count: a.explanation_count,
            remainder_out_dir: a.remainder_out_dir,
            split_seed: a.split_seed,
        }),
        Command::Estimate(a) => {
            let config = RunConfig::resolve(&a)?;
            let outcome = cmd_estimate(&config)?;
            Ok(outcome.summary())
        }
        Command::Compare(a) => {
            let candidate = spec(a.candidate, a.candidate_format, a.candidate_view);
            cmd_compare(&CompareArgs {
                reference: spec(Some(a.reference), a.reference_format, a.reference_view),
                candidate,
                metrics: a.metrics.resolve()?,
                intersect: a.intersect,
                classify: a.classify,
                out_dir: a.out,
            })
            .map(|r| r.summary_line())
        }
        Command::Plot(a) => cmd_plot(&PlotArgs {
            inputs: a
                .inputs
                .iter()
                .map(|s| {
                    let (label, path) = parse_input(s);
                    (label, spec(Some(path), a.format.clone(), a.view.clone()))
                })
                .collect(),
            error_lines: a.error_lines,
            zoom: a.zoom,
            title: a.title,
            point_radius: a.point_radius,
            out: a.out,
            csv: a.csv,
        }),
        Command::ExportSoftlabels(a) => cmd_export_softlabels(&ExportArgs {
            source: spec(Some(a.source), a.source_format, a.source_view),
            items: a.items.map(|p| spec(Some(p), a.items_format, None)),
            out: a.out,
        }),
        Command::Report(a) => cmd_report(&ReportArgs {
            manifest: a.manifest,
            reference: spec(Some(a.reference), a.reference_format, a.reference_view),
            finetune: a.finetune,
            metrics: a.metrics.resolve()?,
            out_dir: a.out,
        })
        .map(|r| r.table),
    }
}

/// Parses `args` (including the program name), runs the command, prints its output, and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(text) => {
            if !text.is_empty() {
                println!("{}", text.trim_end());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
