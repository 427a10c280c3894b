use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CliError, RunConfig};
use crate::data::{align_datasets, exactly, PairedDataset};
use crate::estimator::{estimate_dataset, mjd_file_contents, write_trace_file, EstimateError, EstimationConfig, MjdRecord};
use crate::io::{read_to_string, sha256_hex, write_atomic};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub label: String,
    pub config_digest: String,
    pub estimation: EstimationConfig,
    /// Relative to the manifest's directory; absent when every item failed.
    pub mjd_file: Option<String>,
    pub mjd_digest: Option<String>,
    pub trace_file: Option<String>,
    pub records: usize,
    pub failures: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub backend_id: String,
    pub backend_digest: String,
    pub input_path: String,
    pub input_digest: String,
    pub resolved_config: String,
    pub cells: Vec<CellEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        serde_json::from_str(&read_to_string(path)?)
            .map_err(|e| CliError::Invalid(format!("{}: not a manifest: {e}", path.display())))
    }
}

#[derive(Debug)]
pub struct EstimateOutcome {
    pub output_dir: PathBuf,
    pub manifest: Manifest,
    /// Requests that reached the network (HTTP backends only).
    pub network_calls: Option<usize>,
}

impl EstimateOutcome {
    pub fn manifest_path(&self) -> PathBuf {
        self.output_dir.join(MANIFEST_FILE)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.manifest.cells {
            writeln!(
                s,
                "{} {} records={} failures={} -> {}",
                &c.config_digest[..12],
                c.label,
                c.records,
                c.failures.len(),
                c.mjd_file.as_deref().unwrap_or("-")
            )
            .unwrap();
        }
        if let Some(n) = self.network_calls {
            writeln!(s, "network calls: {n}").unwrap();
        }
        write!(s, "manifest: {}", self.manifest_path().display()).unwrap();
        s
    }
}

fn cell_digest(cell: &EstimationConfig, backend_digest: &str, input_digest: &str) -> String {
    let v = serde_json::json!({
        "estimation": cell.digest(),
        "backend": backend_digest,
        "input": input_digest,
    });
    sha256_hex(v.to_string().as_bytes())
}

/// Runs every grid cell over the input dataset and writes, under the output directory:
/// `mjd/<digest>.jsonl` per cell, `traces/<digest>.jsonl` (optional), `manifest.json` and
/// `resolved_config.toml`.
pub fn cmd_estimate(config: &RunConfig) -> Result<EstimateOutcome, CliError> {
    let out = config
        .output_dir
        .clone()
        .ok_or_else(|| CliError::Usage("an output directory is required (--out or output_dir)".into()))?;
    let input = config
        .input
        .as_ref()
        .ok_or_else(|| CliError::Usage("an input dataset is required (--input or [input])".into()))?;
    let cells = config.grid.cells()?;
    let dataset = input.load_dataset()?;
    let input_digest = input.digest()?.unwrap_or_default();
    let paired = match config.explanation_count {
        Some(m) => align_datasets(&dataset, &dataset, Some(&exactly(m))),
        None => PairedDataset::from_single(&dataset),
    };
    if paired.is_empty() {
        return Err(CliError::Invalid("no items to estimate after filtering".into()));
    }
    let backend = config.backend.build(&out)?;
    let backend_digest = backend.digest();

    let mut entries = Vec::with_capacity(cells.len());
    let mut total = 0;
    let mut failed = 0;
    let mut first_error: Option<EstimateError> = None;
    let mut failure_lines = String::new();
    for cell in &cells {
        let digest = cell_digest(cell, &backend_digest, &input_digest);
        let short = &digest[..16];
        log::info!("estimating {} ({short}) over {} items", cell.label(), paired.len());
        let result = estimate_dataset(&paired, cell, backend.as_dyn(), backend.max_in_flight())?;
        total += paired.len();
        failed += result.failures.len();
        for (id, msg) in &result.failures {
            writeln!(failure_lines, "  [{}] {id}: {msg}", cell.label()).unwrap();
        }
        if first_error.is_none() {
            first_error = result.first_error;
        }
        let (mjd_file, mjd_digest, trace_file) = if result.traces.is_empty() {
            (None, None, None)
        } else {
            let records: Vec<MjdRecord> = result
                .traces
                .values()
                .map(|t| MjdRecord::from_trace(t, &digest, Some(&input_digest)))
                .collect();
            let contents = mjd_file_contents(&records);
            let rel = format!("mjd/{short}.jsonl");
            write_atomic(&out.join(&rel), contents.as_bytes())?;
            let trace_rel = if config.write_traces {
                let rel = format!("traces/{short}.jsonl");
                write_trace_file(&out.join(&rel), &result.traces)?;
                Some(rel)
            } else {
                None
            };
            (Some(rel), Some(sha256_hex(contents.as_bytes())), trace_rel)
        };
        entries.push(CellEntry {
            label: cell.label(),
            config_digest: digest,
            estimation: cell.clone(),
            mjd_file,
            mjd_digest,
            trace_file,
            records: result.traces.len(),
            failures: result.failures,
        });
    }

    write_atomic(&out.join(RESOLVED_CONFIG_FILE), config.to_toml().as_bytes())?;
    let manifest = Manifest {
        backend_id: backend.as_dyn().id(),
        backend_digest,
        input_path: input.path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        input_digest,
        resolved_config: RESOLVED_CONFIG_FILE.into(),
        cells: entries,
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write_atomic(&out.join(MANIFEST_FILE), json.as_bytes())?;
    let outcome = EstimateOutcome {
        output_dir: out,
        manifest,
        network_calls: backend.network_calls(),
    };

    if failed == 0 {
        return Ok(outcome);
    }
    if failed == total {
        return Err(first_error.map(CliError::from).unwrap_or_else(|| CliError::Invalid("every item failed".into())));
    }
    Err(CliError::Partial {
        failed,
        total,
        summary: failure_lines.trim_end().to_string(),
    })
}
