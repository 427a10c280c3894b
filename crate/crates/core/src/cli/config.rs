use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CliError, EstimateCli, TableSpec};
use crate::backend::{BackendConfig, HttpBackend, MockBackend, ResponseCache, ScoreBackend, ScoreSemantics};
use crate::estimator::{EstimationConfig, NegativePolicy, TransformConfig, TransformMethod, DEFAULT_TEMPERATURE};
use crate::io::{read_to_string, sha256_hex};
use crate::metrics::MetricConfig;
use crate::prompting::{option_mappings, ExplanationMode, OptionMapping, PromptType, TemplateVersion};

/// The estimation grid: every prompt type × mode × transform (× temperature for softmax).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub prompt_types: Vec<PromptType>,
    /// Used by explanation-taking prompt types only.
    pub modes: Vec<ExplanationMode>,
    pub transforms: Vec<TransformMethod>,
    pub temperatures: Vec<f64>,
    pub negative_policy: NegativePolicy,
    /// Defaults to all six letter→label bijections.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mappings: Option<Vec<OptionMapping>>,
    pub template: TemplateVersion,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            prompt_types: vec![PromptType::WithExplanations],
            modes: vec![ExplanationMode::Serial],
            transforms: vec![TransformMethod::Normalize],
            temperatures: vec![DEFAULT_TEMPERATURE],
            negative_policy: NegativePolicy::ClampEpsilon,
            mappings: None,
            template: TemplateVersion::V1,
        }
    }
}

impl GridConfig {
    pub fn cells(&self) -> Result<Vec<EstimationConfig>, CliError> {
        let mut transforms = Vec::new();
        for method in &self.transforms {
            match method {
                TransformMethod::Normalize => transforms.push(TransformConfig {
                    method: TransformMethod::Normalize,
                    negative_policy: self.negative_policy,
                    ..TransformConfig::default()
                }),
                TransformMethod::Softmax => {
                    for t in &self.temperatures {
                        transforms.push(TransformConfig {
                            negative_policy: self.negative_policy,
                            ..TransformConfig::softmax(*t)
                        });
                    }
                }
            }
        }
        let mappings = self.mappings.clone().unwrap_or_else(option_mappings);
        let mut cells = Vec::new();
        for ty in &self.prompt_types {
            let modes: Vec<Option<ExplanationMode>> = if ty.uses_explanations() {
                self.modes.iter().copied().map(Some).collect()
            } else {
                vec![None]
            };
            for mode in modes {
                for transform in &transforms {
                    let cell = EstimationConfig {
                        prompt_type: *ty,
                        mode,
                        transform: *transform,
                        mappings: mappings.clone(),
                        template: self.template,
                    };
                    cell.validate()?;
                    if !cells.contains(&cell) {
                        cells.push(cell);
                    }
                }
            }
        }
        if cells.is_empty() {
            return Err(CliError::Usage("the estimation grid is empty".into()));
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    #[default]
    Http,
    MockPositionBiased,
    MockLabelFaithful,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(BackendKind::Http),
            "mock-position-biased" => Ok(BackendKind::MockPositionBiased),
            "mock-label-faithful" => Ok(BackendKind::MockLabelFaithful),
            other => Err(format!("unknown backend {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockSection {
    /// Per letter for the position-biased mock, per label (E, N, C) for the label-faithful one.
    pub scores: [f64; 3],
    pub semantics: ScoreSemantics,
}

impl Default for MockSection {
    fn default() -> Self {
        Self {
            scores: [3.0, 2.0, 1.0],
            semantics: ScoreSemantics::RawLogit,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    /// Response cache file; defaults to `cache.jsonl` in the output directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
    pub http: BackendConfig,
    pub mock: MockSection,
}

pub enum BuiltBackend {
    Http(Box<HttpBackend>),
    Mock(MockBackend),
}

impl BuiltBackend {
    pub fn as_dyn(&self) -> &dyn ScoreBackend {
        match self {
            BuiltBackend::Http(b) => b.as_ref(),
            BuiltBackend::Mock(b) => b,
        }
    }

    pub fn max_in_flight(&self) -> usize {
        match self {
            BuiltBackend::Http(b) => b.config().max_in_flight,
            BuiltBackend::Mock(_) => 4,
        }
    }

    /// Digest of everything about the backend that can change its answers.
    pub fn digest(&self) -> String {
        match self {
            BuiltBackend::Http(b) => b.config().digest(),
            BuiltBackend::Mock(b) => sha256_hex(b.id().as_bytes()),
        }
    }

    pub fn network_calls(&self) -> Option<usize> {
        match self {
            BuiltBackend::Http(b) => Some(b.network_calls()),
            BuiltBackend::Mock(_) => None,
        }
    }
}

impl BackendSection {
    pub fn build(&self, output_dir: &Path) -> Result<BuiltBackend, CliError> {
        Ok(match self.kind {
            BackendKind::Http => {
                let cache_path = self.cache.clone().unwrap_or_else(|| output_dir.join("cache.jsonl"));
                let cache = ResponseCache::open(&cache_path)?;
                BuiltBackend::Http(Box::new(
                    HttpBackend::new(self.http.clone(), Some(cache)).map_err(|e| CliError::Usage(e.to_string()))?,
                ))
            }
            BackendKind::MockPositionBiased => {
                BuiltBackend::Mock(MockBackend::position_biased(self.mock.scores).with_semantics(self.mock.semantics))
            }
            BackendKind::MockLabelFaithful => {
                BuiltBackend::Mock(MockBackend::label_faithful(self.mock.scores).with_semantics(self.mock.semantics))
            }
        })
    }
}

/// Everything one `estimate` run needs. Loaded from TOML; flags override file values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Keep only items with exactly this many explanations.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explanation_count: Option<usize>,
    pub split_seed: u64,
    pub write_traces: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<TableSpec>,
    pub grid: GridConfig,
    pub backend: BackendSection,
    pub metrics: MetricConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: None,
            explanation_count: None,
            split_seed: 0,
            write_traces: true,
            input: None,
            grid: GridConfig::default(),
            backend: BackendSection::default(),
            metrics: MetricConfig::default(),
        }
    }
}

fn parse_list<T: std::str::FromStr<Err = String>>(values: &[String]) -> Result<Vec<T>, CliError> {
    values.iter().map(|v| v.parse().map_err(CliError::Usage)).collect()
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::from_toml_str(&read_to_string(path)?).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// Defaults, then the `--config` file, then flags.
    pub fn resolve(args: &EstimateCli) -> Result<Self, CliError> {
        let mut c = match &args.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        c.apply_flags(args)?;
        Ok(c)
    }

    pub fn apply_flags(&mut self, a: &EstimateCli) -> Result<(), CliError> {
        if let Some(p) = &a.out {
            self.output_dir = Some(p.clone());
        }
        if let Some(p) = &a.input {
            let format = a.input_format.clone().unwrap_or_else(|| "canonical".into());
            self.input = Some(TableSpec::new(p, &format));
        } else if let (Some(f), Some(input)) = (&a.input_format, self.input.as_mut()) {
            input.format = f.clone();
        }
        if a.explanation_count.is_some() {
            self.explanation_count = a.explanation_count;
        }
        if !a.prompt_types.is_empty() {
            self.grid.prompt_types = parse_list(&a.prompt_types)?;
        }
        if !a.modes.is_empty() {
            self.grid.modes = parse_list(&a.modes)?;
        }
        if !a.transforms.is_empty() {
            self.grid.transforms = parse_list(&a.transforms)?;
        }
        if !a.temperatures.is_empty() {
            self.grid.temperatures = a.temperatures.clone();
        }
        if let Some(k) = &a.backend {
            self.backend.kind = k.parse().map_err(CliError::Usage)?;
        }
        if let Some(e) = &a.endpoint {
            self.backend.http.endpoint = e.clone();
        }
        if let Some(m) = &a.model {
            self.backend.http.model = m.clone();
        }
        if let Some(p) = &a.cache {
            self.backend.cache = Some(p.clone());
        }
        if let Some(n) = a.max_in_flight {
            self.backend.http.max_in_flight = n;
        }
        if a.no_traces {
            self.write_traces = false;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_flags_over_file_over_defaults() {
        let file = r#"
output_dir = "from-file"
[grid]
prompt_types = ["without-explanations", "with-explanations"]
modes = ["parallel", "k2"]
[backend]
kind = "mock-label-faithful"
[backend.http]
model = "file-model"
max_in_flight = 2
"#;
        let mut c = RunConfig::from_toml_str(file).unwrap();
        assert_eq!(c.grid.modes, vec![ExplanationMode::Parallel, ExplanationMode::KAtATime(2)]);
        assert_eq!(c.backend.http.top_candidates, 20);
        c.apply_flags(&EstimateCli {
            out: Some("from-flag".into()),
            model: Some("flag-model".into()),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(c.output_dir.as_deref(), Some(Path::new("from-flag")));
        assert_eq!(c.backend.http.model, "flag-model");
        assert_eq!(c.backend.http.max_in_flight, 2);
        assert_eq!(c.backend.kind, BackendKind::MockLabelFaithful);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_toml_str("outptu_dir = 'x'"), Err(CliError::Usage(_))));
        assert!(RunConfig::from_toml_str("[backend.http]\ntoken = 'secret'").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut c = RunConfig::default();
        c.grid.transforms = vec![TransformMethod::Normalize, TransformMethod::Softmax];
        c.grid.temperatures = vec![5.0, 10.0, 20.0];
        c.input = Some(TableSpec::new("items.jsonl", "canonical"));
        let back = RunConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn grid_expansion() {
        let g = GridConfig {
            prompt_types: vec![PromptType::WithoutExplanations, PromptType::WithExplicitExplanations],
            modes: vec![ExplanationMode::Serial, ExplanationMode::Parallel],
            transforms: vec![TransformMethod::Normalize, TransformMethod::Softmax],
            temperatures: vec![5.0, 10.0, 20.0],
            ..GridConfig::default()
        };
        // without: 1 mode × 4 transforms; explicit: 2 modes × 4 transforms
        assert_eq!(g.cells().unwrap().len(), 4 + 8);
        let empty = GridConfig {
            prompt_types: vec![],
            ..GridConfig::default()
        };
        assert!(matches!(empty.cells(), Err(CliError::Usage(_))));
        let bad = GridConfig {
            transforms: vec![TransformMethod::Softmax],
            temperatures: vec![0.0],
            ..GridConfig::default()
        };
        assert!(bad.cells().is_err());
    }
}
