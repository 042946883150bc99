//! The run configuration: one TOML file describing paths, generator
//! and pipeline knobs, the predictor roster, and the root seed. Flags
//! override config values; unknown keys are rejected so typos fail
//! loudly instead of silently running defaults.

use std::path::{Path, PathBuf};

use roadcast::predictors::{DAY_SECONDS, WEEK_SECONDS};
use roadcast::preprocess::PreprocessConfig;
use roadcast::synthgen::{ModeTemplate, SynthSpec};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every random draw in every stage flows from it.
    pub seed: u64,
    /// Worker threads for the evaluation suite; 0 = one per core.
    #[serde(default)]
    pub workers: usize,
    pub paths: PathsSection,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub preprocess: PreprocessSection,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub test_set: TestSetSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub spectra: SpectraSection,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        config.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        for &a in &self.evaluation.alphas {
            if !(0.0 < a && a < 1.0) {
                return Err(CliError::Usage(format!(
                    "evaluation.alphas: {a} outside the open interval (0, 1)"
                )));
            }
        }
        if self.preprocess.raw_series.is_some() && self.preprocess.raw_grid.is_none() {
            return Err(CliError::Usage(
                "preprocess.raw_series needs a [preprocess.raw_grid] section \
                 (start_epoch, resolution, n_intervals)"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Resolve a configured path against the config file's directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn path_or(&self, configured: &Option<PathBuf>, default_name: &str) -> PathBuf {
        match configured {
            Some(p) => self.resolve(p),
            None => self.output_dir().join(default_name),
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.paths.output_dir)
    }

    pub fn graph_path(&self) -> PathBuf {
        self.path_or(&self.paths.graph, "graph.csv")
    }

    pub fn truth_path(&self) -> PathBuf {
        self.path_or(&self.paths.truth, "truth.mat")
    }

    pub fn observed_path(&self) -> PathBuf {
        self.path_or(&self.paths.observed, "observed.mat")
    }

    pub fn cleaned_path(&self) -> PathBuf {
        self.path_or(&self.paths.cleaned, "cleaned.mat")
    }

    pub fn cleaned_graph_path(&self) -> PathBuf {
        self.path_or(&self.paths.cleaned_graph, "cleaned_graph.csv")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.path_or(&self.paths.models_dir, "models")
    }

    /// The matrix the fit stage trains on: an explicit `fit.input` wins;
    /// otherwise the cleaned matrix if the preprocess stage produced
    /// one, the observed matrix next, the truth matrix last.
    pub fn fit_input(&self) -> Result<PathBuf, CliError> {
        if let Some(p) = &self.fit.input {
            return require_file(&self.resolve(p), "fit.input");
        }
        for candidate in [self.cleaned_path(), self.observed_path(), self.truth_path()] {
            if candidate.is_file() {
                return Ok(candidate);
            }
        }
        Err(CliError::Usage(format!(
            "no fit input found: none of {}, {}, {} exist — run `synth` (and optionally \
             `preprocess`) first, or set fit.input",
            self.cleaned_path().display(),
            self.observed_path().display(),
            self.truth_path().display(),
        )))
    }
}

/// Fail with a usage error when an input file a command depends on is
/// absent, naming the config key that points at it.
pub fn require_file(path: &Path, role: &str) -> Result<PathBuf, CliError> {
    if path.is_file() {
        Ok(path.to_path_buf())
    } else {
        Err(CliError::Usage(format!("{role}: file {} does not exist", path.display())))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    /// Every artifact lands here unless overridden below.
    pub output_dir: PathBuf,
    pub graph: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub observed: Option<PathBuf>,
    pub cleaned: Option<PathBuf>,
    pub cleaned_graph: Option<PathBuf>,
    pub models_dir: Option<PathBuf>,
}

/// Overrides over the default synthetic world; anything omitted keeps
/// the preset value.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n_vertices: Option<usize>,
    pub avg_out_degree: Option<f64>,
    pub planar_layout: Option<bool>,
    pub duration_days: Option<u32>,
    pub resolution: Option<u32>,
    pub start_epoch: Option<i64>,
    pub k_true: Option<usize>,
    pub templates: Option<Vec<TemplateSection>>,
    pub base_log_mean: Option<f64>,
    pub base_log_std: Option<f64>,
    pub noise_std: Option<f64>,
    pub transient_rate_per_day: Option<f64>,
    pub transient_magnitude: Option<f64>,
    pub transient_duration_mean: Option<f64>,
    pub transient_radius: Option<usize>,
    pub missing_rate: Option<f64>,
    pub blackout_rate: Option<f64>,
    pub blackout_mean_intervals: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSection {
    pub period_seconds: u64,
    /// Amplitude per harmonic of the period, in seconds.
    pub harmonics: Vec<f64>,
}

impl SynthSection {
    pub fn build_spec(&self, seed: u64) -> SynthSpec {
        let mut spec = SynthSpec::default_world(
            self.n_vertices.unwrap_or(120),
            self.duration_days.unwrap_or(14),
            seed,
        );
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { spec.$field = v; })*
            };
        }
        apply!(
            avg_out_degree,
            planar_layout,
            resolution,
            start_epoch,
            k_true,
            base_log_mean,
            base_log_std,
            noise_std,
            transient_rate_per_day,
            transient_magnitude,
            transient_duration_mean,
            transient_radius,
            missing_rate,
            blackout_rate,
            blackout_mean_intervals
        );
        if let Some(templates) = &self.templates {
            spec.templates = templates
                .iter()
                .map(|t| ModeTemplate {
                    period_seconds: t.period_seconds,
                    harmonics: t.harmonics.clone(),
                })
                .collect();
        }
        spec
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessSection {
    /// Raw recordings CSV (`segment_id,timestamp,travel_seconds`); when
    /// absent the observed matrix is re-read as gridded samples.
    pub raw_series: Option<PathBuf>,
    /// Grid of the raw recordings; required with `raw_series`.
    pub raw_grid: Option<RawGridSection>,
    pub snap_tolerance: Option<f64>,
    pub interp_window: Option<f64>,
    pub max_gap_intervals: Option<usize>,
    pub outlier_fraction: Option<f64>,
    pub blackout_hours: Option<f64>,
    pub max_missing_fraction: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawGridSection {
    pub start_epoch: i64,
    pub resolution: u32,
    pub n_intervals: usize,
}

impl PreprocessSection {
    pub fn build_config(&self, grid: roadcast::TimeGrid) -> PreprocessConfig {
        let mut cfg = PreprocessConfig::new(grid);
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        apply!(
            snap_tolerance,
            interp_window,
            max_gap_intervals,
            outlier_fraction,
            blackout_hours,
            max_missing_fraction
        );
        cfg
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    /// Spatial model order k.
    pub rank: Option<usize>,
    /// Training window in days from the start of the input matrix;
    /// omitted = the whole input.
    pub training_days: Option<u32>,
    /// Low-rank cycle models to fit: "daily", "weekly", or "<seconds>s".
    pub cycles: Option<Vec<String>>,
    /// Full-rank (identity-basis) cycle models to fit, same syntax.
    pub fullrank_cycles: Option<Vec<String>>,
    /// Also fit the non-periodic low-rank model (single global phase).
    pub static_model: Option<bool>,
    pub input: Option<PathBuf>,
}

pub const DEFAULT_RANK: usize = 25;

impl FitSection {
    pub fn rank(&self) -> usize {
        self.rank.unwrap_or(DEFAULT_RANK)
    }

    pub fn cycles(&self) -> Vec<String> {
        self.cycles.clone().unwrap_or_else(|| vec!["daily".into(), "weekly".into()])
    }

    pub fn fullrank_cycles(&self) -> Vec<String> {
        self.fullrank_cycles.clone().unwrap_or_default()
    }

    pub fn static_model(&self) -> bool {
        self.static_model.unwrap_or(true)
    }
}

/// Parse a cycle name: "daily", "weekly", or "<seconds>s".
pub fn cycle_period_seconds(name: &str) -> Result<u64, CliError> {
    match name {
        "daily" => Ok(DAY_SECONDS),
        "weekly" => Ok(WEEK_SECONDS),
        other => {
            other.strip_suffix('s').and_then(|s| s.parse().ok()).filter(|&p| p > 0).ok_or_else(
                || {
                    CliError::Usage(format!(
                        "cycle {other:?} is not \"daily\", \"weekly\", or \"<seconds>s\""
                    ))
                },
            )
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestSetSection {
    pub departure_hours: Option<Vec<u32>>,
    /// Day indices (from the start of the truth grid) queries depart on;
    /// omitted = every full day after the training window except the
    /// last (kept as routing horizon).
    pub days: Option<Vec<u32>>,
    pub min_travel_seconds: Option<f64>,
    pub rest_days: Option<Vec<u32>>,
    /// Betweenness sample size for the inner/outer labelling.
    pub label_sample_size: Option<usize>,
}

pub const DEFAULT_LABEL_SAMPLE: usize = 64;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    /// Upper-quantile levels reported, each in (0, 1).
    pub alphas: Vec<f64>,
    pub hop_bin_min_samples: usize,
    /// Predictor roster by conventional name: realtime, static_oracle,
    /// lag_day, lag_week, lag_<seconds>s, cyclo_daily, cyclo_weekly,
    /// cyclo_<seconds>s, cyclo_fullrank_<cycle>, lowrank_static.
    pub predictors: Vec<String>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            alphas: roadcast::evaluation::DEFAULT_ALPHAS.to_vec(),
            hop_bin_min_samples: roadcast::evaluation::DEFAULT_HOP_BIN_MIN_SAMPLES,
            predictors: [
                "realtime",
                "cyclo_weekly",
                "cyclo_daily",
                "lowrank_static",
                "lag_day",
                "lag_week",
                "static_oracle",
            ]
            .map(String::from)
            .to_vec(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectraSection {
    /// How many leading temporal modes to analyse (default 3).
    pub modes: Option<usize>,
    /// Welch parameters; defaults follow the 10-minute/4-week preset.
    pub segment_len: Option<usize>,
    pub overlap: Option<usize>,
    pub nfft: Option<usize>,
}
