//! Run configuration, read from and written to TOML. Every section is
//! optional; unknown keys are rejected.

use std::path::{Path, PathBuf};

use beran_core::bandwidth::BandwidthGrid;
use beran_core::evaluation::{Regime, SimulationConfig, StudyConfig, Variant};
use beran_core::probability::{ClassifierKind, TrainingConfig, PRIOR_NOISE_SD};
use beran_core::synthetic::ModelChoice;
use beran_core::KernelSpec;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads; all cores when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub model: ModelChoice,
    pub simulation: SimulationSection,
    pub smoothing: SmoothingSection,
    pub study: StudySection,
    /// Classifier hyperparameters; the training seed is always derived from `seed`.
    pub training: TrainingConfig,
    pub data: DatasetSchema,
    pub train: TrainSection,
    pub fit: FitSection,
    pub real_data: RealDataSection,
    pub diagnostics: DiagnosticsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            threads: None,
            model: ModelChoice::default(),
            simulation: SimulationSection::default(),
            smoothing: SmoothingSection::default(),
            study: StudySection::default(),
            training: TrainingConfig::default(),
            data: DatasetSchema::default(),
            train: TrainSection::default(),
            fit: FitSection::default(),
            real_data: RealDataSection::default(),
            diagnostics: DiagnosticsSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub n: usize,
    pub replications: usize,
    /// Test covariates; `(0.3, ..), (0.5, ..), (0.7, ..)` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_test: Option<Vec<Vec<f64>>>,
    pub grid_size: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let d = SimulationConfig::default();
        Self { n: d.n, replications: d.replications, x_test: None, grid_size: d.grid_size }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingSection {
    pub bandwidth_grid: BandwidthGrid,
    pub kernel: KernelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    pub variants: Vec<Variant>,
    pub regimes: Vec<Regime>,
    pub baseline: Variant,
    /// Unpaired Welch test instead of the paired t-test.
    pub welch: bool,
    pub nw_bandwidth: f64,
    pub prior_noise_sd: f64,
    pub pilot_size: usize,
    pub plots: bool,
}

impl Default for StudySection {
    fn default() -> Self {
        let d = StudyConfig::default();
        Self {
            variants: d.variants,
            regimes: vec![Regime::Observed, Regime::Missing],
            baseline: Variant::Beran,
            welch: false,
            nw_bandwidth: d.nw_bandwidth,
            prior_noise_sd: PRIOR_NOISE_SD,
            pilot_size: d.pilot_size,
            plots: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NaPolicy {
    #[default]
    DropRow,
    Fail,
}

/// Column mapping of an input CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSchema {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub time_column: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event_column: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probability_column: Option<String>,
    pub covariate_columns: Vec<String>,
    pub na_policy: NaPolicy,
}

impl Default for DatasetSchema {
    fn default() -> Self {
        Self {
            path: None,
            time_column: "time".into(),
            event_column: Some("event".into()),
            probability_column: None,
            covariate_columns: vec!["x1".into()],
            na_policy: NaPolicy::DropRow,
        }
    }
}

impl DatasetSchema {
    /// Column names of the Mayo clinic monoclonal gammopathy data.
    pub fn mgus2() -> Self {
        Self {
            path: None,
            time_column: "futime".into(),
            event_column: Some("death".into()),
            probability_column: None,
            covariate_columns: ["age", "creat", "hgb", "mspike"].map(String::from).to_vec(),
            na_policy: NaPolicy::DropRow,
        }
    }

    /// Schema of samples written by `simulate`.
    pub fn synthetic(dim: usize) -> Self {
        Self { covariate_columns: (1..=dim).map(|k| format!("x{k}")).collect(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.event_column.is_some() == self.probability_column.is_some() {
            return Err(CliError::Config("exactly one of event_column and probability_column must be set".into()));
        }
        if self.covariate_columns.is_empty() {
            return Err(CliError::Config("at least one covariate column is required".into()));
        }
        let mut names: Vec<&str> = std::iter::once(self.time_column.as_str())
            .chain(self.event_column.as_deref())
            .chain(self.probability_column.as_deref())
            .chain(self.covariate_columns.iter().map(String::as_str))
            .collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::Config("column names must be distinct".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub classifier: ClassifierKind,
    /// Fraction held out to report cross-entropy; 0 disables validation.
    pub validation_fraction: f64,
    pub nw_bandwidth: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { classifier: ClassifierKind::Logistic, validation_fraction: 0.0, nw_bandwidth: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    /// Covariate points in the units of the input file.
    pub x: Vec<Vec<f64>>,
    /// Fixed bandwidth on the scaled covariates; cross-validated when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    /// Probability model whose predictions replace the indicators.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    pub grid_size: usize,
}

impl Default for FitSection {
    fn default() -> Self {
        Self { x: vec![vec![0.5]], bandwidth: None, model: None, grid_size: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealDataSection {
    pub splits: usize,
    pub train_fraction: f64,
    pub variants: Vec<Variant>,
    /// Evaluation points in the units of the input file; per-covariate
    /// quartiles when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_points: Option<Vec<Vec<f64>>>,
    pub grid_size: usize,
    pub nw_bandwidth: f64,
}

impl Default for RealDataSection {
    fn default() -> Self {
        Self {
            splits: 10,
            train_fraction: 0.5,
            variants: vec![Variant::Beran, Variant::GbeLinear, Variant::GbeNn],
            test_points: None,
            grid_size: 100,
            nw_bandwidth: 0.3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    pub lemma1: Lemma1Section,
    pub variance: VarianceSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lemma1Section {
    pub datasets: usize,
    pub n_values: Vec<usize>,
}

impl Default for Lemma1Section {
    fn default() -> Self {
        Self { datasets: 1000, n_values: vec![10, 100, 1000] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarianceSection {
    pub n: usize,
    pub replications: usize,
    pub bandwidth: f64,
    pub x: f64,
    /// Time of evaluation; the conditional median when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    /// Grid points for the oracle-versus-hard variance comparison.
    pub grid_points: usize,
}

impl Default for VarianceSection {
    fn default() -> Self {
        Self { n: 4000, replications: 2000, bandwidth: 0.3, x: 0.5, t: None, grid_points: 20 }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }

    pub fn simulation_config(&self) -> SimulationConfig {
        let dim = self.model.as_model().dim();
        SimulationConfig {
            n: self.simulation.n,
            replications: self.simulation.replications,
            seed: self.seed,
            x_test: self.simulation.x_test.clone().unwrap_or_else(|| SimulationConfig::default_x_test(dim)),
            grid_size: self.simulation.grid_size,
        }
    }

    pub fn study_config(&self, regime: Regime) -> StudyConfig {
        StudyConfig {
            variants: self.study.variants.clone(),
            regime,
            bandwidth_grid: self.smoothing.bandwidth_grid.clone(),
            kernel: self.smoothing.kernel,
            training: self.training.clone(),
            nw_bandwidth: self.study.nw_bandwidth,
            prior_noise_sd: self.study.prior_noise_sd,
            pilot_size: self.study.pilot_size,
        }
    }

    /// Training settings with the seed taken from the run seed.
    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig { seed: self.seed, ..self.training.clone() }
    }
}
