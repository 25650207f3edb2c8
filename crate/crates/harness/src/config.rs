//! Experiment configuration files (TOML). Unknown keys are errors and every
//! error names the offending field path.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;
use transductive::{BatchMode, DecisionRule, FiniteDomain, Kernel, MaternNu, NoiseModel};

use crate::embeddings;
use crate::error::{Error, Result};

/// Default cap on the number of domain points (dense covariances are m²).
pub const DEFAULT_MAX_POINTS: usize = 10_000;

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text)
}

pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::config(if path == "." { "<root>".to_string() } else { path }, inner.message().to_string())
    })
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DomainSpec {
    /// Regular grid; the first axis varies slowest.
    Grid {
        lower: Vec<f64>,
        upper: Vec<f64>,
        resolution: usize,
    },
    Embeddings { path: PathBuf },
}

impl DomainSpec {
    pub fn build(&self, field: &str, max_points: usize) -> Result<FiniteDomain> {
        match self {
            DomainSpec::Grid {
                lower,
                upper,
                resolution,
            } => {
                if lower.len() != upper.len() || lower.is_empty() {
                    return Err(Error::config(
                        format!("{field}.upper"),
                        "lower and upper must have the same nonzero length",
                    ));
                }
                let total = (*resolution as u128).checked_pow(lower.len() as u32).unwrap_or(u128::MAX);
                if total > max_points as u128 {
                    return Err(Error::config(
                        format!("{field}.resolution"),
                        format!("{total} points exceed the cap of {max_points}"),
                    ));
                }
                FiniteDomain::grid(lower, upper, *resolution)
                    .map_err(|e| Error::config(format!("{field}.resolution"), e.to_string()))
            }
            DomainSpec::Embeddings { path } => {
                let d = embeddings::load_embeddings(path)?;
                if d.len() > max_points {
                    return Err(Error::config(
                        format!("{field}.path"),
                        format!("{} points exceed the cap of {max_points}", d.len()),
                    ));
                }
                Ok(d)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelSpec {
    Gaussian {
        lengthscale: f64,
        #[serde(default = "one")]
        output_scale: f64,
    },
    Laplace {
        lengthscale: f64,
        #[serde(default = "one")]
        output_scale: f64,
    },
    Matern {
        nu: f64,
        lengthscale: f64,
        #[serde(default = "one")]
        output_scale: f64,
    },
    Linear {
        #[serde(default = "one")]
        output_scale: f64,
    },
    Embedding {
        #[serde(default = "one")]
        output_scale: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn build(&self, field: &str) -> Result<Kernel> {
        let (kernel, scale) = match *self {
            KernelSpec::Gaussian {
                lengthscale,
                output_scale,
            } => (Kernel::gaussian(lengthscale), output_scale),
            KernelSpec::Laplace {
                lengthscale,
                output_scale,
            } => (Kernel::laplace(lengthscale), output_scale),
            KernelSpec::Matern {
                nu,
                lengthscale,
                output_scale,
            } => {
                let nu = MaternNu::from_value(nu).map_err(|e| Error::config(format!("{field}.nu"), e.to_string()))?;
                (Kernel::matern(nu, lengthscale), output_scale)
            }
            KernelSpec::Linear { output_scale } => (Kernel::linear(), output_scale),
            KernelSpec::Embedding { output_scale } => (Kernel::embedding(None), output_scale),
        };
        let kernel = kernel.with_output_scale(scale);
        kernel.validate().map_err(|e| Error::config(field, e.to_string()))?;
        Ok(kernel)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub variance: f64,
}

/// Homoscedastic variance, optionally overridden inside boxes (later boxes
/// win).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub variance: f64,
    #[serde(default)]
    pub regions: Vec<NoiseRegion>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            variance: 0.01,
            regions: Vec::new(),
        }
    }
}

impl NoiseSpec {
    pub fn build(&self, field: &str, domain: &FiniteDomain) -> Result<NoiseModel> {
        let mut v = vec![self.variance; domain.len()];
        for (k, r) in self.regions.iter().enumerate() {
            if r.lower.len() != domain.dim() || r.upper.len() != domain.dim() {
                return Err(Error::config(
                    format!("{field}.regions[{k}]"),
                    format!("box dimension must be {}", domain.dim()),
                ));
            }
            for i in domain.indices_in_box(&r.lower, &r.upper) {
                v[i] = r.variance;
            }
        }
        NoiseModel::new(v).map_err(|e| Error::config(field, e.to_string()))
    }
}

/// Index set on the domain.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SpaceSpec {
    All,
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Indices { indices: Vec<usize> },
}

impl SpaceSpec {
    pub fn build(&self, field: &str, domain: &FiniteDomain) -> Result<Vec<usize>> {
        let idx = match self {
            SpaceSpec::All => (0..domain.len()).collect(),
            SpaceSpec::Box { lower, upper } => {
                if lower.len() != domain.dim() || upper.len() != domain.dim() {
                    return Err(Error::config(field, format!("box dimension must be {}", domain.dim())));
                }
                domain.indices_in_box(lower, upper)
            }
            SpaceSpec::Indices { indices } => {
                if let Some(bad) = indices.iter().find(|&&i| i >= domain.len()) {
                    return Err(Error::config(
                        format!("{field}.indices"),
                        format!("index {bad} out of range for {} points", domain.len()),
                    ));
                }
                indices.clone()
            }
        };
        if idx.is_empty() {
            return Err(Error::config(field, "selects no points"));
        }
        Ok(idx)
    }
}

pub fn parse_rule(field: &str, name: &str) -> Result<DecisionRule> {
    name.parse::<DecisionRule>().map_err(|e| Error::config(field, e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BatchModeSpec {
    #[default]
    Bace,
    TopB,
}

impl From<BatchModeSpec> for BatchMode {
    fn from(m: BatchModeSpec) -> Self {
        match m {
            BatchModeSpec::Bace => BatchMode::Bace,
            BatchModeSpec::TopB => BatchMode::TopB,
        }
    }
}

fn default_batch() -> usize {
    1
}

fn default_max_points() -> usize {
    DEFAULT_MAX_POINTS
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpExperimentSection {
    pub name: String,
    pub rounds: usize,
    pub seeds: Vec<u64>,
    pub rules: Vec<String>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub batch_mode: BatchModeSpec,
    /// Resample this many targets uniformly each round.
    #[serde(default)]
    pub target_subsample: Option<usize>,
    /// Adds a wall-time column; such output is not reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default = "default_max_points")]
    pub max_points: usize,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpExperimentConfig {
    pub experiment: GpExperimentSection,
    pub domain: DomainSpec,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub sample_space: SpaceSpec,
    pub target_space: SpaceSpec,
}

impl GpExperimentConfig {
    pub fn validate(&self) -> Result<Vec<DecisionRule>> {
        let e = &self.experiment;
        if e.seeds.is_empty() {
            return Err(Error::config("experiment.seeds", "at least one seed is required"));
        }
        if e.rules.is_empty() {
            return Err(Error::config("experiment.rules", "at least one rule is required"));
        }
        if e.batch_size == 0 {
            return Err(Error::config("experiment.batch_size", "must be at least 1"));
        }
        if e.target_subsample == Some(0) {
            return Err(Error::config("experiment.target_subsample", "must be at least 1"));
        }
        e.rules
            .iter()
            .enumerate()
            .map(|(i, r)| parse_rule(&format!("experiment.rules[{i}]"), r))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SafeTask {
    /// 1d task: one function is both objective and constraint.
    Line,
    /// 2d island task.
    Island,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TargetModeSpec {
    #[default]
    Maximizers,
    Expanders,
    Thompson,
}

fn default_beta() -> f64 {
    transductive::safebo::DEFAULT_BETA
}

fn default_thompson() -> usize {
    transductive::safebo::DEFAULT_THOMPSON_SAMPLES
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafeBoSection {
    pub name: String,
    pub task: SafeTask,
    pub rounds: usize,
    pub seeds: Vec<u64>,
    /// `itl`, `vtl`, ... or `safeopt-oracle`, `safeopt`, `safeopt-heuristic`.
    pub methods: Vec<String>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub target_mode: TargetModeSpec,
    #[serde(default = "default_thompson")]
    pub thompson_samples: usize,
    #[serde(default)]
    pub target_cap: Option<usize>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafeBoExperimentConfig {
    pub experiment: SafeBoSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySection {
    pub name: String,
    pub rounds: usize,
    pub seeds: Vec<u64>,
    pub rules: Vec<String>,
    /// Capacity curve length.
    #[serde(default = "default_capacity")]
    pub capacity_budget: usize,
    #[serde(default = "default_threshold")]
    pub threshold_fraction: f64,
    #[serde(default = "default_max_points")]
    pub max_points: usize,
    pub output_dir: PathBuf,
}

fn default_capacity() -> usize {
    25
}

fn default_threshold() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    pub experiment: TheorySection,
    pub domain: DomainSpec,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub sample_space: SpaceSpec,
    pub target_space: SpaceSpec,
}
