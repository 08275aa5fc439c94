//! TOML run configuration for the experiment harness.
//!
//! ```toml
//! seed = 42
//!
//! [problem]
//! dim = 2
//! cells = 32
//! operator = "shifted-laplace-fem"
//! correlation_length = 0.1
//!
//! [observations]
//! source = "synthetic"
//! count = 8
//!
//! [sampler]
//! kinds = ["mgmc", "gibbs", "cholesky"]
//! cycle = { nu1 = 1, nu2 = 1, cycle = "v" }
//!
//! [experiment]
//! steps = 10000
//! warmup = 1000
//! ```
//!
//! Unknown keys are rejected at every level. The format version is
//! [`CONFIG_VERSION`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bayes::{ObservationSet, SyntheticObservations};
use crate::discretise::{OperatorKind, OperatorSpec};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rng::RngStream;
use crate::samplers::CycleParams;

pub const CONFIG_VERSION: u32 = 1;

/// RNG stream reserved for observation synthesis; chains use `0..n`.
pub const OBSERVATION_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub observations: ObservationConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub cells: usize,
    #[serde(default = "default_operator")]
    pub operator: OperatorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_sq: Option<f64>,
    /// `κ⁻¹`; defaults to 0.1 in 2D and 1.0 in 3D when `kappa_sq` is unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation_length: Option<f64>,
    /// Number of coarsenings; automatic when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
}

fn default_dim() -> usize {
    2
}

fn default_operator() -> OperatorKind {
    OperatorKind::ShiftedLaplaceFem
}

impl ProblemConfig {
    pub fn operator_spec(&self) -> Result<OperatorSpec> {
        match (self.kappa_sq, self.correlation_length) {
            (Some(_), Some(_)) => Err(Error::InvalidConfig(
                "set either kappa_sq or correlation_length, not both".into(),
            )),
            (Some(k), None) => OperatorSpec::new(self.operator, k),
            (None, Some(l)) => OperatorSpec::with_correlation_length(self.operator, l),
            (None, None) => {
                let l = if self.dim == 3 { 1.0 } else { 0.1 };
                OperatorSpec::with_correlation_length(self.operator, l)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationSource {
    Synthetic,
    File,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationConfig {
    #[serde(default = "default_source")]
    pub source: ObservationSource,
    /// β; defaults to 8 in 2D and 32 in 3D.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_value_range")]
    pub value_range: [f64; 2],
    #[serde(default = "default_noise_range")]
    pub noise_var_range: [f64; 2],
    /// CSV with `x,y[,z],value,sigma2` columns for `source = "file"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

fn default_source() -> ObservationSource {
    ObservationSource::Synthetic
}

fn default_radius() -> f64 {
    0.025
}

fn default_value_range() -> [f64; 2] {
    [1.0, 4.0]
}

fn default_noise_range() -> [f64; 2] {
    [1e-6, 2e-6]
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            source: default_source(),
            count: None,
            radius: default_radius(),
            value_range: default_value_range(),
            noise_var_range: default_noise_range(),
            path: None,
        }
    }
}

impl ObservationConfig {
    /// Observations for `grid`; synthetic ones come from a dedicated stream
    /// of `seed`. Relative file paths resolve against `base`.
    pub fn build(&self, grid: &Grid, seed: u64, base: Option<&Path>) -> Result<ObservationSet> {
        match self.source {
            ObservationSource::None => Ok(ObservationSet::empty()),
            ObservationSource::File => {
                let path = self.path.as_ref().ok_or_else(|| {
                    Error::InvalidConfig("observations.path is required for source = \"file\"".into())
                })?;
                let path = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                ObservationSet::from_csv_path(&path, grid.dim(), self.radius)
            }
            ObservationSource::Synthetic => {
                let count = self.count.unwrap_or(if grid.dim() == 3 { 32 } else { 8 });
                let gen = SyntheticObservations {
                    count,
                    radius: self.radius,
                    value_range: (self.value_range[0], self.value_range[1]),
                    noise_var_range: (self.noise_var_range[0], self.noise_var_range[1]),
                };
                gen.generate(grid, &mut RngStream::new(seed, OBSERVATION_STREAM))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Mgmc,
    Gibbs,
    Cholesky,
}

impl SamplerKind {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerKind::Mgmc => "mgmc",
            SamplerKind::Gibbs => "gibbs",
            SamplerKind::Cholesky => "cholesky",
        }
    }
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default = "default_kinds")]
    pub kinds: Vec<SamplerKind>,
    #[serde(default)]
    pub cycle: CycleParams,
    /// Symmetric sweeps per Gibbs update.
    #[serde(default = "default_nu_g")]
    pub nu_g: usize,
}

fn default_kinds() -> Vec<SamplerKind> {
    vec![SamplerKind::Mgmc]
}

fn default_nu_g() -> usize {
    1
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kinds: default_kinds(),
            cycle: CycleParams::default(),
            nu_g: default_nu_g(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Sample,
    Performance,
    Convergence,
    Autocorrelation,
    Rmse,
    Verify,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional; when set it must match the subcommand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ExperimentKind>,
    /// Chain length M.
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Independent chains for ensemble experiments.
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    /// Grid sizes to sweep; `problem.cells` when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grids: Vec<usize>,
    /// Quantity-of-interest ball; centre defaults to the domain centre.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qoi_center: Option<Vec<f64>>,
    #[serde(default = "default_radius")]
    pub qoi_radius: f64,
    #[serde(default = "default_window_factor")]
    pub window_factor: f64,
    /// A Gibbs or MGMC IACT is flagged unreliable when `M < factor · τ̂`.
    #[serde(default = "default_reliability")]
    pub reliability_factor: f64,
    #[serde(default = "default_max_lag")]
    pub max_lag: usize,
    #[serde(default = "default_rel_err")]
    pub max_rel_err: f64,
    /// Chain lengths for RMSE; powers of ten up to `steps` when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rmse_lengths: Vec<usize>,
    #[serde(default)]
    pub write_states: bool,
}

fn default_steps() -> usize {
    10_000
}

fn default_chains() -> usize {
    100
}

fn default_warmup() -> usize {
    1000
}

fn default_window_factor() -> f64 {
    crate::stats::DEFAULT_WINDOW_FACTOR
}

fn default_reliability() -> f64 {
    50.0
}

fn default_max_lag() -> usize {
    50
}

fn default_rel_err() -> f64 {
    0.1
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: None,
            steps: default_steps(),
            chains: default_chains(),
            warmup: default_warmup(),
            grids: Vec::new(),
            qoi_center: None,
            qoi_radius: default_radius(),
            window_factor: default_window_factor(),
            reliability_factor: default_reliability(),
            max_lag: default_max_lag(),
            max_rel_err: default_rel_err(),
            rmse_lengths: Vec::new(),
            write_states: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(s).map_err(|e| Error::InvalidConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        for &cells in &self.grids() {
            Grid::new(self.problem.dim, cells)?;
        }
        self.problem.operator_spec()?;
        self.sampler.cycle.validate()?;
        if self.sampler.kinds.is_empty() {
            return Err(Error::InvalidConfig("sampler.kinds is empty".into()));
        }
        if self.sampler.nu_g == 0 {
            return Err(Error::InvalidConfig("sampler.nu_g must be ≥ 1".into()));
        }
        let e = &self.experiment;
        if e.steps == 0 || e.chains == 0 {
            return Err(Error::InvalidConfig("experiment.steps and chains must be ≥ 1".into()));
        }
        if let Some(c) = &e.qoi_center {
            if c.len() != self.problem.dim {
                return Err(Error::InvalidConfig(format!(
                    "qoi_center has {} coordinates for a {}D problem",
                    c.len(),
                    self.problem.dim
                )));
            }
        }
        if let Some(&m) = e.rmse_lengths.iter().find(|&&m| m == 0 || m > e.steps) {
            return Err(Error::InvalidConfig(format!(
                "rmse length {m} outside 1..={}",
                e.steps
            )));
        }
        Ok(())
    }

    pub fn grids(&self) -> Vec<usize> {
        if self.experiment.grids.is_empty() {
            vec![self.problem.cells]
        } else {
            self.experiment.grids.clone()
        }
    }

    pub fn qoi_center(&self) -> Vec<f64> {
        self.experiment
            .qoi_center
            .clone()
            .unwrap_or_else(|| vec![0.5; self.problem.dim])
    }

    pub fn rmse_lengths(&self) -> Vec<usize> {
        if !self.experiment.rmse_lengths.is_empty() {
            return self.experiment.rmse_lengths.clone();
        }
        let mut out = Vec::new();
        let mut m = 1;
        while m < self.experiment.steps {
            out.push(m);
            m *= 10;
        }
        out.push(self.experiment.steps);
        out
    }

    /// SHA-256 of the canonical JSON form, ignoring the output location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        let json = serde_json::to_string(&c).expect("config serialises");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
