//! Experiment configuration: one human-readable TOML file describing the
//! plant, noise, policy, and run protocol.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::geometry::{self, AffineSubspace, SideInformation, SupportPattern};
use crate::system::{presets, CostSpec, DynamicsParameter, NoiseKind, NoiseModel};

#[derive(Debug)]
pub enum ConfigError {
    Io(std::io::Error),
    Parse(String),
    Invalid(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Io(e) => write!(f, "io error: {e}"),
            ConfigError::Parse(msg) => write!(f, "config parse error: {msg}"),
            ConfigError::Invalid(msg) => write!(f, "invalid config: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

impl From<std::io::Error> for ConfigError {
    fn from(e: std::io::Error) -> Self {
        ConfigError::Io(e)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub policy: PolicySpec,
    pub run: RunSpec,
}

/// Either the bundled "paper" preset or inline matrices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default = "default_noise_kind")]
    pub kind: NoiseKind,
    /// Full covariance matrix; defaults to `scale * I`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
    /// Isotropic covariance scale used when no matrix is given.
    #[serde(default = "default_noise_scale")]
    pub scale: f64,
}

fn default_noise_kind() -> NoiseKind {
    NoiseKind::Gaussian
}

fn default_noise_scale() -> f64 {
    1.0
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { kind: NoiseKind::Gaussian, covariance: None, scale: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Optimal,
    Ce,
    Rce,
    Ts,
    Gce,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    /// RCE randomization entry scale.
    #[serde(default = "default_sigma0")]
    pub sigma0: f64,
    /// TS prior precision `Sigma0 = prior_scale * I`.
    #[serde(default = "default_prior_scale")]
    pub prior_scale: f64,
    /// GCE perturbation envelope `||Lambda_n|| = c_lambda * n^{-1/2}`.
    #[serde(default)]
    pub c_lambda: f64,
    /// GCE side information, inline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<SideSpec>,
    /// GCE side information, from a JSON file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side_file: Option<PathBuf>,
}

fn default_sigma0() -> f64 {
    0.5
}

fn default_prior_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub gamma: f64,
    pub horizon: usize,
    pub replicates: usize,
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub output_dir: PathBuf,
    /// Also write the first replicate's trajectory and gain CSVs.
    #[serde(default)]
    pub emit_trajectory: bool,
}

/// Declarative side-information description. The two `*-of-truth` presets
/// are resolved against the configured plant when the experiment is built.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SideSpec {
    Support { rows: usize, cols: usize, entries: Vec<(usize, usize)> },
    Subspace { base: Vec<Vec<f64>>, constraints: Vec<Vec<Vec<f64>>> },
    SparsityBudget { max_nonzeros: usize },
    RankBudget { max_rank: usize },
    /// Support pattern of the true parameter's non-zero entries.
    ExactSupportOfTruth,
    /// The null-orthogonality subspace construction around the truth.
    NullOrthogonal,
}

impl SideSpec {
    pub fn resolve(
        &self,
        theta0: &DynamicsParameter,
        cost: &CostSpec,
    ) -> Result<SideInformation, ConfigError> {
        match self {
            SideSpec::Support { rows, cols, entries } => {
                let allowed = entries.iter().copied().collect();
                Ok(SideInformation::Support(SupportPattern {
                    rows: *rows,
                    cols: *cols,
                    allowed,
                }))
            }
            SideSpec::Subspace { base, constraints } => {
                let base = matrix_from_rows(base)?;
                let constraints = constraints
                    .iter()
                    .map(|c| matrix_from_rows(c))
                    .collect::<Result<Vec<_>, _>>()?;
                let aff = AffineSubspace::from_orthogonality_constraints(base, &constraints, 1e-10)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(SideInformation::Subspace(aff))
            }
            SideSpec::SparsityBudget { max_nonzeros } => {
                Ok(SideInformation::SparsityBudget(*max_nonzeros))
            }
            SideSpec::RankBudget { max_rank } => Ok(SideInformation::RankBudget(*max_rank)),
            SideSpec::ExactSupportOfTruth => Ok(SideInformation::Support(
                SupportPattern::from_nonzeros(&theta0.as_matrix(), 1e-12),
            )),
            SideSpec::NullOrthogonal => geometry::null_orthogonality_side_information(theta0, cost)
                .map_err(|e| ConfigError::Invalid(e.to_string())),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::from_toml_str(&text)?;
        // Side files are resolved relative to the config file.
        if let Some(side_file) = &config.policy.side_file {
            if side_file.is_relative() {
                if let Some(dir) = path.parent() {
                    config.policy.side_file = Some(dir.join(side_file));
                }
            }
            let resolved = config.policy.side_file.as_ref().expect("set above");
            if !resolved.exists() {
                return Err(ConfigError::Invalid(format!(
                    "side-information file not found: {}",
                    resolved.display()
                )));
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.run.gamma.is_nan() || self.run.gamma <= 1.0 {
            return Err(ConfigError::Invalid(format!(
                "episode rate must exceed 1, got {}",
                self.run.gamma
            )));
        }
        if self.run.horizon < 1 {
            return Err(ConfigError::Invalid("horizon must be at least 1".into()));
        }
        if self.run.replicates < 1 {
            return Err(ConfigError::Invalid("need at least one replicate".into()));
        }
        if self.policy.kind == PolicyKind::Gce
            && self.policy.side.is_none()
            && self.policy.side_file.is_none()
        {
            return Err(ConfigError::Invalid(
                "gce policy requires side information (side or side_file)".into(),
            ));
        }
        Ok(())
    }

    /// The plant and cost matrices described by the `[system]` table.
    pub fn build_system(&self) -> Result<(DynamicsParameter, CostSpec), ConfigError> {
        match self.system.preset.as_deref() {
            Some("paper") => Ok(presets::paper()),
            Some("sparse-diagonal") => Ok(presets::sparse_diagonal()),
            Some(other) => Err(ConfigError::Invalid(format!("unknown preset '{other}'"))),
            None => {
                fn get<'a>(
                    field: &'a Option<Vec<Vec<f64>>>,
                    name: &str,
                ) -> Result<&'a Vec<Vec<f64>>, ConfigError> {
                    field.as_ref().ok_or_else(|| {
                        ConfigError::Invalid(format!(
                            "system matrix '{name}' missing (no preset selected)"
                        ))
                    })
                }
                let a = matrix_from_rows(get(&self.system.a, "a")?)?;
                let b = matrix_from_rows(get(&self.system.b, "b")?)?;
                let q = matrix_from_rows(get(&self.system.q, "q")?)?;
                let r = matrix_from_rows(get(&self.system.r, "r")?)?;
                let theta = DynamicsParameter::new(a, b)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                let cost =
                    CostSpec::new(q, r).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok((theta, cost))
            }
        }
    }

    /// The noise model for a given state dimension and seed.
    pub fn build_noise(&self, state_dim: usize, seed: u64) -> Result<NoiseModel, ConfigError> {
        let cov = match &self.noise.covariance {
            Some(rows) => matrix_from_rows(rows)?,
            None => DMatrix::identity(state_dim, state_dim) * self.noise.scale,
        };
        if cov.nrows() != state_dim {
            return Err(ConfigError::Invalid(format!(
                "noise covariance is {}x{}, plant state dimension is {state_dim}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        Ok(NoiseModel::new(self.noise.kind, cov, seed))
    }

    /// Resolve side information (inline spec takes precedence over the file).
    pub fn build_side(
        &self,
        theta0: &DynamicsParameter,
        cost: &CostSpec,
    ) -> Result<Option<SideInformation>, ConfigError> {
        if let Some(spec) = &self.policy.side {
            return Ok(Some(spec.resolve(theta0, cost)?));
        }
        if let Some(path) = &self.policy.side_file {
            let text = std::fs::read_to_string(path)?;
            let spec: SideSpec =
                serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
            return Ok(Some(spec.resolve(theta0, cost)?));
        }
        Ok(None)
    }

    /// Canonical serialized form, used for record hashing.
    pub fn canonical_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ConfigError> {
    geometry::matrix_from_rows(rows).map_err(|e| ConfigError::Invalid(e.to_string()))
}
