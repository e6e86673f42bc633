//! Experiment configuration: a flat-sectioned TOML file whose keys the
//! command-line flags override. The resolved configuration is echoed into the
//! output directory so any run can be reproduced byte-for-byte.

use diffbridge::models::{ConjugateLinearGaussian, GaussianParams, JointModel, TargetDensity};
use diffbridge::nn::AdamConfig;
use diffbridge::sde::TimeGrid;
use serde::{Deserialize, Serialize};

/// A configuration problem: carries the offending field for exit-code-2
/// diagnostics.
#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error in `{}`: {}", self.field, self.message)
    }
}

impl ConfigError {
    pub fn new(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

fn default_seed() -> u64 {
    0
}
fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seed for every stochastic stage; runs are bit-reproducible given it.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Output directory; defaults to `$DIFFBRIDGE_OUT/<algorithm>-<seed>` or
    /// `runs/<algorithm>-<seed>`.
    #[serde(default)]
    pub output_dir: Option<String>,
    /// Threads for batch rollouts during sampling (never changes results).
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub target: TargetConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub ipf: IpfConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config parses")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Joint model name; `conjugate` is the built-in linear-Gaussian model.
    pub name: String,
    pub dim: usize,
    pub prior_var: f64,
    pub obs_var: f64,
    /// Observation coupling (0 makes the observation uninformative).
    pub coupling: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            name: "conjugate".into(),
            dim: 1,
            prior_var: 1.0,
            obs_var: 1.0,
            coupling: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<Box<dyn JointModel>, ConfigError> {
        match self.name.as_str() {
            "conjugate" => {
                let m = ConjugateLinearGaussian::new(self.prior_var, self.obs_var, self.dim)
                    .map_err(|e| ConfigError::new("model", e.to_string()))?
                    .with_coupling(self.coupling);
                Ok(Box::new(m))
            }
            other => Err(ConfigError::new(
                "model.name",
                format!("unknown model `{other}` (available: conjugate)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetConfig {
    /// Target name: `standard-normal`, `gaussian`, `mixture` or `funnel`.
    pub name: String,
    pub dim: usize,
    /// Gaussian mean (per dimension; scalars are broadcast).
    pub mean: Vec<f64>,
    /// Isotropic variance of a `gaussian` target / mixture modes.
    pub var: f64,
    /// Positive scale multiplying the density (log Z of a `gaussian` target).
    pub scale: f64,
    /// Mixture mode centers.
    pub modes: Vec<Vec<f64>>,
    /// Mixture weights (must sum to 1).
    pub weights: Vec<f64>,
    /// Funnel scale.
    pub funnel_scale: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        Self {
            name: "standard-normal".into(),
            dim: 1,
            mean: vec![],
            var: 1.0,
            scale: 1.0,
            modes: vec![],
            weights: vec![],
            funnel_scale: 3.0,
        }
    }
}

impl TargetConfig {
    pub fn build(&self) -> Result<TargetDensity, ConfigError> {
        match self.name.as_str() {
            "standard-normal" => Ok(TargetDensity::standard_normal(self.dim)),
            "gaussian" => {
                let mean = if self.mean.is_empty() {
                    vec![0.0; self.dim]
                } else if self.mean.len() == self.dim {
                    self.mean.clone()
                } else {
                    return Err(ConfigError::new(
                        "target.mean",
                        format!("expected {} entries, got {}", self.dim, self.mean.len()),
                    ));
                };
                let params = GaussianParams::isotropic(mean, self.var)
                    .map_err(|e| ConfigError::new("target.var", e.to_string()))?;
                TargetDensity::gaussian(params, self.scale)
                    .map_err(|e| ConfigError::new("target.scale", e.to_string()))
            }
            "mixture" => {
                if self.modes.is_empty() {
                    return Err(ConfigError::new("target.modes", "mixture needs mode centers"));
                }
                let weights = if self.weights.is_empty() {
                    vec![1.0 / self.modes.len() as f64; self.modes.len()]
                } else {
                    self.weights.clone()
                };
                let comps = self
                    .modes
                    .iter()
                    .map(|m| GaussianParams::isotropic(m.clone(), self.var))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| ConfigError::new("target.modes", e.to_string()))?;
                TargetDensity::gaussian_mixture(weights, comps)
                    .map_err(|e| ConfigError::new("target.weights", e.to_string()))
            }
            "funnel" => TargetDensity::funnel(self.funnel_scale)
                .map_err(|e| ConfigError::new("target.funnel_scale", e.to_string())),
            other => Err(ConfigError::new(
                "target.name",
                format!(
                    "unknown target `{other}` (available: standard-normal, gaussian, mixture, funnel)"
                ),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub horizon: f64,
    pub steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            horizon: 5.0,
            steps: 64,
        }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<TimeGrid, ConfigError> {
        TimeGrid::uniform(self.horizon, self.steps)
            .map_err(|e| ConfigError::new("grid", e.to_string()))
    }

    /// Bridge algorithms default to the short horizon T = 1, K = 32 when the
    /// config leaves the grid untouched.
    pub fn build_short_default(&self) -> Result<TimeGrid, ConfigError> {
        if self.horizon == 5.0 && self.steps == 64 {
            TimeGrid::uniform(1.0, 32).map_err(|e| ConfigError::new("grid", e.to_string()))
        } else {
            self.build()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            iterations: 4000,
            batch_size: 128,
            learning_rate: 1e-3,
            hidden: vec![64, 64],
        }
    }
}

impl TrainingConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig::with_lr(self.learning_rate)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IpfConfig {
    /// Refinement rounds (bridge posterior) / total rounds (bridge general).
    pub rounds: usize,
    /// Gradient steps per mean-matching half step.
    pub inner_iterations: usize,
    /// Trajectories per mean-matching or score gradient step.
    pub trajectory_batch: usize,
    /// Score-fit gradient steps per round (bridge general sampling).
    pub score_iterations: usize,
    /// Reverse-KL steps in refinement rounds (bridge general sampling).
    pub refine_h_iterations: usize,
    /// On-tape probability-flow steps for the iterate density.
    pub flow_steps: usize,
}

impl Default for IpfConfig {
    fn default() -> Self {
        Self {
            rounds: 5,
            inner_iterations: 2000,
            trajectory_batch: 16,
            score_iterations: 1200,
            refine_h_iterations: 600,
            flow_steps: 16,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub n_samples: usize,
    /// Observation for the posterior samplers.
    pub y: Vec<f64>,
    /// Evaluation points for the flow log-normalizer (0 disables it).
    pub flow_points: usize,
    /// Training budget of the auxiliary proposal-score network driving the
    /// flow estimate.
    pub flow_score_iterations: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            y: vec![2.0],
            flow_points: 10,
            flow_score_iterations: 800,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// 1-d lattice size of the grid oracle.
    pub lattice_points: usize,
    pub lattice_halfwidth: f64,
    /// Bridge discretization for the dynamic checks.
    pub chain_steps: usize,
    pub ipf_rounds: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            lattice_points: 400,
            lattice_halfwidth: 8.0,
            chain_steps: 16,
            ipf_rounds: 4,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: Option<&str>) -> Result<Self, ConfigError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    ConfigError::new("config", format!("cannot read {p}: {e}"))
                })?;
                toml::from_str(&text).map_err(|e| ConfigError::new("config", e.to_string()))
            }
        }
    }

    pub fn resolved_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn output_dir(&self, algorithm: &str) -> std::path::PathBuf {
        match &self.output_dir {
            Some(dir) => dir.into(),
            None => {
                let root = std::env::var("DIFFBRIDGE_OUT").unwrap_or_else(|_| "runs".into());
                std::path::PathBuf::from(root).join(format!("{algorithm}-{}", self.seed))
            }
        }
    }
}
