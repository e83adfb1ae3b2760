use std::fs;
use std::path::{Path, PathBuf};

use crw::calibrate::{CalibrationConfig, EffectMode};
use crw::rankprob::{RankProbMethod, MIN_GRID_SIZE, MIN_MC_DRAWS};
use crw::simharness::{Method, SimConfig, SimGrid};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RankMethodChoice {
    Auto,
    Exact,
    Approx,
    Mc,
    Grid,
}

fn default_alpha() -> f64 {
    0.05
}
fn default_lambda() -> f64 {
    crw::estimation::DEFAULT_LAMBDA
}
fn default_pvalue_column() -> String {
    "pvalue".into()
}
fn default_covariate_column() -> String {
    "covariate".into()
}
fn default_grid_size() -> usize {
    512
}
fn default_draws() -> usize {
    100_000
}
fn default_output_dir() -> PathBuf {
    PathBuf::from(".")
}
fn default_mode() -> EffectMode {
    EffectMode::Continuous
}
fn default_method() -> RankMethodChoice {
    RankMethodChoice::Auto
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: PathBuf,
    #[serde(default = "default_pvalue_column")]
    pub pvalue_column: String,
    #[serde(default = "default_covariate_column")]
    pub covariate_column: String,
    /// Identifier column; row numbers are used when absent.
    #[serde(default)]
    pub id_column: Option<String>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_mode")]
    pub mode: EffectMode,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_method")]
    pub rankprob_method: RankMethodChoice,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default = "default_draws")]
    pub mc_draws: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn new(input: PathBuf) -> Self {
        RunConfig {
            input,
            pvalue_column: default_pvalue_column(),
            covariate_column: default_covariate_column(),
            id_column: None,
            alpha: default_alpha(),
            mode: default_mode(),
            lambda: default_lambda(),
            rankprob_method: default_method(),
            grid_size: default_grid_size(),
            mc_draws: default_draws(),
            seed: 0,
            output_dir: default_output_dir(),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::config(anyhow::anyhow!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(CliError::config(anyhow::anyhow!("lambda must lie in (0, 1), got {}", self.lambda)));
        }
        validate_rank_method(self.rankprob_method, self.grid_size, self.mc_draws)
    }

    pub fn rank_method(&self) -> Option<RankProbMethod> {
        rank_method(self.rankprob_method, self.grid_size, self.mc_draws, self.seed)
    }

    pub fn calibration(&self) -> CalibrationConfig {
        CalibrationConfig {
            alpha: self.alpha,
            lambda: self.lambda,
            mode: self.mode,
            rank_method: self.rank_method(),
        }
    }
}

pub fn validate_rank_method(choice: RankMethodChoice, grid_size: usize, draws: usize) -> CliResult<()> {
    match choice {
        RankMethodChoice::Grid if grid_size < MIN_GRID_SIZE => Err(CliError::config(anyhow::anyhow!(
            "grid size must be at least {MIN_GRID_SIZE}, got {grid_size}"
        ))),
        RankMethodChoice::Mc if draws < MIN_MC_DRAWS => Err(CliError::config(anyhow::anyhow!(
            "Monte-Carlo draws must be at least {MIN_MC_DRAWS}, got {draws}"
        ))),
        _ => Ok(()),
    }
}

pub fn rank_method(choice: RankMethodChoice, grid_size: usize, draws: usize, seed: u64) -> Option<RankProbMethod> {
    match choice {
        RankMethodChoice::Auto => None,
        RankMethodChoice::Exact => Some(RankProbMethod::Exact),
        RankMethodChoice::Approx => Some(RankProbMethod::Approx),
        RankMethodChoice::Mc => Some(RankProbMethod::Mc { draws, seed }),
        RankMethodChoice::Grid => Some(RankProbMethod::Grid { grid_size }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Study {
    Dilution,
    Power,
}

/// Simulation request: a study, a config template and the grid to sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub study: Study,
    pub template: SimConfig,
    pub grid: SimGrid,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// CSV with columns cell,replicate,test,weight.
    #[serde(default)]
    pub external_weights: Option<PathBuf>,
    /// Write every generated dataset, for use by outside weighting tools.
    #[serde(default)]
    pub export_datasets: bool,
}

fn default_methods() -> Vec<Method> {
    vec![Method::Crw, Method::Bh, Method::Rdw]
}

impl SimSpec {
    pub fn validate(&self) -> CliResult<()> {
        self.template.validate().map_err(CliError::config)?;
        self.grid.validate().map_err(CliError::config)?;
        for cell in self.grid.cells() {
            let cfg = SimConfig { pi0: cell.pi0, mu_eps: cell.mu_eps, noise_cv: cell.noise_cv, ..self.template.clone() };
            cfg.validate().map_err(CliError::config)?;
        }
        if self.study == Study::Dilution && self.template.n_groups < 2 {
            return Err(CliError::config(anyhow::anyhow!("dilution study needs n_groups >= 2")));
        }
        if self.study == Study::Power {
            if self.methods.is_empty() {
                return Err(CliError::config(anyhow::anyhow!("no methods selected")));
            }
            if self.methods.contains(&Method::ExternalWeights) && self.external_weights.is_none() {
                return Err(CliError::config(anyhow::anyhow!("external-weights method needs external_weights")));
            }
        }
        Ok(())
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(anyhow::anyhow!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::config(anyhow::anyhow!("invalid config {}: {e}", path.display())))
}
