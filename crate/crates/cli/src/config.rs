//! Strict TOML experiment configuration.
//!
//! Every table rejects unknown keys, so a misspelled hyperparameter fails
//! loudly at load time instead of silently running the defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use metasurrogate_core::decision::PlannerConfig;
use metasurrogate_core::diffmath::Activation;
use metasurrogate_core::neural_process::{Aggregator, EmbeddingSpec, NpConfig};

use crate::{CliError, Result};

pub const DATA_DIR_ENV: &str = "METASURROGATE_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Pretrain,
    Bo,
    Bandit,
    Mbrl,
    TwoLevel,
}

/// `[np]` block: neural-process architecture.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NpBlock {
    pub input_dim: usize,
    pub output_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub repr_dim: usize,
    #[serde(default)]
    pub latent_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub decoder_hidden: Vec<usize>,
    #[serde(default = "default_min_sigma")]
    pub min_sigma: f64,
    #[serde(default)]
    pub max_sigma: Option<f64>,
    pub max_context_size: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub embedding: Option<EmbeddingBlock>,
    #[serde(default)]
    pub normalize: bool,
}

fn default_min_sigma() -> f64 {
    0.1
}

fn default_activation() -> Activation {
    Activation::Relu
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingBlock {
    pub vocab_size: usize,
    pub dim: usize,
}

impl NpBlock {
    pub fn to_np_config(&self) -> NpConfig {
        NpConfig {
            input_dim: self.input_dim,
            output_dim: self.output_dim,
            encoder_hidden: self.encoder_hidden.clone(),
            repr_dim: self.repr_dim,
            latent_hidden: self.latent_hidden.clone(),
            latent_dim: self.latent_dim,
            decoder_hidden: self.decoder_hidden.clone(),
            min_sigma: self.min_sigma,
            max_sigma: self.max_sigma,
            max_context_size: self.max_context_size,
            aggregator: Aggregator::Mean,
            activation: self.activation,
            embedding: self.embedding.map(|e| EmbeddingSpec {
                vocab_size: e.vocab_size,
                dim: e.dim,
            }),
            normalize: self.normalize,
        }
    }
}

/// `[source]` block: the task distribution.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum SourceBlock {
    Functions {
        #[serde(default = "default_lengthscale")]
        lengthscale: f64,
        #[serde(default = "default_variance")]
        variance: f64,
        #[serde(default = "default_points")]
        points_per_task: usize,
    },
    Cartpole {
        #[serde(default = "default_num_tasks")]
        num_tasks: usize,
        #[serde(default = "default_rollouts")]
        rollouts_per_task: usize,
    },
    Movielens {
        #[serde(default)]
        data_dir: Option<PathBuf>,
        /// Pools whose users feed training: subset of train/valid/test.
        #[serde(default = "default_pools")]
        pools: Vec<String>,
    },
}

fn default_lengthscale() -> f64 {
    0.25
}

fn default_variance() -> f64 {
    1.0
}

fn default_points() -> usize {
    64
}

fn default_num_tasks() -> usize {
    2000
}

fn default_rollouts() -> usize {
    10
}

fn default_pools() -> Vec<String> {
    vec!["train".into(), "valid".into()]
}

impl SourceBlock {
    pub fn descriptor(&self) -> String {
        match self {
            SourceBlock::Functions {
                lengthscale,
                variance,
                points_per_task,
            } => format!("functions(lengthscale={lengthscale},variance={variance},points={points_per_task})"),
            SourceBlock::Cartpole {
                num_tasks,
                rollouts_per_task,
            } => format!("cartpole(tasks={num_tasks},rollouts={rollouts_per_task})"),
            SourceBlock::Movielens { pools, .. } => format!("movielens(pools={})", pools.join("+")),
        }
    }
}

/// `[train]` block (pretraining).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainBlock {
    pub iters: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_extra")]
    pub max_extra_targets: usize,
}

fn default_batch() -> usize {
    8
}

fn default_lr() -> f64 {
    1e-3
}

fn default_extra() -> usize {
    16
}

/// `[bo]` block.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoBlock {
    pub checkpoint: PathBuf,
    pub iterations: usize,
    pub num_seeds: usize,
    pub num_tasks: usize,
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    pub methods: Vec<String>,
    #[serde(default = "default_one")]
    pub initial_observations: usize,
    #[serde(default = "default_num_z")]
    pub num_z: usize,
}

fn default_grid() -> usize {
    100
}

fn default_one() -> usize {
    1
}

fn default_num_z() -> usize {
    16
}

/// `[bandit]` block.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditBlock {
    pub checkpoint: PathBuf,
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default = "default_budgets")]
    pub budgets: Vec<f64>,
    pub acquisitions: Vec<String>,
    #[serde(default = "default_splits")]
    pub splits: usize,
    #[serde(default = "default_ig_samples")]
    pub info_gain_samples: usize,
    #[serde(default)]
    pub candidate_cap: Option<usize>,
    #[serde(default = "default_bandit_ctx")]
    pub max_context: usize,
    #[serde(default = "default_num_z")]
    pub num_z: usize,
    /// Cap on evaluated test users (ordered by id); all of them when unset.
    #[serde(default)]
    pub max_users: Option<usize>,
}

fn default_budgets() -> Vec<f64> {
    vec![0.2, 0.5, 0.8]
}

fn default_splits() -> usize {
    5
}

fn default_ig_samples() -> usize {
    5
}

fn default_bandit_ctx() -> usize {
    600
}

/// `[mbrl]` block.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MbrlBlock {
    pub checkpoint: PathBuf,
    pub episodes: usize,
    pub num_seeds: usize,
    #[serde(default = "default_pole_mass")]
    pub pole_mass: f64,
    #[serde(default = "default_cart_mass")]
    pub cart_mass: f64,
    #[serde(default = "default_mbrl_ctx")]
    pub max_context: usize,
    pub methods: Vec<String>,
    #[serde(default)]
    pub planner: PlannerBlock,
}

fn default_pole_mass() -> f64 {
    0.1
}

fn default_cart_mass() -> f64 {
    1.0
}

fn default_mbrl_ctx() -> usize {
    250
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerBlock {
    pub horizon: usize,
    pub population: usize,
    pub elites: usize,
    pub iters: usize,
    pub discount: f64,
}

impl Default for PlannerBlock {
    fn default() -> Self {
        let d = PlannerConfig::default();
        PlannerBlock {
            horizon: d.horizon,
            population: d.population,
            elites: d.elites,
            iters: d.iters,
            discount: d.discount,
        }
    }
}

impl PlannerBlock {
    pub fn to_planner(self) -> PlannerConfig {
        PlannerConfig {
            horizon: self.horizon,
            population: self.population,
            elites: self.elites,
            iters: self.iters,
            discount: self.discount,
        }
    }
}

/// `[two_level]` block.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoLevelBlock {
    pub num_tasks: usize,
    pub positions_per_task: usize,
    pub inner_iters: usize,
    pub budget: usize,
    pub num_seeds: usize,
    pub methods: Vec<String>,
    #[serde(default = "default_pos_ls")]
    pub position_lengthscale: f64,
    #[serde(default = "default_task_ls")]
    pub task_lengthscale: f64,
    #[serde(default = "default_gp_noise")]
    pub gp_noise: f64,
}

fn default_pos_ls() -> f64 {
    0.2
}

fn default_task_ls() -> f64 {
    0.4
}

fn default_gp_noise() -> f64 {
    1e-4
}

/// Top-level experiment configuration.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub np: Option<NpBlock>,
    #[serde(default)]
    pub source: Option<SourceBlock>,
    #[serde(default)]
    pub train: Option<TrainBlock>,
    #[serde(default)]
    pub bo: Option<BoBlock>,
    #[serde(default)]
    pub bandit: Option<BanditBlock>,
    #[serde(default)]
    pub mbrl: Option<MbrlBlock>,
    #[serde(default)]
    pub two_level: Option<TwoLevelBlock>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural checks: required blocks per kind, referenced paths exist.
    pub fn validate(&self) -> Result<()> {
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(CliError::Config(format!(
                    "kind `{:?}` requires the {what} block",
                    self.kind
                )))
            }
        };
        match self.kind {
            ExperimentKind::Pretrain => {
                need(self.np.is_some(), "[np]")?;
                need(self.source.is_some(), "[source]")?;
                need(self.train.is_some(), "[train]")?;
                if let Some(SourceBlock::Movielens { data_dir, .. }) = &self.source {
                    let dir = resolve_data_dir(data_dir.as_deref())?;
                    check_exists(&dir)?;
                }
            }
            ExperimentKind::Bo => {
                let bo = self.bo.as_ref();
                need(bo.is_some(), "[bo]")?;
                check_exists(&bo.expect("checked").checkpoint)?;
            }
            ExperimentKind::Bandit => {
                need(self.bandit.is_some(), "[bandit]")?;
                let b = self.bandit.as_ref().expect("checked");
                check_exists(&b.checkpoint)?;
                let dir = resolve_data_dir(b.data_dir.as_deref())?;
                check_exists(&dir)?;
                for a in &b.acquisitions {
                    if a != "random" && a != "info_gain" {
                        return Err(CliError::Config(format!("unknown acquisition `{a}`")));
                    }
                }
            }
            ExperimentKind::Mbrl => {
                need(self.mbrl.is_some(), "[mbrl]")?;
                let m = self.mbrl.as_ref().expect("checked");
                check_exists(&m.checkpoint)?;
                for meth in &m.methods {
                    if meth != "np_cem" && meth != "random" {
                        return Err(CliError::Config(format!("unknown mbrl method `{meth}`")));
                    }
                }
            }
            ExperimentKind::TwoLevel => {
                need(self.two_level.is_some(), "[two_level]")?;
                let t = self.two_level.as_ref().expect("checked");
                for meth in &t.methods {
                    if meth != "two_level" && meth != "flat_random" {
                        return Err(CliError::Config(format!("unknown two_level method `{meth}`")));
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn resolve_data_dir(configured: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = configured {
        return Ok(p.to_path_buf());
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(v) => Ok(PathBuf::from(v)),
        None => Err(CliError::Config(format!(
            "no data_dir configured and {DATA_DIR_ENV} is unset"
        ))),
    }
}

fn check_exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Config(format!("referenced path {} does not exist", path.display())))
    }
}
