//! Decision loops driven by surrogate models: Thompson-sampling Bayesian
//! optimisation, information-gain arm selection, model-based control with a
//! cross-entropy-method planner, and two-level candidate search.
//!
//! Every loop is a pure function of its inputs and seed; repeated runs are
//! bit-identical apart from wall-clock fields.

pub mod bandit;
pub mod bo;
pub mod mbrl;
pub mod surrogate;
pub mod two_level;

use serde::{Deserialize, Serialize};

pub use bandit::{bandit_eval, bandit_eval_multi, info_gain_select, Acquisition, BanditBudgetResult};
pub use bo::{bo_loop, random_search_loop, scaled_min_curve, thompson_select, BoRun};
pub use mbrl::{
    cem_plan, mbrl_meta_train, mbrl_test_loop, random_policy_rollouts, NpPlanModel, PlannerConfig,
    ReplayBuffer, TransitionModel,
};
pub use surrogate::{Conditioned, GpSurrogate, MlpSurrogate, NpSurrogate, Surrogate};
pub use two_level::{flat_random_search, planted_minimum_pool, two_level_search, CandidatePool, TwoLevelRun};

/// One line of a decision-loop log, serialised as JSONL.
///
/// `wall_ms` is excluded from determinism comparisons; everything else is
/// part of the reproducibility contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub iter: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chosen: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observed: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scaled_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub episode_reward: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncated: Option<bool>,
    pub wall_ms: u64,
    pub seed: u64,
}

impl RunRecord {
    pub fn new(iter: usize, seed: u64) -> Self {
        RunRecord {
            iter,
            chosen: None,
            observed: None,
            scaled_min: None,
            rmse: None,
            episode_reward: None,
            truncated: None,
            wall_ms: 0,
            seed,
        }
    }
}
