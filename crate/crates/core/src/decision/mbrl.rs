//! Model-based control: meta-train a dynamics-and-reward model on the
//! cart-pole task distribution, then act on a target instance by planning
//! in the learned model with the cross-entropy method.
//!
//! Adaptation at test time is conditioning only — each episode the model is
//! re-conditioned on (a subsample of) the replay buffer; no gradient step
//! ever touches the trained parameters.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural_process::{meta_train, NeuralProcess, NpConfig, PointSet, TrainOptions};
use crate::rng::Rng;
use crate::tasks::cartpole::{
    cartpole_step, transition_to_pair, CartPoleParams, CartPoleSource, CartState, Transition,
};

use super::RunRecord;

/// Cross-entropy-method planner settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub population: usize,
    pub elites: usize,
    pub iters: usize,
    pub discount: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            horizon: 20,
            population: 300,
            elites: 30,
            iters: 4,
            discount: 1.0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("PlannerConfig", "horizon must be >= 1"));
        }
        if self.elites == 0 || self.elites > self.population {
            return Err(Error::invalid("PlannerConfig", "need 1 <= elites <= population"));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::invalid("PlannerConfig", "discount must lie in [0,1]"));
        }
        Ok(())
    }
}

/// Append-only store of real-environment trajectories with a transition
/// capacity; the oldest trajectory is evicted first.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    trajectories: std::collections::VecDeque<Vec<Transition>>,
    len: usize,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            trajectories: Default::default(),
            len: 0,
            capacity,
        }
    }

    pub fn push_trajectory(&mut self, traj: Vec<Transition>) {
        self.len += traj.len();
        self.trajectories.push_back(traj);
        while self.len > self.capacity && self.trajectories.len() > 1 {
            if let Some(old) = self.trajectories.pop_front() {
                self.len -= old.len();
            }
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Uniform subsample (without replacement) of at most `max` transitions,
    /// as `(state, action) -> (Δstate, reward)` pairs.
    pub fn subsample(&self, max: usize, rng: &mut Rng) -> PointSet {
        let all: Vec<&Transition> = self.trajectories.iter().flatten().collect();
        let mut set = PointSet::empty();
        if all.is_empty() {
            return set;
        }
        if all.len() <= max {
            for tr in all {
                let (x, y) = transition_to_pair(tr);
                set.push(x, y);
            }
        } else {
            let picked = rand::seq::index::sample(rng, all.len(), max);
            for i in picked.iter() {
                let (x, y) = transition_to_pair(all[i]);
                set.push(x, y);
            }
        }
        set
    }
}

/// A one-step dynamics-and-reward model the planner can roll out.
pub trait TransitionModel {
    /// Predicted `(next_state, reward)` for each `(state, action)` row.
    fn step_batch(&self, states: &[CartState], actions: &[f64]) -> Result<Vec<(CartState, f64)>>;
}

/// Neural-process plan model: decodes `(s, a) -> (Δs, r)` under one fixed
/// latent draw, so a whole planning pass sees a single coherent hypothesis
/// of the dynamics.
pub struct NpPlanModel<'m> {
    np: &'m NeuralProcess,
    z: Vec<f64>,
}

impl<'m> NpPlanModel<'m> {
    pub fn new(np: &'m NeuralProcess, z: Vec<f64>) -> Self {
        NpPlanModel { np, z }
    }

    /// Condition on replay and draw the episode's latent hypothesis.
    pub fn from_context(np: &'m NeuralProcess, context: &PointSet, rng: &mut Rng) -> Result<Self> {
        let q = np.latent_posterior(context)?;
        Ok(NpPlanModel {
            np,
            z: q.sample(rng),
        })
    }
}

impl TransitionModel for NpPlanModel<'_> {
    fn step_batch(&self, states: &[CartState], actions: &[f64]) -> Result<Vec<(CartState, f64)>> {
        let xs: Vec<Vec<f64>> = states
            .iter()
            .zip(actions)
            .map(|(s, a)| {
                let mut x = s.to_vec();
                x.push(*a);
                x
            })
            .collect();
        let pred = self.np.decode(&xs, &self.z)?;
        Ok(pred
            .dists
            .iter()
            .zip(states)
            .map(|(d, s)| {
                let delta = d.mean();
                let mut next = CartState {
                    x: s.x + delta[0],
                    x_dot: s.x_dot + delta[1],
                    sin_theta: s.sin_theta + delta[2],
                    cos_theta: s.cos_theta + delta[3],
                    theta_dot: s.theta_dot + delta[4],
                };
                // keep the angle encoding on the unit circle during rollouts
                let norm = (next.sin_theta * next.sin_theta + next.cos_theta * next.cos_theta)
                    .sqrt()
                    .max(1e-6);
                next.sin_theta /= norm;
                next.cos_theta /= norm;
                // rewards live in (0, 1]
                let reward = delta[5].clamp(0.0, 1.0);
                (next, reward)
            })
            .collect())
    }
}

/// The true environment as a transition model (planning oracle in tests).
pub struct EnvModel<'p>(pub &'p CartPoleParams);

impl TransitionModel for EnvModel<'_> {
    fn step_batch(&self, states: &[CartState], actions: &[f64]) -> Result<Vec<(CartState, f64)>> {
        Ok(states
            .iter()
            .zip(actions)
            .map(|(s, a)| {
                let tr = cartpole_step(s, *a, self.0);
                (tr.next, tr.reward)
            })
            .collect())
    }
}

/// Cross-entropy-method planning: iteratively refit a Gaussian over action
/// sequences to the elite fraction by discounted model-rollout return.
/// Returns the first action of the final mean (clamped to `[-1, 1]`) and
/// the full mean sequence for warm-starting the next step.
pub fn cem_plan_full(
    model: &impl TransitionModel,
    state: &CartState,
    cfg: &PlannerConfig,
    warm_start: Option<&[f64]>,
    rng: &mut Rng,
) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    let h = cfg.horizon;
    let p = cfg.population;
    let mut mean = match warm_start {
        Some(w) if w.len() == h => w.to_vec(),
        _ => vec![0.0; h],
    };
    let mut std = vec![0.5; h];

    let mut actions = vec![0.0; p * h];
    for _ in 0..cfg.iters {
        for i in 0..p {
            for t in 0..h {
                let eps: f64 = StandardNormal.sample(rng);
                actions[i * h + t] = (mean[t] + std[t] * eps).clamp(-1.0, 1.0);
            }
        }
        // roll all candidates forward together
        let mut states = vec![*state; p];
        let mut returns = vec![0.0; p];
        let mut discount = 1.0;
        for t in 0..h {
            let acts: Vec<f64> = (0..p).map(|i| actions[i * h + t]).collect();
            let stepped = model.step_batch(&states, &acts)?;
            for (i, (next, reward)) in stepped.into_iter().enumerate() {
                returns[i] += discount * reward;
                states[i] = next;
            }
            discount *= cfg.discount;
        }
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| {
            returns[b]
                .partial_cmp(&returns[a])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let elites = &order[..cfg.elites];
        for t in 0..h {
            let m: f64 = elites.iter().map(|&i| actions[i * h + t]).sum::<f64>()
                / cfg.elites as f64;
            let v: f64 = elites
                .iter()
                .map(|&i| (actions[i * h + t] - m) * (actions[i * h + t] - m))
                .sum::<f64>()
                / cfg.elites as f64;
            mean[t] = m;
            std[t] = v.sqrt().max(0.02);
        }
    }
    Ok((mean[0].clamp(-1.0, 1.0), mean))
}

/// Plan one action from `state`.
pub fn cem_plan(
    model: &impl TransitionModel,
    state: &CartState,
    cfg: &PlannerConfig,
    rng: &mut Rng,
) -> Result<f64> {
    Ok(cem_plan_full(model, state, cfg, None, rng)?.0)
}

/// Meta-train the dynamics-and-reward neural process on exploration data
/// from the cart-pole task distribution.
pub fn mbrl_meta_train(
    config: &NpConfig,
    source: &mut CartPoleSource,
    opts: &TrainOptions,
    rng: &mut Rng,
) -> Result<(NeuralProcess, Vec<f64>)> {
    meta_train(config, source, opts, rng)
}

/// Run `episodes` real episodes on the target instance, planning every step
/// with the model conditioned on a replay subsample of at most
/// `max_context` transitions. Returns per-episode rewards alongside the
/// run records and the final replay buffer.
pub fn mbrl_test_loop(
    np: &NeuralProcess,
    target: &CartPoleParams,
    episodes: usize,
    planner: &PlannerConfig,
    max_context: usize,
    seed: u64,
    rng: &mut Rng,
) -> Result<(Vec<f64>, Vec<RunRecord>, ReplayBuffer)> {
    planner.validate()?;
    let mut replay = ReplayBuffer::new(50 * target.episode_len.max(1));
    let mut rewards = Vec::with_capacity(episodes);
    let mut records = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let context = replay.subsample(max_context, rng);
        let model = NpPlanModel::from_context(np, &context, rng)?;
        let mut state = CartState::hanging();
        let mut warm: Option<Vec<f64>> = None;
        let mut total = 0.0;
        let mut traj = Vec::with_capacity(target.episode_len);
        for _ in 0..target.episode_len {
            let (action, mean) = cem_plan_full(&model, &state, planner, warm.as_deref(), rng)?;
            // shift the plan one step for the next warm start
            let mut shifted = mean[1..].to_vec();
            shifted.push(0.0);
            warm = Some(shifted);
            let tr = cartpole_step(&state, action, target);
            total += tr.reward;
            state = tr.next;
            traj.push(tr);
        }
        replay.push_trajectory(traj);
        rewards.push(total);
        let mut rec = RunRecord::new(ep, seed);
        rec.episode_reward = Some(total);
        rec.observed = Some(total);
        records.push(rec);
    }
    Ok((rewards, records, replay))
}

/// Uniform-random policy baseline on the same start state and horizon.
pub fn random_policy_rollouts(
    target: &CartPoleParams,
    episodes: usize,
    rng: &mut Rng,
) -> Vec<f64> {
    (0..episodes)
        .map(|_| {
            let mut state = CartState::hanging();
            let mut total = 0.0;
            for _ in 0..target.episode_len {
                let action = rng.random_range(-1.0..1.0);
                let tr = cartpole_step(&state, action, target);
                total += tr.reward;
                state = tr.next;
            }
            total
        })
        .collect()
}
