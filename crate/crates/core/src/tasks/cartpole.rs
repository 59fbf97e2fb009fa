//! Cart-pole swing-up environment with sampled masses.
//!
//! Classic frictionless cart-pole (uniform rod of half-length `L` on a cart,
//! θ = 0 upright), driven by a horizontal force `F = 10·action` N and
//! integrated with semi-implicit Euler. The task distribution samples
//! `pole_mass ~ U[0.01, 1.0]` and `cart_mass ~ U[0.1, 3.0]`.
//!
//! Reward is `exp(-d²/ℓ_r²)` where `d` is the distance from the pole tip
//! (at `2L` from the pivot) to the point one pole-length above the track
//! origin, evaluated at the post-step state. It is bounded in `(0, 1]` and
//! equals 1 only with the pole balanced upright over the origin.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::{derive_seed, rng_from_seed, Rng};

use super::{RegressionTask, TaskSource};

/// Track half-width; the cart clamps here with its velocity zeroed.
pub const TRACK_LIMIT: f64 = 3.0;
/// Reward lengthscale ℓ_r.
pub const REWARD_LENGTHSCALE: f64 = 0.6;

/// Physical and episode parameters of one cart-pole instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartPoleParams {
    /// Pole mass in kg.
    pub pole_mass: f64,
    /// Cart mass in kg.
    pub cart_mass: f64,
    /// Pole half-length in m; the tip sits at twice this from the pivot.
    pub half_length: f64,
    pub gravity: f64,
    pub dt: f64,
    /// Newtons of force per unit action.
    pub force_scale: f64,
    pub episode_len: usize,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        CartPoleParams {
            pole_mass: 0.1,
            cart_mass: 1.0,
            half_length: 0.6,
            gravity: 9.81,
            dt: 0.05,
            force_scale: 10.0,
            episode_len: 100,
        }
    }
}

impl CartPoleParams {
    /// Distance from pivot to pole tip.
    pub fn pole_length(&self) -> f64 {
        2.0 * self.half_length
    }
}

/// Environment state encoded as `(x, ẋ, sinθ, cosθ, θ̇)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartState {
    pub x: f64,
    pub x_dot: f64,
    pub sin_theta: f64,
    pub cos_theta: f64,
    pub theta_dot: f64,
}

impl CartState {
    /// Pole hanging straight down at the track origin, at rest.
    pub fn hanging() -> Self {
        CartState::from_angle(0.0, 0.0, std::f64::consts::PI, 0.0)
    }

    pub fn from_angle(x: f64, x_dot: f64, theta: f64, theta_dot: f64) -> Self {
        CartState {
            x,
            x_dot,
            sin_theta: theta.sin(),
            cos_theta: theta.cos(),
            theta_dot,
        }
    }

    pub fn theta(&self) -> f64 {
        self.sin_theta.atan2(self.cos_theta)
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.x, self.x_dot, self.sin_theta, self.cos_theta, self.theta_dot]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        CartState {
            x: v[0],
            x_dot: v[1],
            sin_theta: v[2],
            cos_theta: v[3],
            theta_dot: v[4],
        }
    }
}

/// One environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: CartState,
    pub action: f64,
    pub reward: f64,
    pub next: CartState,
}

/// Reward at a state: distance from pole tip to the hover point `(0, 2L)`.
pub fn reward(state: &CartState, params: &CartPoleParams) -> f64 {
    let pl = params.pole_length();
    let tip_x = state.x + pl * state.sin_theta;
    let tip_y = pl * state.cos_theta;
    let d2 = tip_x * tip_x + (tip_y - pl) * (tip_y - pl);
    (-d2 / (REWARD_LENGTHSCALE * REWARD_LENGTHSCALE)).exp()
}

/// Advance one step of semi-implicit Euler. Deterministic in its inputs;
/// actions outside `[-1, 1]` are clamped.
pub fn cartpole_step(state: &CartState, action: f64, params: &CartPoleParams) -> Transition {
    let action = action.clamp(-1.0, 1.0);
    let force = params.force_scale * action;
    let (pm, cm, l, g) = (
        params.pole_mass,
        params.cart_mass,
        params.half_length,
        params.gravity,
    );
    let total = pm + cm;
    let theta = state.theta();
    let (sin_t, cos_t) = (state.sin_theta, state.cos_theta);
    let td = state.theta_dot;

    let temp = (force + pm * l * td * td * sin_t) / total;
    let theta_acc = (g * sin_t - cos_t * temp) / (l * (4.0 / 3.0 - pm * cos_t * cos_t / total));
    let x_acc = temp - pm * l * theta_acc * cos_t / total;

    let mut x_dot = state.x_dot + params.dt * x_acc;
    let theta_dot = td + params.dt * theta_acc;
    let mut x = state.x + params.dt * x_dot;
    let theta = theta + params.dt * theta_dot;
    if x.abs() > TRACK_LIMIT {
        x = x.clamp(-TRACK_LIMIT, TRACK_LIMIT);
        x_dot = 0.0;
    }

    let next = CartState::from_angle(x, x_dot, theta, theta_dot);
    Transition {
        state: *state,
        action,
        reward: reward(&next, params),
        next,
    }
}

/// Draw an instance of the task distribution: uniform masses, defaults
/// elsewhere.
pub fn sample_cartpole_task(rng: &mut Rng) -> CartPoleParams {
    CartPoleParams {
        pole_mass: rng.random_range(0.01..1.0),
        cart_mass: rng.random_range(0.1..3.0),
        ..CartPoleParams::default()
    }
}

/// The random-walk exploration action `sin(a0 + u·Σ_{k=1..t} w_k)`, given
/// the accumulated walk `walk_sum = Σ w_k` (0 at t = 0).
pub fn exploration_action(a0: f64, u: f64, walk_sum: f64) -> f64 {
    (a0 + u * walk_sum).sin()
}

/// Stateful wrapper around [`exploration_action`]: draws `a0 ~ U[0, 2π]`
/// and `u ~ U[0, 1]` once per episode, then one standard-normal walk
/// increment per step after the first.
pub struct ExplorationPolicy {
    a0: f64,
    u: f64,
    walk_sum: f64,
    started: bool,
}

impl ExplorationPolicy {
    pub fn new(rng: &mut Rng) -> Self {
        ExplorationPolicy {
            a0: rng.random_range(0.0..2.0 * std::f64::consts::PI),
            u: rng.random_range(0.0..1.0),
            walk_sum: 0.0,
            started: false,
        }
    }

    pub fn next_action(&mut self, rng: &mut Rng) -> f64 {
        if self.started {
            let w: f64 = StandardNormal.sample(rng);
            self.walk_sum += w;
        }
        self.started = true;
        exploration_action(self.a0, self.u, self.walk_sum)
    }
}

/// Roll one exploration episode from (a lightly perturbed) hanging start.
pub fn exploration_rollout(
    params: &CartPoleParams,
    start_noise: f64,
    rng: &mut Rng,
) -> Vec<Transition> {
    let dx: f64 = StandardNormal.sample(rng);
    let dth: f64 = StandardNormal.sample(rng);
    let mut state = CartState::from_angle(
        start_noise * dx,
        0.0,
        std::f64::consts::PI + start_noise * dth,
        0.0,
    );
    let mut policy = ExplorationPolicy::new(rng);
    let mut out = Vec::with_capacity(params.episode_len);
    for _ in 0..params.episode_len {
        let action = policy.next_action(rng);
        let tr = cartpole_step(&state, action, params);
        state = tr.next;
        out.push(tr);
    }
    out
}

/// Meta-training source over cart-pole instances. A fixed catalogue of
/// `num_tasks` instances is indexed uniformly; each instance's exploration
/// data regenerates deterministically from its derived seed, so no
/// transition ever needs caching.
pub struct CartPoleSource {
    pub num_tasks: usize,
    pub rollouts_per_task: usize,
    pub base_seed: u64,
    pub start_noise: f64,
    pub params_template: CartPoleParams,
}

impl CartPoleSource {
    pub fn new(num_tasks: usize, rollouts_per_task: usize, base_seed: u64) -> Self {
        CartPoleSource {
            num_tasks,
            rollouts_per_task,
            base_seed,
            start_noise: 0.01,
            params_template: CartPoleParams::default(),
        }
    }

    /// Deterministic instance parameters for a task index.
    pub fn task_params(&self, index: usize) -> CartPoleParams {
        let mut rng = rng_from_seed(derive_seed(self.base_seed, index as u64));
        CartPoleParams {
            pole_mass: rng.random_range(0.01..1.0),
            cart_mass: rng.random_range(0.1..3.0),
            ..self.params_template
        }
    }

    /// All transitions for a task index, regenerated on demand.
    pub fn task_transitions(&self, index: usize) -> Vec<Transition> {
        let mut rng = rng_from_seed(derive_seed(self.base_seed, index as u64));
        let params = CartPoleParams {
            pole_mass: rng.random_range(0.01..1.0),
            cart_mass: rng.random_range(0.1..3.0),
            ..self.params_template
        };
        let mut out = Vec::with_capacity(self.rollouts_per_task * params.episode_len);
        for _ in 0..self.rollouts_per_task {
            out.extend(exploration_rollout(&params, self.start_noise, &mut rng));
        }
        out
    }
}

/// Input `(state, action)` and output `(Δstate, reward)` rows for dynamics
/// learning.
pub fn transition_to_pair(tr: &Transition) -> (Vec<f64>, Vec<f64>) {
    let mut x = tr.state.to_vec();
    x.push(tr.action);
    let s = tr.state.to_vec();
    let n = tr.next.to_vec();
    let mut y: Vec<f64> = n.iter().zip(&s).map(|(a, b)| a - b).collect();
    y.push(tr.reward);
    (x, y)
}

impl TaskSource for CartPoleSource {
    fn sample_task(&mut self, rng: &mut Rng) -> crate::error::Result<RegressionTask> {
        let index = rng.random_range(0..self.num_tasks);
        let transitions = self.task_transitions(index);
        let mut task = RegressionTask::default();
        for tr in &transitions {
            let (x, y) = transition_to_pair(tr);
            task.xs.push(x);
            task.ys.push(y);
        }
        Ok(task)
    }

    fn input_dim(&self) -> usize {
        6
    }

    fn output_dim(&self) -> usize {
        6
    }
}

/// Total mechanical energy (kinetic + potential of the pole's centre of
/// mass); conserved by the undriven frictionless dynamics.
pub fn total_energy(state: &CartState, params: &CartPoleParams) -> f64 {
    let (pm, cm, l, g) = (
        params.pole_mass,
        params.cart_mass,
        params.half_length,
        params.gravity,
    );
    let (xd, td) = (state.x_dot, state.theta_dot);
    let cart_ke = 0.5 * cm * xd * xd;
    // centre of mass at distance L from the pivot, rod inertia p_m L²/3
    let com_v2 = xd * xd + 2.0 * l * td * xd * state.cos_theta + l * l * td * td;
    let pole_ke = 0.5 * pm * com_v2 + 0.5 * (pm * l * l / 3.0) * td * td;
    let pe = pm * g * l * state.cos_theta;
    cart_ke + pole_ke + pe
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn upright_at_origin_has_reward_one() {
        let p = CartPoleParams::default();
        let s = CartState::from_angle(0.0, 0.0, 0.0, 0.0);
        assert_eq!(reward(&s, &p), 1.0);
        // upright is an equilibrium: a zero-force step stays there exactly
        let tr = cartpole_step(&s, 0.0, &p);
        assert_eq!(tr.reward, 1.0);
        assert_eq!(tr.next, s);
    }

    #[test]
    fn hanging_reward_matches_geometry() {
        let p = CartPoleParams::default();
        let s = CartState::hanging();
        let pl = p.pole_length();
        let want = (-4.0 * pl * pl / (REWARD_LENGTHSCALE * REWARD_LENGTHSCALE)).exp();
        assert!((reward(&s, &p) - want).abs() < 1e-15);
    }

    #[test]
    fn step_is_deterministic_and_reward_bounded() {
        let p = sample_cartpole_task(&mut rng_from_seed(3));
        let mut s = CartState::hanging();
        let mut rng = rng_from_seed(5);
        for _ in 0..200 {
            let a = rng.random_range(-1.0..1.0);
            let t1 = cartpole_step(&s, a, &p);
            let t2 = cartpole_step(&s, a, &p);
            assert_eq!(t1, t2);
            assert!(t1.reward > 0.0 && t1.reward <= 1.0);
            let circ = t1.next.sin_theta * t1.next.sin_theta
                + t1.next.cos_theta * t1.next.cos_theta;
            assert!((circ - 1.0).abs() < 1e-9);
            s = t1.next;
        }
    }

    #[test]
    fn track_limit_clamps_and_zeroes_velocity() {
        let p = CartPoleParams::default();
        let mut s = CartState::from_angle(2.99, 5.0, std::f64::consts::PI, 0.0);
        for _ in 0..10 {
            s = cartpole_step(&s, 1.0, &p).next;
        }
        assert!(s.x <= TRACK_LIMIT);
    }

    #[test]
    fn undriven_energy_drift_below_one_percent() {
        let p = CartPoleParams::default();
        let start = CartState::from_angle(0.0, 0.3, std::f64::consts::PI - 0.8, 0.2);
        let e0 = total_energy(&start, &p);

        // coarse episode at dt = 0.05
        let mut s = start;
        for _ in 0..p.episode_len {
            s = cartpole_step(&s, 0.0, &p).next;
        }
        let e_coarse = total_energy(&s, &p);

        // reference integration at dt = 0.001 over the same horizon
        let fine = CartPoleParams { dt: 0.001, ..p };
        let steps = (p.episode_len as f64 * p.dt / fine.dt).round() as usize;
        let mut r = start;
        for _ in 0..steps {
            r = cartpole_step(&r, 0.0, &fine).next;
        }
        let e_ref = total_energy(&r, &fine);

        // the reference conserves energy almost exactly; measure both drifts
        // against the swing's energy scale
        let scale = e0.abs().max(0.1);
        assert!(
            (e_ref - e0).abs() / scale < 1e-3,
            "reference drifted: {e0} -> {e_ref}"
        );
        assert!(
            (e_coarse - e0).abs() / scale < 0.01,
            "coarse drifted: {e0} -> {e_coarse}"
        );
    }

    #[test]
    fn mass_sampling_ranges_and_mean() {
        let mut rng = rng_from_seed(100);
        let n = 100_000usize;
        let (mut pm_min, mut pm_max) = (f64::INFINITY, f64::NEG_INFINITY);
        let mut cm_sum = 0.0;
        for _ in 0..n {
            let p = sample_cartpole_task(&mut rng);
            pm_min = pm_min.min(p.pole_mass);
            pm_max = pm_max.max(p.pole_mass);
            cm_sum += p.cart_mass;
            assert!((0.01..=1.0).contains(&p.pole_mass));
            assert!((0.1..=3.0).contains(&p.cart_mass));
        }
        assert!(pm_min >= 0.01 && pm_max <= 1.0);
        // mean of U[0.1, 3.0] is 1.55; SE = 2.9/sqrt(12 n)
        let se = 2.9 / (12.0 * n as f64).sqrt();
        assert!((cm_sum / n as f64 - 1.55).abs() < 3.0 * se);
        // reproducible given the seed
        let a = sample_cartpole_task(&mut rng_from_seed(9));
        let b = sample_cartpole_task(&mut rng_from_seed(9));
        assert_eq!(a, b);
    }

    #[test]
    fn exploration_action_cases() {
        assert!((exploration_action(0.7, 0.9, 0.0) - 0.7f64.sin()).abs() < 1e-15);
        // u = 0 freezes the walk
        for w in [-5.0, 0.0, 2.5, 100.0] {
            assert_eq!(exploration_action(1.2, 0.0, w), 1.2f64.sin());
        }
        // |a| <= 1 always
        let mut rng = rng_from_seed(2);
        let mut policy = ExplorationPolicy::new(&mut rng);
        for _ in 0..10_000 {
            let a = policy.next_action(&mut rng);
            assert!(a.abs() <= 1.0);
        }
    }

    #[test]
    fn first_exploration_action_uses_empty_walk() {
        let mut rng = rng_from_seed(21);
        let mut policy = ExplorationPolicy::new(&mut rng);
        let a0 = policy.a0;
        assert_eq!(policy.next_action(&mut rng), a0.sin());
    }

    #[test]
    fn task_source_regenerates_identically() {
        let src = CartPoleSource::new(50, 2, 77);
        let a = src.task_transitions(13);
        let b = src.task_transitions(13);
        assert_eq!(a, b);
        assert_eq!(a.len(), 2 * CartPoleParams::default().episode_len);
    }
}
