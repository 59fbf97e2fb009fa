//! Information-gain arm selection and the sequential rating-acquisition
//! evaluation protocol.
//!
//! For candidate arm `i`, the expected information gain over the remaining
//! arms reduces (for diagonal-Gaussian predictives) to choosing the arm
//! minimising `E_{r̂_i} [ Σ_{j≠i} ln σ_j² ]` after conditioning on the
//! hypothesised observation `(a_i, r̂_i)`: the pre-conditioning entropy
//! term is arm-independent and drops out of the argmax.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::neural_process::PointSet;
use crate::rng::Rng;
use crate::tasks::movielens::RatingTask;

use super::surrogate::{Conditioned, Surrogate};

/// Expected-log-variance score of hypothetically pulling `arm` (index into
/// `pool`), averaged over `samples` predictive draws.
fn arm_score<C: Conditioned>(
    cond: &C,
    pool: &[Vec<f64>],
    arm: usize,
    samples: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let rest: Vec<Vec<f64>> = pool
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != arm)
        .map(|(_, x)| x.clone())
        .collect();
    let arm_pred = cond.predict(std::slice::from_ref(&pool[arm]), rng)?;
    let dist = &arm_pred.dists[0];
    let mut total = 0.0;
    for _ in 0..samples {
        let eps: f64 = StandardNormal.sample(rng);
        let r_hat = dist.mean()[0] + dist.stddev()[0] * eps;
        let ext = cond.extended(&pool[arm], &[r_hat])?;
        let pred = ext.predict(&rest, rng)?;
        let sum_log_var: f64 = pred
            .dists
            .iter()
            .map(|d| 2.0 * d.stddev()[0].ln())
            .sum();
        total += sum_log_var;
    }
    Ok(total / samples as f64)
}

/// Pick the arm with the greatest expected information gain over the rest
/// of the pool. `samples` predictive draws estimate the expectation; a pool
/// of size one returns immediately. Ties break to the lowest index.
pub fn info_gain_select<C: Conditioned>(
    cond: &C,
    pool: &[Vec<f64>],
    samples: usize,
    rng: &mut Rng,
) -> Result<usize> {
    if pool.is_empty() {
        return Err(Error::invalid("info_gain_select", "empty arm pool"));
    }
    if samples == 0 {
        return Err(Error::invalid("info_gain_select", "samples must be >= 1"));
    }
    if pool.len() == 1 {
        return Ok(0);
    }
    let mut best = 0usize;
    let mut best_score = f64::INFINITY;
    for arm in 0..pool.len() {
        let s = arm_score(cond, pool, arm, samples, rng)?;
        if s < best_score {
            best_score = s;
            best = arm;
        }
    }
    Ok(best)
}

/// How the next rated item is picked during evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Acquisition {
    Random,
    InfoGain {
        /// Predictive draws per candidate (the expectation estimate).
        samples: usize,
        /// Random cap on the candidate pool per step; `None` scores every
        /// unobserved arm, which is cubic in the task size.
        candidate_cap: Option<usize>,
    },
}

/// Squared error mass accumulated on one budget's holdout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BanditBudgetResult {
    pub sse: f64,
    pub count: usize,
}

impl BanditBudgetResult {
    pub fn rmse(&self) -> f64 {
        (self.sse / self.count as f64).sqrt()
    }
}

/// Sequentially acquire one user's ratings up to each budget fraction and
/// score the predictive means on the unobserved remainder.
///
/// The context seeds with one uniformly chosen rating; all fractions share
/// one acquisition trajectory (so budget `0.5` extends the `0.2` prefix).
/// A fraction whose holdout would be empty yields `None`. Contexts larger
/// than `max_context` are subsampled before conditioning.
pub fn bandit_eval_multi<S: Surrogate>(
    model: &S,
    task: &RatingTask,
    fractions: &[f64],
    acquisition: &Acquisition,
    max_context: usize,
    rng: &mut Rng,
) -> Result<Vec<Option<BanditBudgetResult>>> {
    let n = task.len();
    if n < 2 {
        return Err(Error::DegenerateTask(format!(
            "user {} has {} ratings; need at least 2",
            task.user_id, n
        )));
    }
    let budgets: Vec<usize> = fractions
        .iter()
        .map(|f| ((f * n as f64).ceil() as usize).max(1))
        .collect();
    let max_budget = budgets.iter().copied().max().unwrap_or(1).min(n);

    let mut acquired = vec![false; n];
    let seed_idx = rng.random_range(0..n);
    acquired[seed_idx] = true;
    let mut num_acquired = 1usize;

    let mut results: Vec<Option<BanditBudgetResult>> = vec![None; fractions.len()];
    let evaluate_at = |acquired: &[bool],
                           results: &mut Vec<Option<BanditBudgetResult>>,
                           num_acquired: usize,
                           rng: &mut Rng|
     -> Result<()> {
        for (bi, &b) in budgets.iter().enumerate() {
            if b != num_acquired || results[bi].is_some() {
                continue;
            }
            let holdout: Vec<usize> = (0..n).filter(|&i| !acquired[i]).collect();
            if holdout.is_empty() {
                continue; // leave as None: degenerate budget
            }
            let context = context_of(task, acquired, max_context, rng);
            let cond = model.condition(&context)?;
            let xs: Vec<Vec<f64>> = holdout.iter().map(|&i| task.items[i].0.clone()).collect();
            let pred = cond.predict(&xs, rng)?;
            let mut sse = 0.0;
            for (d, &i) in pred.dists.iter().zip(&holdout) {
                let err = d.mean()[0] - task.items[i].1;
                sse += err * err;
            }
            results[bi] = Some(BanditBudgetResult {
                sse,
                count: holdout.len(),
            });
        }
        Ok(())
    };

    evaluate_at(&acquired, &mut results, num_acquired, rng)?;
    while num_acquired < max_budget {
        let remaining: Vec<usize> = (0..n).filter(|&i| !acquired[i]).collect();
        if remaining.is_empty() {
            break;
        }
        let next = match acquisition {
            Acquisition::Random => {
                let k = rng.random_range(0..remaining.len());
                remaining[k]
            }
            Acquisition::InfoGain {
                samples,
                candidate_cap,
            } => {
                let pool_idx: Vec<usize> = match candidate_cap {
                    Some(cap) if remaining.len() > *cap => {
                        let picked = rand::seq::index::sample(rng, remaining.len(), *cap);
                        picked.iter().map(|k| remaining[k]).collect()
                    }
                    _ => remaining.clone(),
                };
                let pool: Vec<Vec<f64>> =
                    pool_idx.iter().map(|&i| task.items[i].0.clone()).collect();
                let context = context_of(task, &acquired, max_context, rng);
                let cond = model.condition(&context)?;
                let pick = info_gain_select(&cond, &pool, *samples, rng)?;
                pool_idx[pick]
            }
        };
        acquired[next] = true;
        num_acquired += 1;
        evaluate_at(&acquired, &mut results, num_acquired, rng)?;
    }
    Ok(results)
}

fn context_of(task: &RatingTask, acquired: &[bool], max_context: usize, rng: &mut Rng) -> PointSet {
    let idx: Vec<usize> = (0..task.len()).filter(|&i| acquired[i]).collect();
    let chosen: Vec<usize> = if idx.len() > max_context {
        let picked = rand::seq::index::sample(rng, idx.len(), max_context);
        picked.iter().map(|k| idx[k]).collect()
    } else {
        idx
    };
    let mut ctx = PointSet::empty();
    for i in chosen {
        ctx.push(task.items[i].0.clone(), vec![task.items[i].1]);
    }
    ctx
}

/// Single-budget wrapper around [`bandit_eval_multi`]; returns the RMSE or
/// `None` on an empty holdout.
pub fn bandit_eval<S: Surrogate>(
    model: &S,
    task: &RatingTask,
    fraction: f64,
    acquisition: &Acquisition,
    max_context: usize,
    rng: &mut Rng,
) -> Result<Option<f64>> {
    let r = bandit_eval_multi(model, task, &[fraction], acquisition, max_context, rng)?;
    Ok(r[0].map(|b| b.rmse()))
}
