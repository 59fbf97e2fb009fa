//! Two-level candidate search: an outer surrogate proposes which task is
//! likely to contain the lowest value (it regresses observed per-task
//! minima on task features), and an inner surrogate runs `l` iterations of
//! position-level Thompson sampling inside the chosen task. Against a flat
//! search over all `K·C` candidates this cuts the per-iteration work from
//! `O(KC)` to `O(K + lC)` amortised.

use rand::Rng as _;

use crate::baselines::random_search_step;
use crate::error::{Error, Result};
use crate::neural_process::PointSet;
use crate::rng::Rng;

use super::bo::{scaled_min_curve, thompson_select};
use super::surrogate::Surrogate;
use super::RunRecord;

/// A finite pool of `K` tasks × `C` positions with known values, used for
/// benchmarking search strategies.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    /// Per-task feature vectors (length `K`).
    pub task_features: Vec<Vec<f64>>,
    /// Per-position feature vectors shared by every task (length `C`).
    pub position_features: Vec<Vec<f64>>,
    /// `values[k][c]`: the objective at task `k`, position `c`.
    pub values: Vec<Vec<f64>>,
}

impl CandidatePool {
    pub fn num_tasks(&self) -> usize {
        self.task_features.len()
    }

    pub fn num_positions(&self) -> usize {
        self.position_features.len()
    }

    pub fn global_min(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn global_max(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn task_min(&self, k: usize) -> f64 {
        self.values[k].iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Flat feature vector for `(task k, position c)`.
    pub fn flat_feature(&self, k: usize, c: usize) -> Vec<f64> {
        let mut f = self.task_features[k].clone();
        f.extend_from_slice(&self.position_features[c]);
        f
    }
}

/// Synthetic pool with one smooth planted minimum per task: task difficulty
/// and minimum location vary smoothly with a scalar task descriptor, so an
/// outer model can generalise across tasks.
pub fn planted_minimum_pool(
    num_tasks: usize,
    num_positions: usize,
    rng: &mut Rng,
) -> CandidatePool {
    let task_features: Vec<Vec<f64>> = (0..num_tasks)
        .map(|k| vec![-1.0 + 2.0 * k as f64 / (num_tasks.max(2) - 1) as f64])
        .collect();
    let position_features: Vec<Vec<f64>> = (0..num_positions)
        .map(|c| vec![-1.0 + 2.0 * c as f64 / (num_positions.max(2) - 1) as f64])
        .collect();
    // per-pool phases make every seed's landscape different
    let p1: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let p2: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let p3: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let values = task_features
        .iter()
        .map(|tf| {
            let u = tf[0];
            let depth = 1.0 + 0.8 * (2.2 * u + p1).sin();
            let center = 0.8 * (1.3 * u + p2).sin();
            position_features
                .iter()
                .map(|pf| {
                    let x = pf[0];
                    let d = x - center;
                    let background = 0.25 * (3.0 * x + u + p3).cos();
                    background - depth * (-d * d / (2.0 * 0.15 * 0.15)).exp()
                })
                .collect()
        })
        .collect();
    CandidatePool {
        task_features,
        position_features,
        values,
    }
}

/// Result of a search over a candidate pool.
#[derive(Debug, Clone)]
pub struct TwoLevelRun {
    /// One record per environment evaluation.
    pub records: Vec<RunRecord>,
    /// Observed values in evaluation order.
    pub observed: Vec<f64>,
    /// Scaled current minimum (global pool min/max) per evaluation.
    pub scaled_curve: Vec<f64>,
    pub truncated: bool,
}

impl TwoLevelRun {
    /// Evaluations needed to bring the scaled minimum to `threshold` or
    /// below; `None` if never reached within budget.
    pub fn evals_to_threshold(&self, threshold: f64) -> Option<usize> {
        self.scaled_curve
            .iter()
            .position(|v| *v <= threshold)
            .map(|i| i + 1)
    }
}

fn record_eval(
    run: &mut TwoLevelRun,
    pool: &CandidatePool,
    flat_index: usize,
    value: f64,
    seed: u64,
) -> Result<()> {
    run.observed.push(value);
    let curve = scaled_min_curve(&run.observed, pool.global_min(), pool.global_max())?;
    let scaled = *curve.last().expect("non-empty");
    run.scaled_curve.push(scaled);
    let mut rec = RunRecord::new(run.records.len(), seed);
    rec.chosen = Some(flat_index);
    rec.observed = Some(value);
    rec.scaled_min = Some(scaled);
    run.records.push(rec);
    Ok(())
}

/// Alternate outer task selection (Thompson on the min-predicting model)
/// with `l` inner iterations of position-level Thompson sampling in the
/// chosen task. Each inner iteration costs one evaluation; inner histories
/// persist across revisits and observed per-task minima feed the outer
/// context. A budget smaller than one outer round is flagged truncated.
pub fn two_level_search<P: Surrogate, M: Surrogate>(
    position_model: &P,
    min_model: &M,
    pool: &CandidatePool,
    inner_iters: usize,
    budget: usize,
    seed: u64,
    rng: &mut Rng,
) -> Result<TwoLevelRun> {
    if inner_iters == 0 {
        return Err(Error::invalid("two_level_search", "inner_iters must be >= 1"));
    }
    let k = pool.num_tasks();
    let c = pool.num_positions();
    let mut run = TwoLevelRun {
        records: Vec::with_capacity(budget),
        observed: Vec::with_capacity(budget),
        scaled_curve: Vec::with_capacity(budget),
        truncated: budget < inner_iters,
    };
    let mut outer_context = PointSet::empty();
    let mut inner_context: Vec<PointSet> = vec![PointSet::empty(); k];
    let mut visited: Vec<Vec<bool>> = vec![vec![false; c]; k];
    let mut evals = 0usize;

    while evals < budget {
        // outer: pick the task whose minimum looks lowest
        let outer_cond = min_model.condition(&outer_context)?;
        let task = thompson_select(&outer_cond, &pool.task_features, rng)?;

        // inner: l position-level Thompson iterations within that task
        let mut did_any = false;
        for _ in 0..inner_iters {
            if evals >= budget {
                break;
            }
            let unvisited: Vec<usize> = (0..c).filter(|&i| !visited[task][i]).collect();
            if unvisited.is_empty() {
                break;
            }
            let cands: Vec<Vec<f64>> = unvisited
                .iter()
                .map(|&i| pool.position_features[i].clone())
                .collect();
            let cond = position_model.condition(&inner_context[task])?;
            let pick = thompson_select(&cond, &cands, rng)?;
            let pos = unvisited[pick];
            let value = pool.values[task][pos];
            visited[task][pos] = true;
            inner_context[task].push(pool.position_features[pos].clone(), vec![value]);
            record_eval(&mut run, pool, task * c + pos, value, seed)?;
            evals += 1;
            did_any = true;
        }
        if did_any {
            // the best value seen in this task feeds the outer surrogate
            let best = inner_context[task]
                .ys
                .iter()
                .map(|y| y[0])
                .fold(f64::INFINITY, f64::min);
            outer_context.push(pool.task_features[task].clone(), vec![best]);
        } else {
            // task exhausted: if every task is exhausted we are done
            if visited.iter().all(|v| v.iter().all(|x| *x)) {
                run.truncated = true;
                break;
            }
            // otherwise mark it as known-at-its-minimum so Thompson moves on
            outer_context.push(pool.task_features[task].clone(), vec![pool.task_min(task)]);
        }
    }
    Ok(run)
}

/// Flat random search over all `K·C` candidates with the same bookkeeping.
pub fn flat_random_search(
    pool: &CandidatePool,
    budget: usize,
    seed: u64,
    rng: &mut Rng,
) -> Result<TwoLevelRun> {
    let k = pool.num_tasks();
    let c = pool.num_positions();
    let mut visited = vec![false; k * c];
    let mut run = TwoLevelRun {
        records: Vec::with_capacity(budget),
        observed: Vec::with_capacity(budget),
        scaled_curve: Vec::with_capacity(budget),
        truncated: false,
    };
    for _ in 0..budget {
        if visited.iter().all(|v| *v) {
            run.truncated = true;
            break;
        }
        let flat = random_search_step(&visited, rng)?;
        visited[flat] = true;
        let value = pool.values[flat / c][flat % c];
        record_eval(&mut run, pool, flat, value, seed)?;
    }
    Ok(run)
}
