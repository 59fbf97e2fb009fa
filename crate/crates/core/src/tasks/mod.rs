//! Task distributions and environments.
//!
//! A task is a set of input/output pairs drawn from one member of a family
//! of related functions: a sampled smooth 1-D curve, one MovieLens user's
//! rating function, or transitions collected on one cart-pole instance.

pub mod cartpole;
pub mod functions;
pub mod movielens;

use crate::error::Result;
use crate::rng::Rng;

/// One regression task: paired input and output vectors.
#[derive(Debug, Clone, Default)]
pub struct RegressionTask {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<Vec<f64>>,
}

impl RegressionTask {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

/// A generator of related tasks for meta-training.
pub trait TaskSource {
    /// Draw the next task. Generative sources never exhaust; finite sources
    /// return [`crate::Error::Exhausted`] when drained.
    fn sample_task(&mut self, rng: &mut Rng) -> Result<RegressionTask>;

    fn input_dim(&self) -> usize;

    fn output_dim(&self) -> usize;
}

/// Fixed list of tasks handed out once each, in order.
pub struct DrainingSource {
    tasks: std::collections::VecDeque<RegressionTask>,
    input_dim: usize,
    output_dim: usize,
}

impl DrainingSource {
    pub fn new(tasks: Vec<RegressionTask>, input_dim: usize, output_dim: usize) -> Self {
        DrainingSource {
            tasks: tasks.into(),
            input_dim,
            output_dim,
        }
    }
}

impl TaskSource for DrainingSource {
    fn sample_task(&mut self, _rng: &mut Rng) -> Result<RegressionTask> {
        self.tasks
            .pop_front()
            .ok_or_else(|| crate::Error::Exhausted("draining task source is empty".into()))
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }
}

/// Fixed list of tasks sampled uniformly with replacement.
pub struct PoolSource {
    tasks: Vec<RegressionTask>,
    input_dim: usize,
    output_dim: usize,
}

impl PoolSource {
    pub fn new(tasks: Vec<RegressionTask>, input_dim: usize, output_dim: usize) -> Result<Self> {
        if tasks.is_empty() {
            return Err(crate::Error::invalid("PoolSource::new", "empty task pool"));
        }
        Ok(PoolSource {
            tasks,
            input_dim,
            output_dim,
        })
    }
}

impl TaskSource for PoolSource {
    fn sample_task(&mut self, rng: &mut Rng) -> Result<RegressionTask> {
        use rand::Rng as _;
        let i = rng.random_range(0..self.tasks.len());
        Ok(self.tasks[i].clone())
    }

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }
}
