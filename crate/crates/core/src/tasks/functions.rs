//! Sampled smooth 1-D functions for surrogate pretraining and optimisation
//! benchmarks.
//!
//! Functions are zero-mean Gaussian draws under a squared-exponential kernel
//! evaluated on a finite grid, via Cholesky of the kernel matrix. The
//! default distribution (lengthscale 0.25, unit variance on `[-1, 1]`)
//! produces curves with a handful of local minima.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffmath::linalg::cholesky_jittered;
use crate::error::{Error, Result};
use crate::rng::Rng;

use super::{RegressionTask, TaskSource};

/// Squared-exponential kernel hyperparameters for the task distribution.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SeKernel {
    pub lengthscale: f64,
    pub variance: f64,
}

impl Default for SeKernel {
    fn default() -> Self {
        SeKernel {
            lengthscale: 0.25,
            variance: 1.0,
        }
    }
}

impl SeKernel {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let d = x - y;
        self.variance * (-d * d / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }

    /// Kernel matrix over a grid, row-major.
    pub fn matrix(&self, grid: &[f64]) -> Vec<f64> {
        let n = grid.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval(grid[i], grid[j]);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        k
    }
}

/// A 1-D function fixed on an evaluation grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionTask {
    /// Strictly increasing grid of inputs.
    pub grid: Vec<f64>,
    /// True values on the grid.
    pub values: Vec<f64>,
    /// Observation noise applied when the task is evaluated, if any.
    pub noise_std: Option<f64>,
}

impl FunctionTask {
    pub fn new(grid: Vec<f64>, values: Vec<f64>, noise_std: Option<f64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::dimension("FunctionTask::new", grid.len(), values.len()));
        }
        if grid.is_empty() {
            return Err(Error::invalid("FunctionTask::new", "empty grid"));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "FunctionTask::new",
                "grid must be strictly increasing",
            ));
        }
        if values.iter().chain(grid.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("FunctionTask::new", "non-finite entry"));
        }
        Ok(FunctionTask {
            grid,
            values,
            noise_std,
        })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Evaluate candidate `index`, adding observation noise when configured.
    pub fn evaluate(&self, index: usize, rng: &mut Rng) -> f64 {
        let mut v = self.values[index];
        if let Some(s) = self.noise_std {
            let e: f64 = StandardNormal.sample(rng);
            v += s * e;
        }
        v
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Draw one function from the kernel's Gaussian measure on `grid`.
pub fn sample_gp_function(
    kernel: &SeKernel,
    grid: &[f64],
    noise_std: Option<f64>,
    rng: &mut Rng,
) -> Result<FunctionTask> {
    if grid.is_empty() {
        return Err(Error::invalid("sample_gp_function", "empty grid"));
    }
    let n = grid.len();
    if kernel.variance == 0.0 {
        return FunctionTask::new(grid.to_vec(), vec![0.0; n], noise_std);
    }
    let k = kernel.matrix(grid);
    let (l, _) = cholesky_jittered(&k, n, "sample_gp_function")?;
    let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let mut values = vec![0.0; n];
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..=i {
            s += l[i * n + j] * eps[j];
        }
        values[i] = s;
    }
    FunctionTask::new(grid.to_vec(), values, noise_std)
}

/// Evenly spaced grid of `n` points over `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Generative source of 1-D regression tasks: each draw places a fresh
/// random grid in the domain and samples function values on it.
pub struct GpFunctionSource {
    pub kernel: SeKernel,
    pub domain: (f64, f64),
    pub points_per_task: usize,
    pub noise_std: Option<f64>,
}

impl Default for GpFunctionSource {
    fn default() -> Self {
        GpFunctionSource {
            kernel: SeKernel::default(),
            domain: (-1.0, 1.0),
            points_per_task: 64,
            noise_std: None,
        }
    }
}

impl TaskSource for GpFunctionSource {
    fn sample_task(&mut self, rng: &mut Rng) -> Result<RegressionTask> {
        let (lo, hi) = self.domain;
        let mut grid: Vec<f64> = (0..self.points_per_task)
            .map(|_| rng.random_range(lo..hi))
            .collect();
        grid.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        grid.dedup();
        let task = sample_gp_function(&self.kernel, &grid, self.noise_std, rng)?;
        Ok(RegressionTask {
            xs: task.grid.iter().map(|&x| vec![x]).collect(),
            ys: task.values.iter().map(|&y| vec![y]).collect(),
        })
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn output_dim(&self) -> usize {
        1
    }
}

/// One line of the JSONL task-dump format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskDumpRecord {
    pub task_id: u64,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub seed: u64,
}
