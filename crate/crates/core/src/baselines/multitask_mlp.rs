//! Pooled multitask MLP: one regressor fit across all tasks, ignoring task
//! identity. Identical inputs from different tasks pull the fit toward the
//! mean of their outputs, so at best it learns the average function of the
//! task distribution; adaptation happens later by gradient steps on the
//! target task's data.

use crate::diffmath::{
    adam_step, mlp::mlp_forward, mlp_apply, mlp_apply_batch, mlp_init, Activation, OptState,
    ParamSet, Tape,
};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tasks::TaskSource;

/// Architecture and minibatch settings.
#[derive(Debug, Clone)]
pub struct MultitaskMlpConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub minibatch: usize,
    pub lr: f64,
}

impl Default for MultitaskMlpConfig {
    fn default() -> Self {
        MultitaskMlpConfig {
            hidden: vec![128, 128],
            activation: Activation::Relu,
            minibatch: 64,
            lr: 1e-3,
        }
    }
}

/// A trained pooled regressor.
#[derive(Debug, Clone)]
pub struct MultitaskMlp {
    pub params: ParamSet,
    pub sizes: Vec<usize>,
    pub activation: Activation,
}

pub const MLP_PREFIX: &str = "mlp";

impl MultitaskMlp {
    pub fn init(input_dim: usize, output_dim: usize, cfg: &MultitaskMlpConfig, rng: &mut Rng) -> Result<Self> {
        let mut sizes = vec![input_dim];
        sizes.extend(&cfg.hidden);
        sizes.push(output_dim);
        let params = mlp_init(MLP_PREFIX, &sizes, cfg.activation, rng)?;
        Ok(MultitaskMlp {
            params,
            sizes,
            activation: cfg.activation,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        mlp_apply(&self.params, MLP_PREFIX, &self.sizes, self.activation, x)
    }

    pub fn predict_batch(&self, xs: &[f64], n: usize) -> Result<Vec<f64>> {
        mlp_apply_batch(&self.params, MLP_PREFIX, &self.sizes, self.activation, xs, n)
    }

    /// Mean-squared-error loss of `params` on the given rows, recorded on a
    /// fresh tape. Shared by pretraining and per-task adaptation.
    pub fn mse_grads(
        params: &ParamSet,
        sizes: &[usize],
        activation: Activation,
        xs: &[Vec<f64>],
        ys: &[Vec<f64>],
    ) -> Result<(f64, ParamSet)> {
        let n = xs.len();
        if n == 0 {
            return Err(Error::invalid("mse_grads", "no points"));
        }
        let in_dim = sizes[0];
        let out_dim = *sizes.last().expect("sizes non-empty");
        let mut tape = Tape::new();
        let vars = tape.register_params(params);
        let mut flat_x = Vec::with_capacity(n * in_dim);
        let mut flat_y = Vec::with_capacity(n * out_dim);
        for (x, y) in xs.iter().zip(ys) {
            if x.len() != in_dim {
                return Err(Error::dimension("mse_grads x", in_dim, x.len()));
            }
            if y.len() != out_dim {
                return Err(Error::dimension("mse_grads y", out_dim, y.len()));
            }
            flat_x.extend_from_slice(x);
            flat_y.extend_from_slice(y);
        }
        let x = tape.constant(n, in_dim, flat_x)?;
        let yc = tape.constant(n, out_dim, flat_y)?;
        let pred = mlp_forward(&mut tape, &vars, MLP_PREFIX, sizes, activation, x)?;
        let diff = tape.sub(pred, yc)?;
        let sq = tape.mul_elem(diff, diff)?;
        let sum = tape.sum_all(sq);
        let loss = tape.scale(sum, 1.0 / (n * out_dim) as f64);
        let value = tape.scalar_value(loss)?;
        let grads = tape.param_grads(loss, &vars, params)?;
        Ok((value, grads))
    }
}

/// Fit by pooled regression: each iteration samples one task and a
/// minibatch of its points, then applies one Adam step on the MSE. Returns
/// the model and the per-iteration loss trace.
pub fn multitask_mlp_fit(
    source: &mut dyn TaskSource,
    cfg: &MultitaskMlpConfig,
    iters: usize,
    rng: &mut Rng,
) -> Result<(MultitaskMlp, Vec<f64>)> {
    let mut model = MultitaskMlp::init(source.input_dim(), source.output_dim(), cfg, rng)?;
    let mut state = OptState::new(&model.params);
    let mut trace = Vec::with_capacity(iters);
    for _ in 0..iters {
        let task = source.sample_task(rng)?;
        if task.is_empty() {
            return Err(Error::DegenerateTask("multitask_mlp_fit: empty task".into()));
        }
        let take = cfg.minibatch.min(task.len());
        let picked = rand::seq::index::sample(rng, task.len(), take);
        let xs: Vec<Vec<f64>> = picked.iter().map(|i| task.xs[i].clone()).collect();
        let ys: Vec<Vec<f64>> = picked.iter().map(|i| task.ys[i].clone()).collect();
        let (value, grads) =
            MultitaskMlp::mse_grads(&model.params, &model.sizes, model.activation, &xs, &ys)?;
        trace.push(value);
        model.params = adam_step(&model.params, &grads, &mut state, cfg.lr)?;
    }
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use crate::tasks::{PoolSource, RegressionTask};

    fn cfg() -> MultitaskMlpConfig {
        MultitaskMlpConfig {
            hidden: vec![16],
            activation: Activation::Tanh,
            minibatch: 16,
            lr: 1e-2,
        }
    }

    #[test]
    fn conflicting_tasks_converge_to_mean() {
        // task A maps everything to +1, task B to -1: the pooled fit lands
        // near 0
        let xs: Vec<Vec<f64>> = (0..16).map(|i| vec![i as f64 / 8.0 - 1.0]).collect();
        let a = RegressionTask {
            xs: xs.clone(),
            ys: vec![vec![1.0]; 16],
        };
        let b = RegressionTask {
            xs,
            ys: vec![vec![-1.0]; 16],
        };
        let mut src = PoolSource::new(vec![a, b], 1, 1).unwrap();
        let (model, _) = multitask_mlp_fit(&mut src, &cfg(), 3000, &mut rng_from_seed(1)).unwrap();
        for i in 0..8 {
            let x = [i as f64 / 4.0 - 1.0];
            let p = model.predict(&x).unwrap();
            assert!(p[0].abs() < 0.2, "prediction {} at {x:?}", p[0]);
        }
    }

    #[test]
    fn single_task_mse_decreases() {
        let xs: Vec<Vec<f64>> = (0..32).map(|i| vec![i as f64 / 16.0 - 1.0]).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![(2.0 * x[0]).cos()]).collect();
        let mut src = PoolSource::new(vec![RegressionTask { xs, ys }], 1, 1).unwrap();
        let (_, trace) = multitask_mlp_fit(&mut src, &cfg(), 1500, &mut rng_from_seed(2)).unwrap();
        let early: f64 = trace[..50].iter().sum::<f64>() / 50.0;
        let late: f64 = trace[trace.len() - 50..].iter().sum::<f64>() / 50.0;
        assert!(late < early * 0.5, "early {early} late {late}");
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
        let ys = vec![vec![1.0]; 8];
        let task = RegressionTask { xs, ys };
        let mut src = PoolSource::new(vec![task], 1, 1).unwrap();
        let zero = MultitaskMlpConfig { lr: 0.0, ..cfg() };
        let (trained, _) = multitask_mlp_fit(&mut src, &zero, 10, &mut rng_from_seed(3)).unwrap();
        let fresh = MultitaskMlp::init(1, 1, &zero, &mut rng_from_seed(3)).unwrap();
        assert_eq!(trained.params, fresh.params);
    }
}
