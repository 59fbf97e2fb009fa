//! The surrogate-model interface shared by every decision loop, with
//! adapters for the neural process, the exact GP and the multitask MLP.
//!
//! `condition` is pure: it returns a view derived from the trained model
//! and the context, never mutating the underlying parameters. Decision
//! loops therefore adapt by re-conditioning, not by gradient steps — except
//! the multitask MLP, whose conditioned view is produced by a fixed number
//! of gradient steps from the pretrained weights each time.

use crate::baselines::gp::KernelFn;
use crate::baselines::multitask_mlp::MultitaskMlp;
use crate::diffmath::{DiagGaussian, Tensor};
use crate::error::{Error, Result};
use crate::neural_process::{NeuralProcess, PointSet, Predictive, Provenance};
use crate::rng::Rng;

/// A probabilistic model over functions that can be conditioned on
/// observations.
pub trait Surrogate {
    type Cond<'a>: Conditioned
    where
        Self: 'a;

    /// Condition on a context set, returning a new view. The receiver is
    /// immutable; conditioning twice with the same context yields an
    /// equivalent view.
    fn condition<'a>(&'a self, context: &PointSet) -> Result<Self::Cond<'a>>;
}

/// A conditioned view: supports joint function draws and marginal
/// prediction, and can be extended by one observation.
pub trait Conditioned {
    /// One coherent function draw, reported as the predicted mean output
    /// per query point.
    fn sample_function(&self, xs: &[Vec<f64>], rng: &mut Rng) -> Result<Vec<Vec<f64>>>;

    /// Marginal predictive distribution per query point.
    fn predict(&self, xs: &[Vec<f64>], rng: &mut Rng) -> Result<Predictive>;

    /// The view conditioned on one additional observation.
    fn extended(&self, x: &[f64], y: &[f64]) -> Result<Self>
    where
        Self: Sized;
}

// ---- neural process ----------------------------------------------------

/// Neural-process adapter. `num_z` controls how many latent draws the
/// moment-matched predictive uses.
pub struct NpSurrogate<'m> {
    pub np: &'m NeuralProcess,
    pub num_z: usize,
}

impl<'m> NpSurrogate<'m> {
    pub fn new(np: &'m NeuralProcess) -> Self {
        NpSurrogate { np, num_z: 16 }
    }
}

/// Conditioned neural process: the aggregated context representation is
/// cached as a sum so extension by one point costs a single encoder pass.
pub struct NpConditioned<'m> {
    np: &'m NeuralProcess,
    num_z: usize,
    repr_sum: Vec<f64>,
    count: usize,
    posterior: DiagGaussian,
}

impl<'m> Surrogate for NpSurrogate<'m> {
    type Cond<'a>
        = NpConditioned<'a>
    where
        Self: 'a;

    fn condition<'a>(&'a self, context: &PointSet) -> Result<NpConditioned<'a>> {
        if context.len() > self.np.config.max_context_size {
            return Err(Error::invalid(
                "NpSurrogate::condition",
                format!(
                    "context size {} exceeds max_context_size {}",
                    context.len(),
                    self.np.config.max_context_size
                ),
            ));
        }
        let repr_sum = self.np.encode_sum(context)?;
        let count = context.len();
        let posterior = posterior_from_sum(self.np, &repr_sum, count)?;
        Ok(NpConditioned {
            np: self.np,
            num_z: self.num_z,
            repr_sum,
            count,
            posterior,
        })
    }
}

fn posterior_from_sum(np: &NeuralProcess, sum: &[f64], count: usize) -> Result<DiagGaussian> {
    let repr: Vec<f64> = if count == 0 {
        sum.to_vec()
    } else {
        sum.iter().map(|v| v / count as f64).collect()
    };
    np.latent_posterior_from_repr(&repr, count)
}

impl NpConditioned<'_> {
    pub fn posterior(&self) -> &DiagGaussian {
        &self.posterior
    }
}

impl Conditioned for NpConditioned<'_> {
    fn sample_function(&self, xs: &[Vec<f64>], rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
        let z = self.posterior.sample(rng);
        Ok(self.np.decode(xs, &z)?.means())
    }

    fn predict(&self, xs: &[Vec<f64>], rng: &mut Rng) -> Result<Predictive> {
        let mut components = Vec::with_capacity(self.num_z);
        for _ in 0..self.num_z {
            let z = self.posterior.sample(rng);
            components.push(self.np.decode(xs, &z)?);
        }
        self.np.moment_match_components(&components, xs.len())
    }

    fn extended(&self, x: &[f64], y: &[f64]) -> Result<Self> {
        let r = self.np.encode_point(x, y)?;
        let mut repr_sum = self.repr_sum.clone();
        for (s, v) in repr_sum.iter_mut().zip(&r) {
            *s += v;
        }
        let count = self.count + 1;
        let posterior = posterior_from_sum(self.np, &repr_sum, count)?;
        Ok(NpConditioned {
            np: self.np,
            num_z: self.num_z,
            repr_sum,
            count,
            posterior,
        })
    }
}

// ---- exact GP ------------------------------------------------------------

/// Exact-GP adapter over scalar outputs. An empty context falls back to the
/// zero-mean prior.
#[derive(Debug, Clone)]
pub struct GpSurrogate {
    pub kernel: KernelFn,
    pub noise_variance: f64,
}

pub struct GpConditioned<'m> {
    surrogate: &'m GpSurrogate,
    context: PointSet,
    posterior: Option<crate::baselines::gp::GpPosterior>,
}

impl Surrogate for GpSurrogate {
    type Cond<'a>
        = GpConditioned<'a>
    where
        Self: 'a;

    fn condition<'a>(&'a self, context: &PointSet) -> Result<GpConditioned<'a>> {
        let posterior = if context.is_empty() {
            None
        } else {
            let ys = scalar_targets(context)?;
            Some(crate::baselines::gp::GpPosterior::fit(
                self.kernel,
                self.noise_variance,
                &context.xs,
                &ys,
            )?)
        };
        Ok(GpConditioned {
            surrogate: self,
            context: context.clone(),
            posterior,
        })
    }
}

fn scalar_targets(set: &PointSet) -> Result<Vec<f64>> {
    set.ys
        .iter()
        .map(|y| {
            if y.len() == 1 {
                Ok(y[0])
            } else {
                Err(Error::dimension("GpSurrogate targets", 1, y.len()))
            }
        })
        .collect()
}

impl GpConditioned<'_> {
    fn prior_moments(&self, xs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let means = vec![0.0; xs.len()];
        let vars: Vec<f64> = xs
            .iter()
            .map(|x| self.surrogate.kernel.eval(x, x))
            .collect();
        (means, vars)
    }
}

impl Conditioned for GpConditioned<'_> {
    fn sample_function(&self, xs: &[Vec<f64>], rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
        let draw = match &self.posterior {
            Some(post) => post.sample(xs, rng)?,
            None => {
                // joint prior draw
                let n = xs.len();
                let mut cov = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..=i {
                        let v = self.surrogate.kernel.eval(&xs[i], &xs[j]);
                        cov[i * n + j] = v;
                        cov[j * n + i] = v;
                    }
                }
                let (chol, _) = crate::diffmath::linalg::cholesky_jittered(&cov, n, "gp prior draw")?;
                use rand_distr::{Distribution, StandardNormal};
                let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
                let mut out = vec![0.0; n];
                for i in 0..n {
                    for j in 0..=i {
                        out[i] += chol[i * n + j] * eps[j];
                    }
                }
                out
            }
        };
        Ok(draw.into_iter().map(|v| vec![v]).collect())
    }

    fn predict(&self, xs: &[Vec<f64>], _rng: &mut Rng) -> Result<Predictive> {
        let (means, vars) = match &self.posterior {
            Some(post) => post.predict(xs),
            None => self.prior_moments(xs),
        };
        let dists = means
            .into_iter()
            .zip(vars)
            .map(|(m, v)| DiagGaussian::new(vec![m], vec![v.max(1e-12).sqrt()]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Predictive {
            dists,
            provenance: Provenance::MomentMatched,
        })
    }

    fn extended(&self, x: &[f64], y: &[f64]) -> Result<Self> {
        let mut context = self.context.clone();
        context.push(x.to_vec(), y.to_vec());
        self.surrogate.condition(&context)
    }
}

// ---- multitask MLP --------------------------------------------------------

/// Multitask-MLP adapter. Conditioning clones the pretrained weights and
/// takes `adapt_steps` SGD steps on the context MSE; the predictive carries
/// a fixed stddev because the regressor models no uncertainty of its own
/// (function draws are its plain predictions).
#[derive(Debug, Clone)]
pub struct MlpSurrogate {
    pub base: MultitaskMlp,
    pub adapt_steps: usize,
    pub adapt_lr: f64,
    pub predict_sigma: f64,
}

impl MlpSurrogate {
    pub fn new(base: MultitaskMlp) -> Self {
        MlpSurrogate {
            base,
            adapt_steps: 10,
            adapt_lr: 1e-3,
            predict_sigma: 1.0,
        }
    }
}

pub struct MlpConditioned<'m> {
    surrogate: &'m MlpSurrogate,
    context: PointSet,
    model: MultitaskMlp,
}

impl Surrogate for MlpSurrogate {
    type Cond<'a>
        = MlpConditioned<'a>
    where
        Self: 'a;

    fn condition<'a>(&'a self, context: &PointSet) -> Result<MlpConditioned<'a>> {
        let mut model = self.base.clone();
        if !context.is_empty() {
            for _ in 0..self.adapt_steps {
                let (_, grads) = MultitaskMlp::mse_grads(
                    &model.params,
                    &model.sizes,
                    model.activation,
                    &context.xs,
                    &context.ys,
                )?;
                // plain SGD on the context
                for (name, g) in grads.iter() {
                    let p = model
                        .params
                        .get(name)
                        .ok_or_else(|| Error::invalid("MlpSurrogate", "missing param"))?;
                    let data: Vec<f64> = p
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(w, gv)| w - self.adapt_lr * gv)
                        .collect();
                    let shape = p.shape().to_vec();
                    model.params.set(name, Tensor::new(shape, data)?)?;
                }
            }
        }
        Ok(MlpConditioned {
            surrogate: self,
            context: context.clone(),
            model,
        })
    }
}

impl Conditioned for MlpConditioned<'_> {
    fn sample_function(&self, xs: &[Vec<f64>], _rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
        xs.iter().map(|x| self.model.predict(x)).collect()
    }

    fn predict(&self, xs: &[Vec<f64>], _rng: &mut Rng) -> Result<Predictive> {
        let dists = xs
            .iter()
            .map(|x| {
                let mean = self.model.predict(x)?;
                let d = mean.len();
                DiagGaussian::new(mean, vec![self.surrogate.predict_sigma; d])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Predictive {
            dists,
            provenance: Provenance::MomentMatched,
        })
    }

    fn extended(&self, x: &[f64], y: &[f64]) -> Result<Self> {
        let mut context = self.context.clone();
        context.push(x.to_vec(), y.to_vec());
        self.surrogate.condition(&context)
    }
}
