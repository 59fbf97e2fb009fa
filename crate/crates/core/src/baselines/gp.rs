//! Exact Gaussian-process regression via Cholesky factorization.
//!
//! The benchmark kernel is a product of a linear kernel and a Matérn 3/2:
//! `k(x,x') = [σ_l² (x·x')] · [σ_f² (1 + √3 d/ℓ) exp(-√3 d/ℓ)]` with
//! `d = ‖x - x'‖`. A squared-exponential kernel is also provided; it is the
//! generating kernel of the synthetic 1-D task distribution, which makes
//! the GP with the true hyperparameters an oracle for those tasks.
//!
//! Hyperparameters are fixed per experiment; there is no marginal-likelihood
//! optimisation, so posteriors are deterministic in their inputs.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffmath::gaussian::LN_2PI;
use crate::diffmath::linalg::{cholesky_jittered, solve_lower, solve_lower_t};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Hyperparameters of the linear × Matérn 3/2 product kernel plus the
/// observation noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub matern_lengthscale: f64,
    pub matern_variance: f64,
    pub linear_variance: f64,
    pub noise_variance: f64,
}

impl Default for GpHyper {
    fn default() -> Self {
        GpHyper {
            matern_lengthscale: 0.5,
            matern_variance: 1.0,
            linear_variance: 1.0,
            noise_variance: 1e-4,
        }
    }
}

impl GpHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.matern_lengthscale > 0.0) || !(self.matern_variance > 0.0) {
            return Err(Error::invalid("GpHyper", "Matérn parameters must be positive"));
        }
        if self.linear_variance < 0.0 {
            return Err(Error::invalid("GpHyper", "linear variance must be >= 0"));
        }
        if !(self.noise_variance > 0.0) {
            return Err(Error::invalid("GpHyper", "noise variance must be positive"));
        }
        Ok(())
    }
}

/// Kernel functions available to the GP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelFn {
    LinearMatern32 {
        lengthscale: f64,
        variance: f64,
        linear_variance: f64,
    },
    SquaredExp {
        lengthscale: f64,
        variance: f64,
    },
}

impl KernelFn {
    pub fn from_hyper(h: &GpHyper) -> Self {
        KernelFn::LinearMatern32 {
            lengthscale: h.matern_lengthscale,
            variance: h.matern_variance,
            linear_variance: h.linear_variance,
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match *self {
            KernelFn::LinearMatern32 {
                lengthscale,
                variance,
                linear_variance,
            } => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                let s = 3.0f64.sqrt() * d2.sqrt() / lengthscale;
                (linear_variance * dot) * (variance * (1.0 + s) * (-s).exp())
            }
            KernelFn::SquaredExp {
                lengthscale,
                variance,
            } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                variance * (-d2 / (2.0 * lengthscale * lengthscale)).exp()
            }
        }
    }
}

/// The benchmark kernel `[σ_l² (x·x')] · [σ_f² (1+√3 d/ℓ) exp(-√3 d/ℓ)]`.
pub fn kernel_eval(h: &GpHyper, a: &[f64], b: &[f64]) -> f64 {
    KernelFn::from_hyper(h).eval(a, b)
}

/// An exact GP posterior: training inputs, Cholesky factor of
/// `K + σ_n² I` and the precomputed weight vector `α = (K + σ_n² I)⁻¹ y`.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    kernel: KernelFn,
    noise_variance: f64,
    x_train: Vec<Vec<f64>>,
    chol: Vec<f64>,
    alpha: Vec<f64>,
}

impl GpPosterior {
    /// Fit on scalar targets. Requires at least one point; the kernel matrix
    /// plus noise must be positive definite (after jitter escalation).
    pub fn fit(kernel: KernelFn, noise_variance: f64, xs: &[Vec<f64>], ys: &[f64]) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::invalid(
                "GpPosterior::fit",
                format!("need matching non-empty inputs, got {} xs / {} ys", xs.len(), ys.len()),
            ));
        }
        let n = xs.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = kernel.eval(&xs[i], &xs[j]);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
            k[i * n + i] += noise_variance;
        }
        let (chol, _) = cholesky_jittered(&k, n, "gp_fit")?;
        let tmp = solve_lower(&chol, n, ys);
        let alpha = solve_lower_t(&chol, n, &tmp);
        Ok(GpPosterior {
            kernel,
            noise_variance,
            x_train: xs.to_vec(),
            chol,
            alpha,
        })
    }

    pub fn len(&self) -> usize {
        self.x_train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_train.is_empty()
    }

    fn cross_column(&self, xq: &[f64]) -> Vec<f64> {
        self.x_train
            .iter()
            .map(|xt| self.kernel.eval(xt, xq))
            .collect()
    }

    /// Marginal posterior mean and variance at each query point.
    pub fn predict(&self, xq: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let n = self.len();
        let mut means = Vec::with_capacity(xq.len());
        let mut vars = Vec::with_capacity(xq.len());
        for q in xq {
            let ks = self.cross_column(q);
            let mean: f64 = ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
            let v = solve_lower(&self.chol, n, &ks);
            let prior = self.kernel.eval(q, q);
            let var = (prior - v.iter().map(|x| x * x).sum::<f64>()).max(0.0);
            means.push(mean);
            vars.push(var);
        }
        (means, vars)
    }

    /// Joint posterior over the query set: mean vector and dense covariance.
    pub fn predict_joint(&self, xq: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let n = self.len();
        let m = xq.len();
        let mut means = Vec::with_capacity(m);
        let mut vs: Vec<Vec<f64>> = Vec::with_capacity(m);
        for q in xq {
            let ks = self.cross_column(q);
            means.push(ks.iter().zip(&self.alpha).map(|(a, b)| a * b).sum());
            vs.push(solve_lower(&self.chol, n, &ks));
        }
        let mut cov = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..=i {
                let prior = self.kernel.eval(&xq[i], &xq[j]);
                let dot: f64 = vs[i].iter().zip(&vs[j]).map(|(a, b)| a * b).sum();
                let c = prior - dot;
                cov[i * m + j] = c;
                cov[j * m + i] = c;
            }
        }
        (means, cov)
    }

    /// One joint sample from the posterior over the query points.
    pub fn sample(&self, xq: &[Vec<f64>], rng: &mut Rng) -> Result<Vec<f64>> {
        let (means, cov) = self.predict_joint(xq);
        let m = xq.len();
        let (chol, _) = cholesky_jittered(&cov, m, "gp_sample")?;
        let eps: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
        let mut out = means;
        for i in 0..m {
            for j in 0..=i {
                out[i] += chol[i * m + j] * eps[j];
            }
        }
        Ok(out)
    }

    /// Log predictive density of held-out observations (marginal per point,
    /// observation noise included).
    pub fn log_likelihood(&self, xq: &[Vec<f64>], yq: &[f64]) -> f64 {
        let (means, vars) = self.predict(xq);
        means
            .iter()
            .zip(&vars)
            .zip(yq)
            .map(|((m, v), y)| {
                let s2 = v + self.noise_variance;
                -0.5 * LN_2PI - 0.5 * s2.ln() - (y - m) * (y - m) / (2.0 * s2)
            })
            .sum()
    }
}

/// Fit the benchmark-kernel GP with `h`'s noise variance.
pub fn gp_fit(h: &GpHyper, xs: &[Vec<f64>], ys: &[f64]) -> Result<GpPosterior> {
    h.validate()?;
    GpPosterior::fit(KernelFn::from_hyper(h), h.noise_variance, xs, ys)
}

/// One joint posterior draw at the query points.
pub fn gp_sample(post: &GpPosterior, xq: &[Vec<f64>], rng: &mut Rng) -> Result<Vec<f64>> {
    post.sample(xq, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng as _;

    fn hyper() -> GpHyper {
        GpHyper {
            matern_lengthscale: 0.7,
            matern_variance: 1.3,
            linear_variance: 0.8,
            noise_variance: 1e-6,
        }
    }

    #[test]
    fn kernel_diagonal_and_orthogonal_cases() {
        let h = hyper();
        let x = [0.5, -1.0];
        let norm2: f64 = x.iter().map(|v| v * v).sum();
        let want = h.linear_variance * norm2 * h.matern_variance;
        assert!((kernel_eval(&h, &x, &x) - want).abs() < 1e-12);
        // orthogonal inputs: the linear factor kills the product
        let a = [1.0, 0.0];
        let b = [0.0, 2.0];
        assert_eq!(kernel_eval(&h, &a, &b), 0.0);
    }

    #[test]
    fn kernel_matches_independent_formula() {
        let h = hyper();
        let mut rng = rng_from_seed(1);
        for _ in 0..50 {
            let a: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            // independent recomputation, written out in full
            let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            let lin = h.linear_variance * dot;
            let arg = 3.0f64.sqrt() * d / h.matern_lengthscale;
            let mat = h.matern_variance * (1.0 + arg) * (-arg).exp();
            let want = lin * mat;
            assert!((kernel_eval(&h, &a, &b) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolates_single_point_in_noiseless_limit() {
        let h = GpHyper {
            noise_variance: 1e-12,
            ..hyper()
        };
        let xs = vec![vec![1.0]];
        let post = gp_fit(&h, &xs, &[2.5]).unwrap();
        let (means, vars) = post.predict(&xs);
        assert!((means[0] - 2.5).abs() < 1e-4);
        assert!(vars[0] < 1e-4);
    }

    #[test]
    fn reverts_to_prior_far_from_data() {
        let h = hyper();
        let xs = vec![vec![1.0], vec![1.2]];
        let post = gp_fit(&h, &xs, &[0.5, -0.5]).unwrap();
        let far = vec![vec![60.0]];
        let (means, vars) = post.predict(&far);
        assert!(means[0].abs() < 1e-6, "mean {}", means[0]);
        let prior = kernel_eval(&h, &far[0], &far[0]);
        assert!((vars[0] - prior).abs() / prior < 1e-6);
    }

    #[test]
    fn matches_naive_inverse_oracle() {
        let h = GpHyper {
            noise_variance: 1e-3,
            ..hyper()
        };
        let mut rng = rng_from_seed(5);
        let xs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..2).map(|_| rng.random_range(0.2..2.0)).collect())
            .collect();
        let ys: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let post = gp_fit(&h, &xs, &ys).unwrap();
        let q = vec![vec![0.9, 1.1], vec![1.5, 0.4]];
        let (means, vars) = post.predict(&q);

        // oracle: dense inverse by Gauss-Jordan elimination
        let n = 5;
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] = kernel_eval(&h, &xs[i], &xs[j]);
            }
            k[i * n + i] += h.noise_variance;
        }
        let mut inv = vec![0.0; n * n];
        for i in 0..n {
            inv[i * n + i] = 1.0;
        }
        for col in 0..n {
            let piv = k[col * n + col];
            for j in 0..n {
                k[col * n + j] /= piv;
                inv[col * n + j] /= piv;
            }
            for row in 0..n {
                if row != col {
                    let f = k[row * n + col];
                    for j in 0..n {
                        k[row * n + j] -= f * k[col * n + j];
                        inv[row * n + j] -= f * inv[col * n + j];
                    }
                }
            }
        }
        for (qi, q_pt) in q.iter().enumerate() {
            let ks: Vec<f64> = xs.iter().map(|x| kernel_eval(&h, x, q_pt)).collect();
            let mut kinv_y = 0.0;
            let mut kinv_k = 0.0;
            for i in 0..n {
                let mut row = 0.0;
                for j in 0..n {
                    row += inv[i * n + j] * ks[j];
                }
                kinv_y += row * ys[i];
                kinv_k += row * ks[i];
            }
            // note K⁻¹ is symmetric, so Σ_i (K⁻¹ k)_i y_i = k'K⁻¹y
            assert!((means[qi] - kinv_y).abs() < 1e-8);
            let want_var = kernel_eval(&h, q_pt, q_pt) - kinv_k;
            assert!((vars[qi] - want_var).abs() < 1e-8);
        }
    }

    #[test]
    fn sample_collapses_to_mean_without_posterior_variance() {
        let h = GpHyper {
            noise_variance: 1e-10,
            ..hyper()
        };
        let xs = vec![vec![0.7], vec![1.3]];
        let post = gp_fit(&h, &xs, &[1.0, -1.0]).unwrap();
        let s = post.sample(&xs, &mut rng_from_seed(0)).unwrap();
        let (means, _) = post.predict(&xs);
        for (a, b) in s.iter().zip(&means) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn sample_reproducible_and_covariance_correct() {
        let h = hyper();
        let xs = vec![vec![0.5], vec![1.5], vec![2.5]];
        let ys = [0.3, -0.2, 0.8];
        let post = gp_fit(&h, &xs, &ys).unwrap();
        let q = vec![vec![0.8], vec![2.0]];
        let a = post.sample(&q, &mut rng_from_seed(11)).unwrap();
        let b = post.sample(&q, &mut rng_from_seed(11)).unwrap();
        assert_eq!(a, b);

        let (means, cov) = post.predict_joint(&q);
        let n = 10_000usize;
        let mut rng = rng_from_seed(12);
        let mut s = vec![0.0; 2];
        let mut sp = vec![0.0; 4];
        for _ in 0..n {
            let d = post.sample(&q, &mut rng).unwrap();
            for i in 0..2 {
                s[i] += d[i];
                for j in 0..2 {
                    sp[i * 2 + j] += d[i] * d[j];
                }
            }
        }
        let nf = n as f64;
        for i in 0..2 {
            for j in 0..2 {
                let emp = sp[i * 2 + j] / nf - (s[i] / nf) * (s[j] / nf);
                let want = cov[i * 2 + j];
                let scale = (cov[i * 2 + i] * cov[j * 2 + j]).sqrt();
                let se = scale * (2.0 / nf).sqrt();
                assert!((emp - want).abs() < 3.0 * se, "cov[{i}{j}] {emp} vs {want}");
            }
        }
        let mean_se = (cov[0] / nf).sqrt().max((cov[3] / nf).sqrt());
        for i in 0..2 {
            assert!((s[i] / nf - means[i]).abs() < 4.0 * mean_se);
        }
    }

    #[test]
    fn training_targets_reproduced_in_noiseless_limit() {
        let h = GpHyper {
            noise_variance: 1e-10,
            ..hyper()
        };
        let mut rng = rng_from_seed(21);
        let xs: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.random_range(0.5..3.0)]).collect();
        let ys: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let post = gp_fit(&h, &xs, &ys).unwrap();
        let (means, _) = post.predict(&xs);
        for (m, y) in means.iter().zip(&ys) {
            assert!((m - y).abs() < 1e-4);
        }
    }

    #[test]
    fn variance_never_increases_with_more_data() {
        let h = hyper();
        let xs = vec![vec![0.5], vec![1.5]];
        let ys = [0.2, -0.4];
        let post2 = gp_fit(&h, &xs, &ys).unwrap();
        let mut xs3 = xs.clone();
        xs3.push(vec![2.2]);
        let post3 = gp_fit(&h, &xs3, &[0.2, -0.4, 0.9]).unwrap();
        let grid: Vec<Vec<f64>> = (0..50).map(|i| vec![0.2 + i as f64 * 0.05]).collect();
        let (_, v2) = post2.predict(&grid);
        let (_, v3) = post3.predict(&grid);
        for (a, b) in v2.iter().zip(&v3) {
            assert!(b <= &(a + 1e-8), "variance grew: {a} -> {b}");
        }
    }

    #[test]
    fn kernel_symmetry() {
        let h = hyper();
        let mut rng = rng_from_seed(33);
        for _ in 0..100 {
            let a: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            assert_eq!(kernel_eval(&h, &a, &b), kernel_eval(&h, &b, &a));
        }
    }
}
