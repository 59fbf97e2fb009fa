//! ELBO objective and meta-training loop.
//!
//! The loss for one task is the negative single-sample lower bound
//! `-(Σ_{i∈T} log p(y_i | z, x_i) - KL(q(z|C∪T) ‖ q(z|C)))` with `z` drawn
//! by reparameterization from `q(z|C∪T)`. The intractable conditional prior
//! is approximated by the context posterior `q(z|C)`, computed in closed
//! form between diagonal Gaussians.
//!
//! `C∪T` is a set union with exact-bit deduplication, so a target set that
//! coincides with the context yields a KL of exactly zero.

use std::collections::BTreeMap;
use std::collections::HashSet;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::diffmath::{adam_step, mlp::mlp_forward, OptState, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tasks::TaskSource;

use super::{NeuralProcess, NpConfig, PointSet, LATENT_SIGMA_FLOOR};

fn bits_key(x: &[f64], y: &[f64]) -> Vec<u64> {
    x.iter().chain(y.iter()).map(|v| v.to_bits()).collect()
}

/// Context points followed by target points not already present (exact bit
/// equality on `(x, y)`).
fn dedup_union(context: &PointSet, targets: &PointSet) -> PointSet {
    let mut seen: HashSet<Vec<u64>> = HashSet::with_capacity(context.len() + targets.len());
    let mut union = PointSet::empty();
    for (x, y) in context.xs.iter().zip(&context.ys) {
        if seen.insert(bits_key(x, y)) {
            union.push(x.clone(), y.clone());
        }
    }
    for (x, y) in targets.xs.iter().zip(&targets.ys) {
        if seen.insert(bits_key(x, y)) {
            union.push(x.clone(), y.clone());
        }
    }
    union
}

struct LatentNodes {
    mean: Var,
    std: Var,
}

/// Build the latent head `q(z | r, n)` on the tape.
fn latent_graph(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    config: &NpConfig,
    repr: Var,
    n: usize,
) -> Result<LatentNodes> {
    let count = tape.constant_row(vec![(1.0 + n as f64).ln()]);
    let input = tape.concat_cols(repr, count)?;
    let sizes = config.latent_sizes();
    let mean = mlp_forward(tape, vars, "lat_mu", &sizes, config.activation, input)?;
    let raw = mlp_forward(tape, vars, "lat_sig", &sizes, config.activation, input)?;
    let sp = tape.softplus(raw);
    let std = tape.add_scalar(sp, LATENT_SIGMA_FLOOR);
    Ok(LatentNodes { mean, std })
}

/// Stack the dense x-parts of a point list (embedding rows selected from the
/// table parameter when configured).
fn x_matrix(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    np: &NeuralProcess,
    xs: &[Vec<f64>],
) -> Result<Var> {
    let cfg = &np.config;
    match cfg.embedding {
        None => {
            let mut flat = Vec::with_capacity(xs.len() * cfg.input_dim);
            for x in xs {
                flat.extend(np.dense_x(x)?);
            }
            tape.constant(xs.len(), cfg.input_dim, flat)
        }
        Some(e) => {
            let dense_w = cfg.input_dim - 1;
            let mut flat = Vec::with_capacity(xs.len() * dense_w);
            let mut ids = Vec::with_capacity(xs.len());
            for x in xs {
                if x.len() != cfg.input_dim {
                    return Err(Error::dimension("elbo x", cfg.input_dim, x.len()));
                }
                flat.extend_from_slice(&x[..dense_w]);
                let id = x[dense_w];
                if id < 0.0 || id.fract() != 0.0 || (id as usize) >= e.vocab_size {
                    return Err(Error::invalid(
                        "elbo embedding id",
                        format!("{id} not an index below {}", e.vocab_size),
                    ));
                }
                ids.push(id as usize);
            }
            let dense = tape.constant(xs.len(), dense_w, flat)?;
            let table = *vars
                .get("embed.table")
                .ok_or_else(|| Error::invalid("elbo", "missing embed.table"))?;
            let rows = tape.select_rows(table, &ids)?;
            tape.concat_cols(dense, rows)
        }
    }
}

/// Record the negative single-sample ELBO of one task on the tape.
///
/// `noise` is the fixed standard-normal vector for the reparameterized
/// latent draw.
pub(crate) fn elbo_graph(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    np: &NeuralProcess,
    context: &PointSet,
    targets: &PointSet,
    noise: &[f64],
) -> Result<Var> {
    let cfg = &np.config;
    if targets.is_empty() {
        return Err(Error::DegenerateTask("elbo_loss requires targets".into()));
    }
    if noise.len() != cfg.latent_dim {
        return Err(Error::dimension("elbo noise", cfg.latent_dim, noise.len()));
    }
    targets.check_dims(cfg.input_dim, cfg.output_dim, "elbo targets")?;
    context.check_dims(cfg.input_dim, cfg.output_dim, "elbo context")?;

    let union = dedup_union(context, targets);
    let n_ctx = context.len();
    let n_full = union.len();

    // encode the union once; the context rows are its prefix
    let xmat = x_matrix(tape, vars, np, &union.xs)?;
    let mut yflat = Vec::with_capacity(n_full * cfg.output_dim);
    for y in &union.ys {
        let mut yn = y.clone();
        np.normalize_y(&mut yn);
        yflat.extend_from_slice(&yn);
    }
    let ymat = tape.constant(n_full, cfg.output_dim, yflat)?;
    let enc_in = tape.concat_cols(xmat, ymat)?;
    let encoded = mlp_forward(tape, vars, "enc", &cfg.encoder_sizes(), cfg.activation, enc_in)?;

    let r_full = tape.mean_rows_range(encoded, 0, n_full)?;
    let q_full = latent_graph(tape, vars, cfg, r_full, n_full)?;
    let r_ctx = if n_ctx == 0 {
        tape.constant(1, cfg.repr_dim, vec![0.0; cfg.repr_dim])?
    } else {
        tape.mean_rows_range(encoded, 0, n_ctx)?
    };
    let q_ctx = latent_graph(tape, vars, cfg, r_ctx, n_ctx)?;

    // z = μ_full + σ_full ⊙ ε
    let eps = tape.constant(1, cfg.latent_dim, noise.to_vec())?;
    let scaled = tape.mul_elem(q_full.std, eps)?;
    let z = tape.add(q_full.mean, scaled)?;

    // decode every target under z
    let m = targets.len();
    let xt = x_matrix(tape, vars, np, &targets.xs)?;
    let zrows = tape.broadcast_rows(z, m)?;
    let dec_in = tape.concat_cols(xt, zrows)?;
    let out = mlp_forward(tape, vars, "dec", &cfg.decoder_sizes(), cfg.activation, dec_in)?;
    let dy = cfg.output_dim;
    let mean = tape.slice_cols(out, 0, dy)?;
    let raw = tape.slice_cols(out, dy, dy)?;
    let sp = tape.softplus(raw);
    let mut std = tape.add_scalar(sp, cfg.min_sigma);
    if let Some(mx) = cfg.max_sigma {
        std = tape.min_scalar(std, mx);
    }
    let mut yobs = Vec::with_capacity(m * dy);
    for y in &targets.ys {
        let mut yn = y.clone();
        np.normalize_y(&mut yn);
        yobs.extend_from_slice(&yn);
    }
    let ll = tape.gauss_log_prob(mean, std, &yobs)?;
    let kl = tape.gauss_kl(q_full.mean, q_full.std, q_ctx.mean, q_ctx.std)?;
    tape.sub(kl, ll)
}

impl NeuralProcess {
    /// Negative single-sample ELBO of `(context, targets)` under fixed
    /// reparameterization noise.
    pub fn elbo_loss(&self, context: &PointSet, targets: &PointSet, noise: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = tape.register_params(&self.params);
        let loss = elbo_graph(&mut tape, &vars, self, context, targets, noise)?;
        tape.scalar_value(loss)
    }
}

/// Variant of the loss whose KL term is the single-sample estimate
/// `log q(z|C∪T) - log q(z|C)` at the drawn `z`. Used to check that the
/// analytic-KL objective is unbiased against the Monte-Carlo one.
pub fn elbo_loss_mc_kl(
    np: &NeuralProcess,
    context: &PointSet,
    targets: &PointSet,
    noise: &[f64],
) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::DegenerateTask("elbo_loss requires targets".into()));
    }
    let union = dedup_union(context, targets);
    let q_full = np.latent_posterior(&union)?;
    let q_ctx = np.latent_posterior(context)?;
    let z = q_full.reparam_sample(noise)?;
    let pred = np.decode(&targets.xs, &z)?;
    // decode reports raw units; the analytic objective works in model
    // (normalized) units, which shifts each point's density by Σ_j ln σ_y_j
    let log_jac: f64 = match np.params.get("norm.y_std") {
        Some(t) if np.config.normalize => t.data().iter().map(|s| s.ln()).sum(),
        _ => 0.0,
    };
    let mut ll = 0.0;
    for (dist, y) in pred.dists.iter().zip(&targets.ys) {
        ll += dist.log_prob(y)? + log_jac;
    }
    let kl_sample = q_full.log_prob(&z)? - q_ctx.log_prob(&z)?;
    Ok(kl_sample - ll)
}

/// Fit per-dimension standardization constants from a fixed probe of the
/// task source (64 draws) and install them on the model.
fn estimate_normalizer(
    np: &mut NeuralProcess,
    source: &mut dyn TaskSource,
    rng: &mut Rng,
) -> Result<()> {
    let dx = np.config.dense_input_dim();
    let dy = np.config.output_dim;
    let mut n = 0usize;
    let (mut sx, mut sxx) = (vec![0.0; dx], vec![0.0; dx]);
    let (mut sy, mut syy) = (vec![0.0; dy], vec![0.0; dy]);
    for _ in 0..64 {
        let task = source.sample_task(rng)?;
        for (x, y) in task.xs.iter().zip(&task.ys) {
            if x.len() != dx || y.len() != dy {
                return Err(Error::dimension("estimate_normalizer", dx + dy, x.len() + y.len()));
            }
            for j in 0..dx {
                sx[j] += x[j];
                sxx[j] += x[j] * x[j];
            }
            for j in 0..dy {
                sy[j] += y[j];
                syy[j] += y[j] * y[j];
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::DegenerateTask("no points to estimate normalizer".into()));
    }
    let nf = n as f64;
    let x_mean: Vec<f64> = sx.iter().map(|s| s / nf).collect();
    let x_std: Vec<f64> = sxx
        .iter()
        .zip(&x_mean)
        .map(|(s, m)| (s / nf - m * m).max(0.0).sqrt())
        .collect();
    let y_mean: Vec<f64> = sy.iter().map(|s| s / nf).collect();
    let y_std: Vec<f64> = syy
        .iter()
        .zip(&y_mean)
        .map(|(s, m)| (s / nf - m * m).max(0.0).sqrt())
        .collect();
    np.set_normalizer(x_mean, x_std, y_mean, y_std)
}

/// Meta-training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub iters: usize,
    pub batch: usize,
    pub lr: f64,
    /// Upper bound on how many target points beyond the context each task
    /// contributes.
    pub max_extra_targets: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            iters: 10_000,
            batch: 8,
            lr: 1e-3,
            max_extra_targets: 16,
        }
    }
}

fn split_task(
    task: &crate::tasks::RegressionTask,
    max_context: usize,
    max_extra: usize,
    rng: &mut Rng,
) -> (PointSet, PointSet) {
    let n = task.len();
    let c_max = max_context.min(n - 1);
    let c = rng.random_range(1..=c_max);
    let extra = rng.random_range(1..=max_extra.min(n - c));
    let picked = rand::seq::index::sample(rng, n, c + extra);
    let mut context = PointSet::empty();
    let mut targets = PointSet::empty();
    for (j, idx) in picked.iter().enumerate() {
        // targets include the context points (C ⊂ T)
        targets.push(task.xs[idx].clone(), task.ys[idx].clone());
        if j < c {
            context.push(task.xs[idx].clone(), task.ys[idx].clone());
        }
    }
    (context, targets)
}

/// Sum one mini-batch of per-task losses onto `tape`; `None` when every
/// sampled task was unusable.
fn batch_graph(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    np: &NeuralProcess,
    source: &mut dyn TaskSource,
    opts: &TrainOptions,
    rng: &mut Rng,
) -> Result<Option<Var>> {
    let cfg = &np.config;
    let mut total: Option<Var> = None;
    for _ in 0..opts.batch {
        let mut task = source.sample_task(rng)?;
        let mut retries = 0;
        while task.len() < 2 {
            retries += 1;
            if retries > 100 {
                return Err(Error::DegenerateTask(
                    "task source keeps yielding tasks with < 2 points".into(),
                ));
            }
            task = source.sample_task(rng)?;
        }
        let (context, targets) =
            split_task(&task, cfg.max_context_size, opts.max_extra_targets, rng);
        let noise: Vec<f64> = (0..cfg.latent_dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let loss = elbo_graph(tape, vars, np, &context, &targets, &noise)?;
        total = Some(match total {
            None => loss,
            Some(t) => tape.add(t, loss)?,
        });
    }
    Ok(total.map(|t| tape.scale(t, 1.0 / opts.batch as f64)))
}

/// Mini-batch meta-training: each iteration samples `batch` tasks, draws a
/// context/target split per task (`|C| ~ U{1..max_context_size}`, context
/// included in the targets), averages the per-task losses and applies one
/// Adam step.
///
/// Returns the trained model and the loss trace: one probe entry before any
/// update (consuming one batch of source draws) followed by one entry per
/// iteration.
pub fn meta_train(
    config: &NpConfig,
    source: &mut dyn TaskSource,
    opts: &TrainOptions,
    rng: &mut Rng,
) -> Result<(NeuralProcess, Vec<f64>)> {
    config.validate()?;
    if source.input_dim() != config.input_dim || source.output_dim() != config.output_dim {
        return Err(Error::dimension(
            "meta_train source dims",
            config.input_dim + config.output_dim,
            source.input_dim() + source.output_dim(),
        ));
    }
    if opts.batch == 0 {
        return Err(Error::invalid("meta_train", "batch must be >= 1"));
    }
    let mut np = NeuralProcess::init(config.clone(), rng)?;
    if config.normalize {
        estimate_normalizer(&mut np, source, rng)?;
    }
    let mut state = OptState::new(&np.params);
    let mut trace = Vec::with_capacity(opts.iters + 1);

    // initial loss before any update, so a zero-iteration run still traces
    {
        let mut tape = Tape::new();
        let vars = tape.register_params(&np.params);
        if let Some(mean) = batch_graph(&mut tape, &vars, &np, source, opts, rng)? {
            trace.push(tape.scalar_value(mean)?);
        }
    }

    for _ in 0..opts.iters {
        let mut tape = Tape::new();
        let vars = tape.register_params(&np.params);
        let mean = batch_graph(&mut tape, &vars, &np, source, opts, rng)?
            .expect("batch >= 1 yields a loss");
        trace.push(tape.scalar_value(mean)?);
        let grads = tape.param_grads(mean, &vars, &np.params)?;
        np.params = adam_step(&np.params, &grads, &mut state, opts.lr)?;
    }
    Ok((np, trace))
}
