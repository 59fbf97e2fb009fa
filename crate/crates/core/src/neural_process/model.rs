//! Prediction-side neural process: encoding, latent conditioning, decoding
//! and function draws. No tape is involved; these paths run in tight
//! decision loops.

use rand_distr::{Distribution, StandardNormal};

use crate::diffmath::{mlp_apply_batch, mlp_init, DiagGaussian, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

use super::{
    NpConfig, PassCounters, PointSet, Predictive, Provenance, LATENT_SIGMA_FLOOR,
};

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn inv_softplus(y: f64) -> f64 {
    (y.exp() - 1.0).ln()
}

/// A neural process: configuration plus trained parameters.
///
/// Parameters live under `enc.*` (encoder), `lat_mu.*` / `lat_sig.*`
/// (latent heads), `dec.*` (decoder) and optionally `embed.table`.
#[derive(Debug)]
pub struct NeuralProcess {
    pub config: NpConfig,
    pub params: ParamSet,
    pub counters: PassCounters,
}

impl Clone for NeuralProcess {
    fn clone(&self) -> Self {
        NeuralProcess {
            config: self.config.clone(),
            params: self.params.clone(),
            counters: PassCounters::default(),
        }
    }
}

impl NeuralProcess {
    /// Fresh random initialisation for a configuration.
    pub fn init(config: NpConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let act = config.activation;
        let mut params = mlp_init("enc", &config.encoder_sizes(), act, rng)?;
        params.absorb(mlp_init("lat_mu", &config.latent_sizes(), act, rng)?)?;
        params.absorb(mlp_init("lat_sig", &config.latent_sizes(), act, rng)?)?;
        params.absorb(mlp_init("dec", &config.decoder_sizes(), act, rng)?)?;
        if let Some(e) = config.embedding {
            let scale = 1.0 / (e.dim as f64).sqrt();
            let table: Vec<f64> = (0..e.vocab_size * e.dim)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(rng);
                    v * scale
                })
                .collect();
            params.insert("embed.table", Tensor::matrix(e.vocab_size, e.dim, table)?)?;
        }

        // start predictive and latent stddevs at O(1) rather than at the
        // clamp floor, so the first likelihood terms are well-scaled
        let dec_layers = config.decoder_sizes().len() - 1;
        let sigma0 = match config.max_sigma {
            Some(mx) => (0.9 * mx).min(1.0).max(2.0 * config.min_sigma),
            None => 1.0,
        };
        let dec_bias = inv_softplus((sigma0 - config.min_sigma).max(1e-3));
        let bname = format!("dec.b{}", dec_layers - 1);
        if let Some(b) = params.get_mut(&bname) {
            let dy = config.output_dim;
            for v in &mut b.data_mut()[dy..2 * dy] {
                *v = dec_bias;
            }
        }
        let lat_layers = config.latent_sizes().len() - 1;
        let lat_bias = inv_softplus(0.5 - LATENT_SIGMA_FLOOR);
        let lname = format!("lat_sig.b{}", lat_layers - 1);
        if let Some(b) = params.get_mut(&lname) {
            for v in b.data_mut() {
                *v = lat_bias;
            }
        }
        Ok(NeuralProcess {
            config,
            params,
            counters: PassCounters::default(),
        })
    }

    pub fn from_params(config: NpConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        Ok(NeuralProcess {
            config,
            params,
            counters: PassCounters::default(),
        })
    }

    /// Install per-dimension standardization constants (dense-x and y).
    /// Stored as `norm.*` parameters so checkpoints carry them; they are
    /// never touched by gradients.
    pub fn set_normalizer(
        &mut self,
        x_mean: Vec<f64>,
        x_std: Vec<f64>,
        y_mean: Vec<f64>,
        y_std: Vec<f64>,
    ) -> Result<()> {
        if !self.config.normalize {
            return Err(Error::invalid("set_normalizer", "config.normalize is false"));
        }
        let dx = self.config.dense_input_dim();
        let dy = self.config.output_dim;
        if x_mean.len() != dx || x_std.len() != dx {
            return Err(Error::dimension("set_normalizer x", dx, x_mean.len()));
        }
        if y_mean.len() != dy || y_std.len() != dy {
            return Err(Error::dimension("set_normalizer y", dy, y_mean.len()));
        }
        let floor = |v: Vec<f64>| v.into_iter().map(|s| s.max(1e-6)).collect::<Vec<f64>>();
        let entries = [
            ("norm.x_mean", x_mean),
            ("norm.x_std", floor(x_std)),
            ("norm.y_mean", y_mean),
            ("norm.y_std", floor(y_std)),
        ];
        for (name, data) in entries {
            let t = Tensor::vector(data);
            if self.params.get(name).is_some() {
                self.params.set(name, t)?;
            } else {
                self.params.insert(name, t)?;
            }
        }
        Ok(())
    }

    fn norm_vec(&self, name: &str) -> Option<&[f64]> {
        if !self.config.normalize {
            return None;
        }
        self.params.get(name).map(|t| t.data())
    }

    pub(crate) fn normalize_dense_x(&self, row: &mut [f64]) {
        if let (Some(mean), Some(std)) = (self.norm_vec("norm.x_mean"), self.norm_vec("norm.x_std")) {
            for ((v, m), s) in row.iter_mut().zip(mean).zip(std) {
                *v = (*v - m) / s;
            }
        }
    }

    pub(crate) fn normalize_y(&self, row: &mut [f64]) {
        if let (Some(mean), Some(std)) = (self.norm_vec("norm.y_mean"), self.norm_vec("norm.y_std")) {
            for ((v, m), s) in row.iter_mut().zip(mean).zip(std) {
                *v = (*v - m) / s;
            }
        }
    }

    /// Substitute the embedding row for the id slot, if configured.
    pub(crate) fn dense_x(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.config.input_dim {
            return Err(Error::dimension("neural_process x", self.config.input_dim, x.len()));
        }
        match self.config.embedding {
            None => {
                let mut row = x.to_vec();
                self.normalize_dense_x(&mut row);
                Ok(row)
            }
            Some(e) => {
                let id = x[x.len() - 1];
                let idx = id as usize;
                if id < 0.0 || id.fract() != 0.0 || idx >= e.vocab_size {
                    return Err(Error::invalid(
                        "neural_process embedding id",
                        format!("{id} not an index below {}", e.vocab_size),
                    ));
                }
                let table = self
                    .params
                    .get("embed.table")
                    .ok_or_else(|| Error::invalid("neural_process", "missing embed.table"))?;
                let mut out = Vec::with_capacity(self.config.dense_input_dim());
                out.extend_from_slice(&x[..x.len() - 1]);
                out.extend_from_slice(table.row(idx));
                self.normalize_dense_x(&mut out);
                Ok(out)
            }
        }
    }

    /// Per-point encoder input `dense(x) ++ y`.
    pub(crate) fn encode_input(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.config.output_dim {
            return Err(Error::dimension(
                "neural_process y",
                self.config.output_dim,
                y.len(),
            ));
        }
        let mut row = self.dense_x(x)?;
        let mut yn = y.to_vec();
        self.normalize_y(&mut yn);
        row.extend_from_slice(&yn);
        Ok(row)
    }

    /// Sum of per-point encodings; the aggregated representation is
    /// `sum / n` under the mean aggregator. Exposed at the sum level so
    /// conditioned views can extend a context in O(1).
    pub(crate) fn encode_sum(&self, set: &PointSet) -> Result<Vec<f64>> {
        set.check_dims(self.config.input_dim, self.config.output_dim, "encode_aggregate")?;
        let n = set.len();
        let r_dim = self.config.repr_dim;
        if n == 0 {
            return Ok(vec![0.0; r_dim]);
        }
        let width = self.config.dense_input_dim() + self.config.output_dim;
        let mut rows = Vec::with_capacity(n * width);
        for (x, y) in set.xs.iter().zip(&set.ys) {
            rows.extend(self.encode_input(x, y)?);
        }
        let encoded = mlp_apply_batch(
            &self.params,
            "enc",
            &self.config.encoder_sizes(),
            self.config.activation,
            &rows,
            n,
        )?;
        self.counters.add_encoder(n);
        let mut sum = vec![0.0; r_dim];
        for row in encoded.chunks_exact(r_dim) {
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
        }
        Ok(sum)
    }

    pub(crate) fn encode_point(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let row = self.encode_input(x, y)?;
        let out = mlp_apply_batch(
            &self.params,
            "enc",
            &self.config.encoder_sizes(),
            self.config.activation,
            &row,
            1,
        )?;
        self.counters.add_encoder(1);
        Ok(out)
    }

    /// Permutation-invariant aggregated representation of a context set.
    /// The empty set maps to the zero vector.
    pub fn encode_aggregate(&self, context: &PointSet) -> Result<Vec<f64>> {
        let mut sum = self.encode_sum(context)?;
        if !context.is_empty() {
            let inv = 1.0 / context.len() as f64;
            for v in sum.iter_mut() {
                *v *= inv;
            }
        }
        Ok(sum)
    }

    /// Latent posterior `q(z | r, n)`; the count enters as `log(1+n)`.
    pub fn latent_posterior_from_repr(&self, repr: &[f64], n: usize) -> Result<DiagGaussian> {
        if repr.len() != self.config.repr_dim {
            return Err(Error::dimension(
                "latent_posterior repr",
                self.config.repr_dim,
                repr.len(),
            ));
        }
        let mut input = repr.to_vec();
        input.push((1.0 + n as f64).ln());
        let sizes = self.config.latent_sizes();
        let mu = mlp_apply_batch(&self.params, "lat_mu", &sizes, self.config.activation, &input, 1)?;
        let raw = mlp_apply_batch(&self.params, "lat_sig", &sizes, self.config.activation, &input, 1)?;
        let sigma: Vec<f64> = raw.iter().map(|r| LATENT_SIGMA_FLOOR + softplus(*r)).collect();
        DiagGaussian::new(mu, sigma)
    }

    /// Latent posterior conditioned on a context set.
    pub fn latent_posterior(&self, context: &PointSet) -> Result<DiagGaussian> {
        let r = self.encode_aggregate(context)?;
        self.latent_posterior_from_repr(&r, context.len())
    }

    /// Decode targets under a fixed latent value.
    pub fn decode(&self, xs: &[Vec<f64>], z: &[f64]) -> Result<Predictive> {
        if z.len() != self.config.latent_dim {
            return Err(Error::dimension("decode z", self.config.latent_dim, z.len()));
        }
        let m = xs.len();
        let width = self.config.dense_input_dim() + self.config.latent_dim;
        let mut rows = Vec::with_capacity(m * width);
        for x in xs {
            let mut row = self.dense_x(x)?;
            row.extend_from_slice(z);
            rows.extend(row);
        }
        let out = mlp_apply_batch(
            &self.params,
            "dec",
            &self.config.decoder_sizes(),
            self.config.activation,
            &rows,
            m,
        )?;
        self.counters.add_decoder(m);
        let dy = self.config.output_dim;
        let y_mean = self.norm_vec("norm.y_mean").map(<[f64]>::to_vec);
        let y_std = self.norm_vec("norm.y_std").map(<[f64]>::to_vec);
        let mut dists = Vec::with_capacity(m);
        for row in out.chunks_exact(2 * dy) {
            let mut mean = row[..dy].to_vec();
            let mut sigma: Vec<f64> = row[dy..]
                .iter()
                .map(|r| {
                    let s = self.config.min_sigma + softplus(*r);
                    match self.config.max_sigma {
                        Some(mx) => s.min(mx),
                        None => s,
                    }
                })
                .collect();
            // clamps act in model (normalized) units; report raw units
            if let (Some(ym), Some(ys)) = (&y_mean, &y_std) {
                for j in 0..dy {
                    mean[j] = mean[j] * ys[j] + ym[j];
                    sigma[j] *= ys[j];
                }
            }
            dists.push(DiagGaussian::new(mean, sigma)?);
        }
        Ok(Predictive {
            dists,
            provenance: Provenance::SingleZDraw,
        })
    }

    /// One function draw: sample `z ~ q(z|C)` and return the decoder means
    /// at every target.
    pub fn sample_function(
        &self,
        context: &PointSet,
        xs: &[Vec<f64>],
        rng: &mut Rng,
    ) -> Result<Vec<Vec<f64>>> {
        let q = self.latent_posterior(context)?;
        let z = q.sample(rng);
        Ok(self.decode(xs, &z)?.means())
    }

    /// Moment-matched predictive over `num_z` latent draws.
    pub fn predict_marginal(
        &self,
        context: &PointSet,
        xs: &[Vec<f64>],
        num_z: usize,
        rng: &mut Rng,
    ) -> Result<Predictive> {
        if num_z == 0 {
            return Err(Error::invalid("predict_marginal", "num_z must be >= 1"));
        }
        let q = self.latent_posterior(context)?;
        let mut components: Vec<Predictive> = Vec::with_capacity(num_z);
        for _ in 0..num_z {
            let z = q.sample(rng);
            components.push(self.decode(xs, &z)?);
        }
        self.moment_match_components(&components, xs.len())
    }

    pub(crate) fn moment_match_components(
        &self,
        components: &[Predictive],
        num_targets: usize,
    ) -> Result<Predictive> {
        let mut dists = Vec::with_capacity(num_targets);
        for t in 0..num_targets {
            let parts: Vec<&DiagGaussian> = components.iter().map(|c| &c.dists[t]).collect();
            let mut mm = moment_match(&parts)?;
            if let Some(mx) = self.config.max_sigma {
                let clamped: Vec<f64> = mm.stddev().iter().map(|s| s.min(mx)).collect();
                mm = DiagGaussian::new(mm.mean().to_vec(), clamped)?;
            }
            dists.push(mm);
        }
        Ok(Predictive {
            dists,
            provenance: Provenance::MomentMatched,
        })
    }
}

/// Collapse an equally-weighted mixture of diagonal Gaussians to one
/// Gaussian: mean of means; variance = mean of variances + variance of
/// means.
pub fn moment_match(components: &[&DiagGaussian]) -> Result<DiagGaussian> {
    let k = components.len();
    if k == 0 {
        return Err(Error::invalid("moment_match", "no components"));
    }
    let d = components[0].dim();
    let mut mean = vec![0.0; d];
    let mut second = vec![0.0; d];
    let mut var_of_means = vec![0.0; d];
    for c in components {
        if c.dim() != d {
            return Err(Error::dimension("moment_match", d, c.dim()));
        }
        for j in 0..d {
            mean[j] += c.mean()[j];
            second[j] += c.stddev()[j] * c.stddev()[j];
        }
    }
    for j in 0..d {
        mean[j] /= k as f64;
        second[j] /= k as f64;
    }
    for c in components {
        for j in 0..d {
            let dm = c.mean()[j] - mean[j];
            var_of_means[j] += dm * dm;
        }
    }
    let std: Vec<f64> = (0..d)
        .map(|j| (second[j] + var_of_means[j] / k as f64).sqrt())
        .collect();
    DiagGaussian::new(mean, std)
}
