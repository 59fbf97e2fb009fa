//! Multi-layer perceptrons over [`ParamSet`] weights.
//!
//! Parameters for a network named `prefix` live under `{prefix}.w{i}`
//! (shape `[out, in]`) and `{prefix}.b{i}` (shape `[out]`). Hidden layers
//! apply the activation; the final layer is linear.

use std::collections::BTreeMap;


use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

use super::params::ParamSet;
use super::tape::{Tape, Var};
use super::tensor::{matmul_nt, matvec, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(&self, v: &mut [f64]) {
        match self {
            Activation::Relu => {
                for x in v.iter_mut() {
                    *x = x.max(0.0);
                }
            }
            Activation::Tanh => {
                for x in v.iter_mut() {
                    *x = x.tanh();
                }
            }
        }
    }
}

fn check_sizes(prefix: &str, sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::invalid(
            format!("mlp({prefix})"),
            "layer_sizes needs at least input and output widths",
        ));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::invalid(format!("mlp({prefix})"), "zero layer width"));
    }
    Ok(())
}

/// Initialise weights for the layer-size chain `sizes = [in, h.., out]`.
///
/// Weights draw from N(0, gain/in) — He-style for relu, Xavier-style for
/// tanh — biases start at zero.
pub fn mlp_init(prefix: &str, sizes: &[usize], activation: Activation, rng: &mut Rng) -> Result<ParamSet> {
    check_sizes(prefix, sizes)?;
    use rand_distr::{Distribution, StandardNormal};
    let gain = match activation {
        Activation::Relu => 2.0,
        Activation::Tanh => 1.0,
    };
    let mut params = ParamSet::new();
    for l in 0..sizes.len() - 1 {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let scale = (gain / fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| {
                let e: f64 = StandardNormal.sample(rng);
                e * scale
            })
            .collect();
        params.insert(format!("{prefix}.w{l}"), Tensor::matrix(fan_out, fan_in, w)?)?;
        params.insert(format!("{prefix}.b{l}"), Tensor::zeros(vec![fan_out]))?;
    }
    Ok(params)
}

fn layer<'p>(params: &'p ParamSet, prefix: &str, l: usize, sizes: &[usize]) -> Result<(&'p Tensor, &'p Tensor)> {
    let wname = format!("{prefix}.w{l}");
    let bname = format!("{prefix}.b{l}");
    let w = params
        .get(&wname)
        .ok_or_else(|| Error::invalid(format!("mlp({prefix})"), format!("missing {wname}")))?;
    let b = params
        .get(&bname)
        .ok_or_else(|| Error::invalid(format!("mlp({prefix})"), format!("missing {bname}")))?;
    let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
    if w.shape() != [fan_out, fan_in] {
        return Err(Error::dimension(format!("mlp({prefix}) layer {l} weight"), fan_out * fan_in, w.len()));
    }
    if b.len() != fan_out {
        return Err(Error::dimension(format!("mlp({prefix}) layer {l} bias"), fan_out, b.len()));
    }
    Ok((w, b))
}

/// Forward pass for a single input vector.
pub fn mlp_apply(
    params: &ParamSet,
    prefix: &str,
    sizes: &[usize],
    activation: Activation,
    input: &[f64],
) -> Result<Vec<f64>> {
    check_sizes(prefix, sizes)?;
    if input.len() != sizes[0] {
        return Err(Error::dimension(format!("mlp({prefix}) input"), sizes[0], input.len()));
    }
    let mut h = input.to_vec();
    for l in 0..sizes.len() - 1 {
        let (w, b) = layer(params, prefix, l, sizes)?;
        let mut next = matvec(w.data(), sizes[l + 1], sizes[l], &h);
        for (v, bv) in next.iter_mut().zip(b.data()) {
            *v += bv;
        }
        if l + 1 < sizes.len() - 1 {
            activation.apply(&mut next);
        }
        h = next;
    }
    Ok(h)
}

/// Forward pass for a batch of rows. `inputs` is `[n, sizes[0]]` row-major;
/// the result is `[n, sizes.last()]`.
pub fn mlp_apply_batch(
    params: &ParamSet,
    prefix: &str,
    sizes: &[usize],
    activation: Activation,
    inputs: &[f64],
    n: usize,
) -> Result<Vec<f64>> {
    check_sizes(prefix, sizes)?;
    if inputs.len() != n * sizes[0] {
        return Err(Error::dimension(format!("mlp({prefix}) input"), n * sizes[0], inputs.len()));
    }
    let mut h = inputs.to_vec();
    for l in 0..sizes.len() - 1 {
        let (w, b) = layer(params, prefix, l, sizes)?;
        let mut next = matmul_nt(&h, n, sizes[l], w.data(), sizes[l + 1]);
        for row in next.chunks_exact_mut(sizes[l + 1]) {
            for (v, bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
        if l + 1 < sizes.len() - 1 {
            activation.apply(&mut next);
        }
        h = next;
    }
    Ok(h)
}

/// Tape-recorded forward pass on a `[n, sizes[0]]` input node.
pub fn mlp_forward(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    prefix: &str,
    sizes: &[usize],
    activation: Activation,
    input: Var,
) -> Result<Var> {
    check_sizes(prefix, sizes)?;
    let (_, width) = tape.shape(input);
    if width != sizes[0] {
        return Err(Error::dimension(format!("mlp({prefix}) input"), sizes[0], width));
    }
    let mut h = input;
    for l in 0..sizes.len() - 1 {
        let wname = format!("{prefix}.w{l}");
        let bname = format!("{prefix}.b{l}");
        let w = *vars
            .get(&wname)
            .ok_or_else(|| Error::invalid(format!("mlp({prefix})"), format!("missing {wname}")))?;
        let b = *vars
            .get(&bname)
            .ok_or_else(|| Error::invalid(format!("mlp({prefix})"), format!("missing {bname}")))?;
        h = tape.matmul_nt(h, w)?;
        h = tape.add_row(h, b)?;
        if l + 1 < sizes.len() - 1 {
            h = match activation {
                Activation::Relu => tape.relu(h),
                Activation::Tanh => tape.tanh(h),
            };
        }
    }
    Ok(h)
}
