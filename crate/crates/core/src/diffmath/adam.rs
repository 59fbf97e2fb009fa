//! Adaptive-moment (Adam) optimizer with bias correction.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::params::ParamSet;
use super::tensor::Tensor;

/// Per-parameter first/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct OptState {
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl OptState {
    /// Conventional defaults: β₁=0.9, β₂=0.999, ε=1e-8.
    pub fn new(params: &ParamSet) -> Self {
        Self::with_constants(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_constants(params: &ParamSet, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = |p: &ParamSet| {
            p.iter()
                .map(|(n, t)| (n.clone(), vec![0.0; t.len()]))
                .collect()
        };
        OptState {
            step: 0,
            first: zeros(params),
            second: zeros(params),
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. Returns the updated parameters; `state`
/// accumulates moments and the step counter in place.
///
/// Gradients absent from `grads` are treated as zero for that parameter.
pub fn adam_step(
    params: &ParamSet,
    grads: &ParamSet,
    state: &mut OptState,
    lr: f64,
) -> Result<ParamSet> {
    if lr < 0.0 || !lr.is_finite() {
        return Err(Error::invalid("adam_step", "learning rate must be finite and >= 0"));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);

    let mut out = ParamSet::new();
    for (name, tensor) in params.iter() {
        let m = state
            .first
            .get_mut(name)
            .ok_or_else(|| Error::invalid("adam_step", format!("no state for {name:?}")))?;
        let v = state
            .second
            .get_mut(name)
            .ok_or_else(|| Error::invalid("adam_step", format!("no state for {name:?}")))?;

        let zero;
        let g: &[f64] = match grads.get(name) {
            Some(g) => {
                if g.len() != tensor.len() {
                    return Err(Error::dimension(
                        format!("adam_step({name})"),
                        tensor.len(),
                        g.len(),
                    ));
                }
                g.data()
            }
            None => {
                zero = vec![0.0; tensor.len()];
                &zero
            }
        };
        if let Some(bad) = g.iter().find(|x| !x.is_finite()) {
            return Err(Error::numeric(
                format!("adam_step({name})"),
                format!("non-finite gradient entry {bad}"),
            ));
        }

        let mut data = tensor.data().to_vec();
        for i in 0..data.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
        out.insert(name.clone(), Tensor::new(tensor.shape().to_vec(), data)?)?;
    }
    Ok(out)
}
