//! Dynamics learning on the cart-pole task distribution: conditioning on
//! real transitions must sharpen one-step predictions, and the neural
//! process must beat the pooled multitask MLP after adaptation-free
//! conditioning.

use metasurrogate_core::baselines::multitask_mlp::{multitask_mlp_fit, MultitaskMlpConfig};
use metasurrogate_core::decision::mbrl_meta_train;
use metasurrogate_core::diffmath::Activation;
use metasurrogate_core::neural_process::{NpConfig, PointSet, TrainOptions};
use metasurrogate_core::rng::{derive_rng, rng_from_seed};
use metasurrogate_core::tasks::cartpole::CartPoleSource;
use metasurrogate_core::tasks::TaskSource;

fn dynamics_config() -> NpConfig {
    NpConfig {
        encoder_hidden: vec![32, 32],
        repr_dim: 32,
        latent_dim: 16,
        decoder_hidden: vec![32, 32],
        max_context_size: 250,
        activation: Activation::Relu,
        ..NpConfig::new(6, 6)
    }
}

/// Mean one-step next-state RMSE over held-out tasks at a given context
/// size, using the decoder mean at the posterior-mean latent.
fn np_one_step_rmse(
    np: &metasurrogate_core::neural_process::NeuralProcess,
    source: &CartPoleSource,
    task_indices: std::ops::Range<usize>,
    context_size: usize,
) -> f64 {
    let mut sse = 0.0;
    let mut count = 0usize;
    for idx in task_indices {
        let transitions = source.task_transitions(idx);
        let mut rng = derive_rng(5150, idx as u64);
        let c = context_size.min(transitions.len().saturating_sub(100));
        let total = (c + 200).min(transitions.len());
        let picked = rand::seq::index::sample(&mut rng, transitions.len(), total);
        let mut context = PointSet::empty();
        let mut eval = Vec::new();
        for (j, t) in picked.iter().enumerate() {
            let (x, y) = metasurrogate_core::tasks::cartpole::transition_to_pair(&transitions[t]);
            if j < c {
                context.push(x, y);
            } else {
                eval.push((x, y));
            }
        }
        let q = np.latent_posterior(&context).unwrap();
        let xs: Vec<Vec<f64>> = eval.iter().map(|(x, _)| x.clone()).collect();
        let pred = np.decode(&xs, q.mean()).unwrap();
        for (d, (_, y)) in pred.dists.iter().zip(&eval) {
            // next-state error only (the last output is the reward)
            for j in 0..5 {
                let e = d.mean()[j] - y[j];
                sse += e * e;
            }
            count += 5;
        }
    }
    (sse / count as f64).sqrt()
}

#[test]
fn conditioning_and_baseline_comparison() {
    let mut source = CartPoleSource::new(300, 4, 42);
    let opts = TrainOptions {
        iters: 1200,
        batch: 4,
        lr: 1e-3,
        max_extra_targets: 64,
    };
    let (np, trace) = mbrl_meta_train(&dynamics_config(), &mut source, &opts, &mut rng_from_seed(7))
        .unwrap();
    assert!(trace.len() == opts.iters + 1);

    // held-out instances: indices beyond the training catalogue
    let eval_source = CartPoleSource::new(340, 4, 42);
    let with_ctx = np_one_step_rmse(&np, &eval_source, 300..320, 250);
    let without = np_one_step_rmse(&np, &eval_source, 300..320, 0);
    assert!(
        with_ctx < without,
        "conditioning did not help: {with_ctx:.4} vs {without:.4}"
    );

    // multitask MLP trained on the same distribution, one-step RMSE over the
    // same 20 held-out tasks
    let mut mlp_source = CartPoleSource::new(300, 4, 42);
    let mlp_cfg = MultitaskMlpConfig {
        hidden: vec![32, 32],
        activation: Activation::Relu,
        minibatch: 64,
        lr: 1e-3,
    };
    let (mlp, _) = multitask_mlp_fit(&mut mlp_source, &mlp_cfg, 1200, &mut rng_from_seed(8)).unwrap();
    let mut sse = 0.0;
    let mut count = 0usize;
    for idx in 300..320 {
        let transitions = eval_source.task_transitions(idx);
        let mut rng = derive_rng(5150, idx as u64);
        let c = 250usize.min(transitions.len().saturating_sub(100));
        let total = (c + 200).min(transitions.len());
        let picked = rand::seq::index::sample(&mut rng, transitions.len(), total);
        for (j, t) in picked.iter().enumerate() {
            if j < c {
                continue; // the MLP gets no task-specific adaptation here
            }
            let (x, y) = metasurrogate_core::tasks::cartpole::transition_to_pair(&transitions[t]);
            let pred = mlp.predict(&x).unwrap();
            for k in 0..5 {
                let e = pred[k] - y[k];
                sse += e * e;
            }
            count += 5;
        }
    }
    let mlp_rmse = (sse / count as f64).sqrt();
    assert!(
        mlp_rmse >= with_ctx,
        "pooled MLP ({mlp_rmse:.4}) unexpectedly beat conditioned NP ({with_ctx:.4})"
    );

    let _ = source.input_dim();
}

#[test]
fn zero_iterations_still_traces_and_predicts() {
    let mut source = CartPoleSource::new(10, 2, 1);
    let opts = TrainOptions {
        iters: 0,
        batch: 2,
        lr: 1e-3,
        max_extra_targets: 16,
    };
    let (np, trace) =
        mbrl_meta_train(&dynamics_config(), &mut source, &opts, &mut rng_from_seed(2)).unwrap();
    assert!(!trace.is_empty());
    // predictions run at the prior
    let q = np.latent_posterior(&PointSet::empty()).unwrap();
    let pred = np.decode(&[vec![0.0; 6]], q.mean()).unwrap();
    assert_eq!(pred.dists.len(), 1);
}
