use metasurrogate_core::baselines::multitask_mlp::{multitask_mlp_fit, MultitaskMlpConfig};
use metasurrogate_core::decision::mbrl_meta_train;
use metasurrogate_core::diffmath::Activation;
use metasurrogate_core::neural_process::{NpConfig, PointSet, TrainOptions};
use metasurrogate_core::rng::{derive_rng, rng_from_seed};
use metasurrogate_core::tasks::cartpole::CartPoleSource;

fn np_rmse(np: &metasurrogate_core::neural_process::NeuralProcess, source: &CartPoleSource, range: std::ops::Range<usize>, context_size: usize) -> f64 {
    let mut sse = 0.0; let mut count = 0usize;
    for idx in range {
        let transitions = source.task_transitions(idx);
        let mut rng = derive_rng(5150, idx as u64);
        let c = context_size.min(transitions.len().saturating_sub(100));
        let total = (c + 200).min(transitions.len());
        let picked = rand::seq::index::sample(&mut rng, transitions.len(), total);
        let mut context = PointSet::empty();
        let mut eval = Vec::new();
        for (j, t) in picked.iter().enumerate() {
            let (x, y) = metasurrogate_core::tasks::cartpole::transition_to_pair(&transitions[t]);
            if j < c { context.push(x, y); } else { eval.push((x, y)); }
        }
        let q = np.latent_posterior(&context).unwrap();
        let xs: Vec<Vec<f64>> = eval.iter().map(|(x, _)| x.clone()).collect();
        let pred = np.decode(&xs, q.mean()).unwrap();
        for (d, (_, y)) in pred.dists.iter().zip(&eval) {
            for j in 0..5 { let e = d.mean()[j] - y[j]; sse += e * e; }
            count += 5;
        }
    }
    (sse / count as f64).sqrt()
}

fn np_rmse_per_dim(np: &metasurrogate_core::neural_process::NeuralProcess, source: &CartPoleSource, range: std::ops::Range<usize>, context_size: usize) -> Vec<f64> {
    let mut sse = vec![0.0; 6]; let mut count = 0usize;
    for idx in range {
        let transitions = source.task_transitions(idx);
        let mut rng = derive_rng(5150, idx as u64);
        let c = context_size.min(transitions.len().saturating_sub(100));
        let total = (c + 200).min(transitions.len());
        let picked = rand::seq::index::sample(&mut rng, transitions.len(), total);
        let mut context = PointSet::empty();
        let mut eval = Vec::new();
        for (j, t) in picked.iter().enumerate() {
            let (x, y) = metasurrogate_core::tasks::cartpole::transition_to_pair(&transitions[t]);
            if j < c { context.push(x, y); } else { eval.push((x, y)); }
        }
        let q = np.latent_posterior(&context).unwrap();
        let xs: Vec<Vec<f64>> = eval.iter().map(|(x, _)| x.clone()).collect();
        let pred = np.decode(&xs, q.mean()).unwrap();
        for (d, (_, y)) in pred.dists.iter().zip(&eval) {
            for j in 0..6 { let e = d.mean()[j] - y[j]; sse[j] += e * e; }
            count += 1;
        }
    }
    sse.iter().map(|s| (s / count as f64).sqrt()).collect()
}

fn main() {
    let iters: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let config = NpConfig {
        encoder_hidden: vec![64, 64], repr_dim: 64, latent_dim: 32,
        decoder_hidden: vec![64, 64], max_context_size: 250,
        min_sigma: 0.01, max_sigma: Some(0.6), normalize: true,
        activation: Activation::Relu, ..NpConfig::new(6, 6)
    };
    let mut source = CartPoleSource::new(300, 4, 42);
    let opts = TrainOptions { iters, batch: 8, lr: 1e-3, max_extra_targets: 128 };
    let t0 = std::time::Instant::now();
    let (np, trace) = mbrl_meta_train(&config, &mut source, &opts, &mut rng_from_seed(7)).unwrap();
    eprintln!("np train {:?} loss {:.3} -> {:.3}", t0.elapsed(), trace[0], trace.last().unwrap());
    let eval_source = CartPoleSource::new(340, 4, 42);
    for c in [0usize, 50, 250] {
        eprintln!("np rmse |C|={c}: {:.4}  per-dim {:?}", np_rmse(&np, &eval_source, 300..320, c),
            np_rmse_per_dim(&np, &eval_source, 300..320, c).iter().map(|v| (v*1000.0).round()/1000.0).collect::<Vec<_>>());
    }
    let mut mlp_source = CartPoleSource::new(300, 4, 42);
    let mlp_cfg = MultitaskMlpConfig { hidden: vec![64, 64], activation: Activation::Relu, minibatch: 64, lr: 1e-3 };
    let t1 = std::time::Instant::now();
    let (mlp, _) = multitask_mlp_fit(&mut mlp_source, &mlp_cfg, iters, &mut rng_from_seed(8)).unwrap();
    eprintln!("mlp train {:?}", t1.elapsed());
    let mut sse = 0.0; let mut count = 0usize;
    for idx in 300..320 {
        let transitions = eval_source.task_transitions(idx);
        let mut rng = derive_rng(5150, idx as u64);
        let c = 250usize.min(transitions.len().saturating_sub(100));
        let total = (c + 200).min(transitions.len());
        let picked = rand::seq::index::sample(&mut rng, transitions.len(), total);
        for (j, t) in picked.iter().enumerate() {
            if j < c { continue; }
            let (x, y) = metasurrogate_core::tasks::cartpole::transition_to_pair(&transitions[t]);
            let pred = mlp.predict(&x).unwrap();
            for k in 0..5 { let e = pred[k] - y[k]; sse += e * e; }
            count += 5;
        }
    }
    eprintln!("mlp rmse: {:.4}", (sse / count as f64).sqrt());
}
