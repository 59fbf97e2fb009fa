use metasurrogate_core::baselines::gp::{GpPosterior, KernelFn};
use metasurrogate_core::diffmath::Activation;
use metasurrogate_core::neural_process::{meta_train, NpConfig, PointSet, TrainOptions};
use metasurrogate_core::rng::{derive_rng, rng_from_seed};
use metasurrogate_core::tasks::functions::{linspace, sample_gp_function, GpFunctionSource, SeKernel};

fn main() {
    let iters: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10000);
    let config = NpConfig {
        encoder_hidden: vec![64, 64], repr_dim: 64, latent_dim: 32,
        decoder_hidden: vec![64, 64], max_context_size: 40,
        activation: Activation::Relu, ..NpConfig::new(1, 1)
    };
    let mut source = GpFunctionSource { points_per_task: 60, ..GpFunctionSource::default() };
    let opts = TrainOptions { iters, batch: 8, lr: 1e-3, max_extra_targets: 16 };
    let t0 = std::time::Instant::now();
    let (np, trace) = meta_train(&config, &mut source, &opts, &mut rng_from_seed(1)).unwrap();
    eprintln!("train {:?} loss {:.3} -> {:.3}", t0.elapsed(), trace[0], trace.last().unwrap());

    let kernel = SeKernel::default();
    let grid = linspace(-1.0, 1.0, 100);
    let gp_kernel = KernelFn::SquaredExp { lengthscale: kernel.lengthscale, variance: kernel.variance };
    let (mut np_sse, mut gp_sse, mut n_pts) = (0.0, 0.0, 0usize);
    let (mut ll_ctx, mut ll_prior) = (0.0, 0.0);
    for rep in 0..100u64 {
        let mut rng = derive_rng(777, rep);
        let task = sample_gp_function(&kernel, &grid, None, &mut rng).unwrap();
        let idx = rand::seq::index::sample(&mut rng, grid.len(), 10);
        let mut ctx = PointSet::empty();
        let mut in_ctx = vec![false; grid.len()];
        let (mut xs_tr, mut ys_tr) = (Vec::new(), Vec::new());
        for i in idx.iter() {
            ctx.push(vec![task.grid[i]], vec![task.values[i]]);
            xs_tr.push(vec![task.grid[i]]);
            ys_tr.push(task.values[i]);
            in_ctx[i] = true;
        }
        let hold: Vec<usize> = (0..grid.len()).filter(|&i| !in_ctx[i]).collect();
        let xs: Vec<Vec<f64>> = hold.iter().map(|&i| vec![task.grid[i]]).collect();
        let pred = np.predict_marginal(&ctx, &xs, 50, &mut derive_rng(88, rep)).unwrap();
        let prior = np.predict_marginal(&PointSet::empty(), &xs, 50, &mut derive_rng(89, rep)).unwrap();
        let gp = GpPosterior::fit(gp_kernel, 1e-8, &xs_tr, &ys_tr).unwrap();
        let (gm, gv) = gp.predict(&xs);
        for (j, &i) in hold.iter().enumerate() {
            let y = task.values[i];
            np_sse += (pred.dists[j].mean()[0] - y).powi(2);
            gp_sse += (gm[j] - y).powi(2);
            let _ = gv[j];
            ll_ctx += pred.dists[j].log_prob(&[y]).unwrap();
            ll_prior += prior.dists[j].log_prob(&[y]).unwrap();
            n_pts += 1;
        }
    }
    let np_rmse = (np_sse / n_pts as f64).sqrt();
    let gp_rmse = (gp_sse / n_pts as f64).sqrt();
    eprintln!("np rmse {:.4}  gp rmse {:.4}  ratio {:.3}", np_rmse, gp_rmse, np_rmse / gp_rmse);
    eprintln!("ll/point ctx {:.4} prior {:.4} gain {:.4}", ll_ctx / n_pts as f64, ll_prior / n_pts as f64, (ll_ctx - ll_prior) / n_pts as f64);
}
