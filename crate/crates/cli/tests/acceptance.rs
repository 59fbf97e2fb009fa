//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measurements (run with `--nocapture` to see them).
//!
//! The heavier criteria share trained models through `OnceLock` fixtures;
//! training happens once per `cargo test` invocation. Criterion 5 needs the
//! MovieLens-100k files and reports SKIP when they are not available (set
//! `METASURROGATE_DATA_DIR` or place them under `data/ml-100k`).

mod common;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use metasurrogate::config::ExperimentConfig;
use metasurrogate::pipelines;
use metasurrogate_core::baselines::gp::{GpPosterior, KernelFn};
use metasurrogate_core::decision::{
    bandit_eval_multi, bo_loop, flat_random_search, info_gain_select, mbrl_test_loop,
    planted_minimum_pool, random_policy_rollouts, random_search_loop, two_level_search,
    Acquisition, Conditioned, GpSurrogate, NpSurrogate, PlannerConfig, Surrogate,
};
use metasurrogate_core::diffmath::{gradient, DiagGaussian, ParamSet, Tape, Tensor};
use metasurrogate_core::diffmath::mlp::{mlp_forward, mlp_init, Activation};
use metasurrogate_core::neural_process::{
    meta_train, NeuralProcess, NpConfig, PointSet, Predictive, Provenance as NpProvenance,
    TrainOptions,
};
use metasurrogate_core::rng::{derive_rng, derive_seed, rng_from_seed, Rng, RngExt as _};
use metasurrogate_core::tasks::cartpole::{CartPoleParams, CartPoleSource};
use metasurrogate_core::tasks::functions::{
    linspace, sample_gp_function, GpFunctionSource, SeKernel,
};
use metasurrogate_core::tasks::movielens::movielens_ingest;

// Re-exported under a neutral name so the fixture section reads clearly.
use metasurrogate_core::neural_process::Provenance;

fn pass(criterion: usize, detail: &str) {
    println!("criterion {criterion}: PASS — {detail}");
}

// ===== criterion 1: gradient correctness =====================================

#[test]
fn criterion_1_gradient_correctness() {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    for trial in 0..100u64 {
        let mut rng = rng_from_seed(1000 + trial);
        let depth = rng.random_range(1..=3usize);
        let mut sizes = vec![rng.random_range(1..=4usize)];
        for _ in 0..depth {
            sizes.push(rng.random_range(2..=8usize));
        }
        sizes.push(2); // mean + raw stddev
        let activation = if rng.random_range(0..2) == 0 {
            Activation::Relu
        } else {
            Activation::Tanh
        };
        let n_pts = rng.random_range(1..=5usize);
        let mut params = mlp_init("f", &sizes, activation, &mut rng).unwrap();
        // jitter biases off zero: with relu stacks a zero bias can park a
        // pre-activation exactly on the kink, where central differences and
        // the subgradient legitimately disagree
        let names: Vec<String> = params.names().cloned().collect();
        for name in names {
            if name.contains(".b") {
                for v in params.get_mut(&name).unwrap().data_mut() {
                    *v += rng.random_range(-0.3..0.3);
                }
            }
        }
        let xs: Vec<f64> = (0..n_pts * sizes[0])
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let ys: Vec<f64> = (0..n_pts).map(|_| rng.random_range(-1.0..1.0)).collect();
        let noise: Vec<f64> = (0..n_pts).map(|_| rng.random_range(-1.0..1.0)).collect();

        let build = |tape: &mut Tape,
                     vars: &std::collections::BTreeMap<String, metasurrogate_core::diffmath::Var>|
         -> metasurrogate_core::Result<metasurrogate_core::diffmath::Var> {
            let x = tape.constant(n_pts, sizes[0], xs.clone())?;
            let out = mlp_forward(tape, vars, "f", &sizes, activation, x)?;
            let mean = tape.slice_cols(out, 0, 1)?;
            let raw = tape.slice_cols(out, 1, 1)?;
            let sp = tape.softplus(raw);
            let std = tape.add_scalar(sp, 0.05);
            let eps = tape.constant(n_pts, 1, noise.clone())?;
            let jitter = tape.mul_elem(std, eps)?;
            let mean = tape.add(mean, jitter)?;
            let ll = tape.gauss_log_prob(mean, std, &ys)?;
            let ones = tape.constant(n_pts, 1, vec![1.0; n_pts])?;
            let zeros = tape.constant(n_pts, 1, vec![0.0; n_pts])?;
            let kl = tape.gauss_kl(mean, std, zeros, ones)?;
            let h = tape.gauss_entropy(std);
            let nll = tape.scale(ll, -1.0);
            let a = tape.add(nll, kl)?;
            let hs = tape.scale(h, 0.1);
            tape.add(a, hs)
        };

        let (_, grads) = gradient(&params, |t, v| build(t, v)).unwrap();
        // central finite differences, h = 1e-5
        let h = 1e-5;
        for (name, g) in grads.iter() {
            let base = params.get(name).unwrap().clone();
            for i in 0..base.len() {
                let eval = |delta: f64| {
                    let mut p = params.clone();
                    p.get_mut(name).unwrap().data_mut()[i] += delta;
                    let mut tape = Tape::new();
                    let vars = tape.register_params(&p);
                    let loss = build(&mut tape, &vars).unwrap();
                    tape.scalar_value(loss).unwrap()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let a = g.data()[i];
                let denom = a.abs().max(fd.abs()).max(1e-2);
                let rel = (a - fd).abs() / denom;
                worst = worst.max(rel);
                assert!(
                    rel < 1e-5,
                    "trial {trial} param {name}[{i}]: autodiff {a} vs fd {fd} (rel {rel:.2e})"
                );
            }
        }
    }
    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs() < 30, "took {elapsed:?}");
    pass(1, &format!("100 configs, max rel err {worst:.2e}, {elapsed:.1?}"));
}

// ===== criterion 2: NP invariant suite =======================================

#[test]
fn criterion_2_np_invariants() {
    let t0 = Instant::now();
    let config = NpConfig {
        encoder_hidden: vec![16],
        repr_dim: 8,
        latent_dim: 4,
        decoder_hidden: vec![16],
        max_context_size: 30,
        max_sigma: Some(1.5),
        ..NpConfig::new(1, 1)
    };

    // permutation invariance within 1e-9
    for seed in 0..50u64 {
        let np = NeuralProcess::init(config.clone(), &mut rng_from_seed(seed)).unwrap();
        let mut rng = rng_from_seed(900 + seed);
        let n = rng.random_range(2..=12usize);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        let ys: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        let ctx = PointSet::new(xs.clone(), ys.clone()).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        // deterministic shuffle
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let ctx_p = PointSet::new(
            perm.iter().map(|&i| xs[i].clone()).collect(),
            perm.iter().map(|&i| ys[i].clone()).collect(),
        )
        .unwrap();
        let q1 = np.latent_posterior(&ctx).unwrap();
        let q2 = np.latent_posterior(&ctx_p).unwrap();
        for (a, b) in q1.mean().iter().zip(q2.mean()) {
            assert!((a - b).abs() <= 1e-9);
        }
        for (a, b) in q1.stddev().iter().zip(q2.stddev()) {
            assert!((a - b).abs() <= 1e-9);
        }
        let xq = vec![vec![0.3]];
        let p1 = np.predict_marginal(&ctx, &xq, 8, &mut rng_from_seed(5)).unwrap();
        let p2 = np.predict_marginal(&ctx_p, &xq, 8, &mut rng_from_seed(5)).unwrap();
        assert!((p1.dists[0].mean()[0] - p2.dists[0].mean()[0]).abs() <= 1e-9);
        assert!((p1.dists[0].stddev()[0] - p2.dists[0].stddev()[0]).abs() <= 1e-9);
    }

    // empty-context convention
    let np = NeuralProcess::init(config.clone(), &mut rng_from_seed(3)).unwrap();
    let r = np.encode_aggregate(&PointSet::empty()).unwrap();
    assert!(r.iter().all(|v| *v == 0.0));
    let q = np.latent_posterior(&PointSet::empty()).unwrap();
    assert!(q.stddev().iter().all(|s| *s > 0.0));

    // ELBO KL term vanishes when the conditioning sets coincide
    for seed in 0..20u64 {
        let np = NeuralProcess::init(config.clone(), &mut rng_from_seed(40 + seed)).unwrap();
        let mut rng = rng_from_seed(700 + seed);
        let n = rng.random_range(2..=8usize);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        let ys: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
        let ctx = PointSet::new(xs.clone(), ys.clone()).unwrap();
        let targets = ctx.clone();
        let noise: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = np.elbo_loss(&ctx, &targets, &noise).unwrap();
        let q = np.latent_posterior(&ctx).unwrap();
        let z = q.reparam_sample(&noise).unwrap();
        let pred = np.decode(&targets.xs, &z).unwrap();
        let mut ll = 0.0;
        for (d, y) in pred.dists.iter().zip(&targets.ys) {
            ll += d.log_prob(y).unwrap();
        }
        assert!(
            (loss + ll).abs() < 1e-9,
            "seed {seed}: loss {loss} vs -ll {}",
            -ll
        );
    }

    // stddev clamps on 1000 random probes
    let mut rng = rng_from_seed(77);
    for probe in 0..1000u64 {
        let np = NeuralProcess::init(config.clone(), &mut rng_from_seed(2000 + probe)).unwrap();
        let n = rng.random_range(0..=10usize);
        let ctx = PointSet::new(
            (0..n).map(|_| vec![rng.random_range(-1.0..1.0)]).collect(),
            (0..n).map(|_| vec![rng.random_range(-3.0..3.0)]).collect(),
        )
        .unwrap();
        let xq = vec![vec![rng.random_range(-1.0..1.0)]];
        let p = np.predict_marginal(&ctx, &xq, 4, &mut rng_from_seed(probe)).unwrap();
        let s = p.dists[0].stddev()[0];
        assert!((0.1..=1.5 + 1e-12).contains(&s), "probe {probe}: stddev {s}");
    }

    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    pass(2, &format!("permutation/empty/KL/clamp checks, {elapsed:.1?}"));
}

// ===== criterion 7: acquisition equivalence ==================================

/// Toy arm model with hand-set conditional variances: the variance at each
/// arm depends only on WHICH arm has been (hypothetically) observed, as in
/// a Gaussian model, so the info-gain expectation is exact at any sample
/// count. Prior variances are equal across arms, which makes the entropy
/// baseline arm-independent.
struct ToyArms {
    arms: Vec<Vec<f64>>,
    prior_var: f64,
    /// cond_var[i][j]: variance at arm j after observing arm i.
    cond_var: Vec<Vec<f64>>,
}

struct ToyCond<'a> {
    model: &'a ToyArms,
    observed: Option<usize>,
}

impl ToyArms {
    fn arm_of(&self, x: &[f64]) -> usize {
        self.arms.iter().position(|a| a == x).expect("known arm")
    }
}

impl Surrogate for ToyArms {
    type Cond<'a>
        = ToyCond<'a>
    where
        Self: 'a;
    fn condition<'a>(&'a self, context: &PointSet) -> metasurrogate_core::Result<ToyCond<'a>> {
        let observed = context.xs.last().map(|x| self.arm_of(x));
        Ok(ToyCond {
            model: self,
            observed,
        })
    }
}

impl Conditioned for ToyCond<'_> {
    fn sample_function(
        &self,
        xs: &[Vec<f64>],
        _rng: &mut Rng,
    ) -> metasurrogate_core::Result<Vec<Vec<f64>>> {
        Ok(xs.iter().map(|_| vec![0.0]).collect())
    }

    fn predict(&self, xs: &[Vec<f64>], _rng: &mut Rng) -> metasurrogate_core::Result<Predictive> {
        let dists = xs
            .iter()
            .map(|x| {
                let j = self.model.arm_of(x);
                let v = match self.observed {
                    Some(i) => self.model.cond_var[i][j],
                    None => self.model.prior_var,
                };
                DiagGaussian::new(vec![0.0], vec![v.sqrt()])
            })
            .collect::<metasurrogate_core::Result<Vec<_>>>()?;
        Ok(Predictive {
            dists,
            provenance: metasurrogate_core::neural_process::Provenance::MomentMatched,
        })
    }

    fn extended(&self, x: &[f64], _y: &[f64]) -> metasurrogate_core::Result<Self> {
        Ok(ToyCond {
            model: self.model,
            observed: Some(self.model.arm_of(x)),
        })
    }
}

#[test]
fn criterion_7_acquisition_equivalence() {
    let t0 = Instant::now();
    let mut agreements = 0usize;
    for trial in 0..50u64 {
        let mut rng = rng_from_seed(31_000 + trial);
        let k = rng.random_range(3..=6usize);
        let arms: Vec<Vec<f64>> = (0..k).map(|i| vec![i as f64]).collect();
        let prior_var = rng.random_range(0.5..2.0);
        let cond_var: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..k).map(|_| rng.random_range(0.01..1.0)).collect())
            .collect();
        let model = ToyArms {
            arms: arms.clone(),
            prior_var,
            cond_var,
        };
        let cond = model.condition(&PointSet::empty()).unwrap();

        // large-S selection (the expectation is exact for any S here)
        let got = info_gain_select(&cond, &arms, 64, &mut rng_from_seed(trial)).unwrap();

        // brute-force argmax of the information gain via entropies
        let mut best = (0usize, f64::NEG_INFINITY);
        for i in 0..k {
            let rest: Vec<Vec<f64>> = (0..k).filter(|j| *j != i).map(|j| arms[j].clone()).collect();
            let before = cond.predict(&rest, &mut rng_from_seed(0)).unwrap();
            let h_before: f64 = before.dists.iter().map(|d| d.entropy()).sum();
            let ext = cond.extended(&arms[i], &[0.0]).unwrap();
            let after = ext.predict(&rest, &mut rng_from_seed(0)).unwrap();
            let h_after: f64 = after.dists.iter().map(|d| d.entropy()).sum();
            let ig = h_before - h_after;
            if ig > best.1 {
                best = (i, ig);
            }
        }
        assert_eq!(got, best.0, "trial {trial}");
        agreements += 1;
    }
    let elapsed = t0.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    pass(7, &format!("{agreements}/50 argmax agreements, {elapsed:.1?}"));
}

// ===== criterion 8: two-level search =========================================

#[test]
fn criterion_8_two_level_search() {
    let t0 = Instant::now();
    let position_model = GpSurrogate {
        kernel: KernelFn::SquaredExp {
            lengthscale: 0.2,
            variance: 1.0,
        },
        noise_variance: 1e-4,
    };
    let min_model = GpSurrogate {
        kernel: KernelFn::SquaredExp {
            lengthscale: 0.4,
            variance: 1.0,
        },
        noise_variance: 1e-4,
    };
    let budget = 1500usize;
    let mut wins = 0usize;
    let mut tl_evals = Vec::new();
    let mut flat_evals = Vec::new();
    for seed in 0..20u64 {
        let pool = planted_minimum_pool(50, 100, &mut derive_rng(808, seed));
        let tl = two_level_search(
            &position_model,
            &min_model,
            &pool,
            5,
            budget,
            seed,
            &mut derive_rng(1, seed),
        )
        .unwrap();
        let flat = flat_random_search(&pool, budget, seed, &mut derive_rng(1, seed)).unwrap();
        let a = tl.evals_to_threshold(0.05).unwrap_or(budget + 1);
        let b = flat.evals_to_threshold(0.05).unwrap_or(budget + 1);
        tl_evals.push(a);
        flat_evals.push(b);
        if a < b {
            wins += 1;
        }
    }
    let mean = |v: &[usize]| v.iter().sum::<usize>() as f64 / v.len() as f64;
    assert!(
        wins >= 14,
        "two-level won only {wins}/20 (tl {tl_evals:?} vs flat {flat_evals:?})"
    );
    pass(
        8,
        &format!(
            "two-level first to 0.05 on {wins}/20 paired seeds (mean evals {:.1} vs {:.1}), {:.1?}",
            mean(&tl_evals),
            mean(&flat_evals),
            t0.elapsed()
        ),
    );
}

// ===== criterion 9: determinism & persistence =================================

fn run_cfg(toml: &str) -> PathBuf {
    let cfg: ExperimentConfig = toml::from_str(toml).unwrap();
    cfg.validate().unwrap();
    pipelines::run(&cfg).unwrap()
}

#[test]
fn criterion_9_determinism_and_persistence() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    common::synthetic_movielens(&data, 36, 28, 5);
    let feature_dim = movielens_ingest(&data, 0).unwrap().feature_dim();

    // pretrain twice: identical checkpoints byte for byte
    let pre = |out: &Path, seed: u64| {
        format!(
            r#"
            kind = "pretrain"
            seed = {seed}
            output_dir = "{}"

            [np]
            input_dim = 1
            output_dim = 1
            encoder_hidden = [16]
            repr_dim = 8
            latent_dim = 4
            decoder_hidden = [16]
            max_context_size = 20

            [source]
            kind = "functions"
            points_per_task = 24

            [train]
            iters = 20
            batch = 2
        "#,
            out.display()
        )
    };
    let a = run_cfg(&pre(&dir.path().join("pre_a"), 7));
    let b = run_cfg(&pre(&dir.path().join("pre_b"), 7));
    let ckpt_a = std::fs::read(a.join("checkpoint.ckpt")).unwrap();
    assert_eq!(ckpt_a, std::fs::read(b.join("checkpoint.ckpt")).unwrap());
    common::assert_runs_identical(&a, &b);

    // checkpoint round-trip is exact
    let loaded = metasurrogate::checkpoint::checkpoint_load(&a.join("checkpoint.ckpt")).unwrap();
    let reload = dir.path().join("reload.ckpt");
    metasurrogate::checkpoint::checkpoint_save(
        &loaded.params,
        &loaded.config,
        &loaded.provenance,
        &reload,
    )
    .unwrap();
    assert_eq!(ckpt_a, std::fs::read(&reload).unwrap());

    // every remaining pipeline, twice each
    let fn_ckpt = a.join("checkpoint.ckpt");
    let bo = |out: &Path| {
        format!(
            r#"
            kind = "bo"
            seed = 3
            output_dir = "{}"

            [bo]
            checkpoint = "{}"
            iterations = 5
            num_seeds = 2
            num_tasks = 2
            grid_size = 15
            methods = ["np", "random"]
            num_z = 4
        "#,
            out.display(),
            fn_ckpt.display()
        )
    };
    let ba = run_cfg(&bo(&dir.path().join("bo_a")));
    let bb = run_cfg(&bo(&dir.path().join("bo_b")));
    common::assert_runs_identical(&ba, &bb);

    // movielens pretrain + bandit
    let mlpre = |out: &Path| {
        format!(
            r#"
            kind = "pretrain"
            seed = 11
            output_dir = "{}"

            [np]
            input_dim = {feature_dim}
            output_dim = 1
            encoder_hidden = [16]
            repr_dim = 8
            latent_dim = 4
            decoder_hidden = [16]
            max_context_size = 40

            [np.embedding]
            vocab_size = 40
            dim = 4

            [source]
            kind = "movielens"
            data_dir = "{}"

            [train]
            iters = 10
            batch = 2
        "#,
            out.display(),
            data.display()
        )
    };
    let mla = run_cfg(&mlpre(&dir.path().join("mlpre_a")));
    let mlb = run_cfg(&mlpre(&dir.path().join("mlpre_b")));
    assert_eq!(
        std::fs::read(mla.join("checkpoint.ckpt")).unwrap(),
        std::fs::read(mlb.join("checkpoint.ckpt")).unwrap()
    );
    let ml_ckpt = mla.join("checkpoint.ckpt");
    let bandit = |out: &Path| {
        format!(
            r#"
            kind = "bandit"
            seed = 4
            output_dir = "{}"

            [bandit]
            checkpoint = "{}"
            data_dir = "{}"
            acquisitions = ["random", "info_gain"]
            splits = 2
            info_gain_samples = 2
            candidate_cap = 5
            max_context = 40
            num_z = 4
            max_users = 3
        "#,
            out.display(),
            ml_ckpt.display(),
            data.display()
        )
    };
    let bda = run_cfg(&bandit(&dir.path().join("bandit_a")));
    let bdb = run_cfg(&bandit(&dir.path().join("bandit_b")));
    common::assert_runs_identical(&bda, &bdb);

    // cartpole pretrain + mbrl
    let cppre = |out: &Path| {
        format!(
            r#"
            kind = "pretrain"
            seed = 13
            output_dir = "{}"

            [np]
            input_dim = 6
            output_dim = 6
            encoder_hidden = [16]
            repr_dim = 8
            latent_dim = 4
            decoder_hidden = [16]
            max_context_size = 30
            normalize = true

            [source]
            kind = "cartpole"
            num_tasks = 5
            rollouts_per_task = 1

            [train]
            iters = 6
            batch = 2
        "#,
            out.display()
        )
    };
    let cpa = run_cfg(&cppre(&dir.path().join("cppre_a")));
    let cp_ckpt = cpa.join("checkpoint.ckpt");
    let mbrl = |out: &Path| {
        format!(
            r#"
            kind = "mbrl"
            seed = 17
            output_dir = "{}"

            [mbrl]
            checkpoint = "{}"
            episodes = 2
            num_seeds = 2
            max_context = 30
            methods = ["np_cem", "random"]

            [mbrl.planner]
            horizon = 3
            population = 8
            elites = 2
            iters = 2
            discount = 1.0
        "#,
            out.display(),
            cp_ckpt.display()
        )
    };
    let ma = run_cfg(&mbrl(&dir.path().join("mbrl_a")));
    let mb = run_cfg(&mbrl(&dir.path().join("mbrl_b")));
    common::assert_runs_identical(&ma, &mb);

    // two-level
    let tl = |out: &Path| {
        format!(
            r#"
            kind = "two_level"
            seed = 23
            output_dir = "{}"

            [two_level]
            num_tasks = 5
            positions_per_task = 10
            inner_iters = 2
            budget = 10
            num_seeds = 2
            methods = ["two_level", "flat_random"]
        "#,
            out.display()
        )
    };
    let ta = run_cfg(&tl(&dir.path().join("tl_a")));
    let tb = run_cfg(&tl(&dir.path().join("tl_b")));
    common::assert_runs_identical(&ta, &tb);

    pass(9, &format!("five pipelines byte-stable, {:.1?}", t0.elapsed()));
}
