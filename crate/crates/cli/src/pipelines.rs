//! The executable experiment pipelines.
//!
//! Every pipeline is deterministic in `(config, seed)`: all randomness
//! flows through sub-seeds derived from the config seed, and outputs are
//! byte-identical across repeated runs apart from `wall_ms` fields.
//! A failure after partial output leaves a `FAILED` marker file in the
//! output directory with the error text.

use std::path::{Path, PathBuf};
use std::time::Instant;

use metasurrogate_core::baselines::gp::KernelFn;
use metasurrogate_core::decision::{
    bandit_eval_multi, bo_loop, flat_random_search, mbrl_test_loop, planted_minimum_pool,
    random_policy_rollouts, random_search_loop, two_level_search, Acquisition, GpSurrogate,
    NpSurrogate, RunRecord,
};
use metasurrogate_core::neural_process::{meta_train, NeuralProcess, NpConfig, TrainOptions};
use metasurrogate_core::rng::{derive_rng, derive_seed, rng_from_seed};
use metasurrogate_core::tasks::cartpole::{CartPoleParams, CartPoleSource};
use metasurrogate_core::tasks::functions::{
    linspace, sample_gp_function, FunctionTask, GpFunctionSource, SeKernel, TaskDumpRecord,
};
use metasurrogate_core::tasks::movielens::{movielens_ingest, MovieLens, RatingTaskSource};
use metasurrogate_core::tasks::TaskSource;

use crate::checkpoint::{check_config_matches, checkpoint_load, checkpoint_save, Provenance};
use crate::config::{
    resolve_data_dir, BanditBlock, BoBlock, ExperimentConfig, ExperimentKind, MbrlBlock,
    SourceBlock, TwoLevelBlock,
};
use crate::{CliError, Result};

/// Execute the pipeline named by the config. Returns the output directory.
pub fn run(config: &ExperimentConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&config.output_dir)?;
    let marker = config.output_dir.join("FAILED");
    let _ = std::fs::remove_file(&marker);
    let outcome = match config.kind {
        ExperimentKind::Pretrain => run_pretrain(config),
        ExperimentKind::Bo => run_bo(config),
        ExperimentKind::Bandit => run_bandit(config),
        ExperimentKind::Mbrl => run_mbrl(config),
        ExperimentKind::TwoLevel => run_two_level(config),
    };
    if let Err(e) = &outcome {
        let _ = std::fs::write(&marker, format!("{e}\n"));
    }
    outcome.map(|()| config.output_dir.clone())
}

fn write_jsonl(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| CliError::Other(e.to_string()))?;
        out.push(b'\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    w.write_record(header).map_err(|e| CliError::Data(e.to_string()))?;
    for row in rows {
        w.write_record(row).map_err(|e| CliError::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(())
}

fn stamp(records: &mut [RunRecord], wall_ms: u64) {
    for r in records.iter_mut() {
        r.wall_ms = wall_ms;
    }
}

// ---- pretrain -------------------------------------------------------------

fn build_source(block: &SourceBlock, seed: u64) -> Result<Box<dyn TaskSource>> {
    match block {
        SourceBlock::Functions {
            lengthscale,
            variance,
            points_per_task,
        } => Ok(Box::new(GpFunctionSource {
            kernel: SeKernel {
                lengthscale: *lengthscale,
                variance: *variance,
            },
            domain: (-1.0, 1.0),
            points_per_task: *points_per_task,
            noise_std: None,
        })),
        SourceBlock::Cartpole {
            num_tasks,
            rollouts_per_task,
        } => Ok(Box::new(CartPoleSource::new(
            *num_tasks,
            *rollouts_per_task,
            derive_seed(seed, 0xCA47),
        ))),
        SourceBlock::Movielens { data_dir, pools } => {
            let dir = resolve_data_dir(data_dir.as_deref())?;
            let data = ingest(&dir, seed)?;
            let mut tasks: Vec<&[metasurrogate_core::tasks::movielens::RatingTask]> = Vec::new();
            for p in pools {
                match p.as_str() {
                    "train" => tasks.push(&data.train),
                    "valid" => tasks.push(&data.valid),
                    "test" => tasks.push(&data.test),
                    other => {
                        return Err(CliError::Config(format!("unknown movielens pool `{other}`")))
                    }
                }
            }
            let merged: Vec<metasurrogate_core::tasks::movielens::RatingTask> =
                tasks.into_iter().flatten().cloned().collect();
            Ok(Box::new(
                RatingTaskSource::new(&merged, data.feature_dim())
                    .map_err(|e| CliError::Data(e.to_string()))?,
            ))
        }
    }
}

fn ingest(dir: &Path, seed: u64) -> Result<MovieLens> {
    movielens_ingest(dir, derive_seed(seed, 0x3111)).map_err(|e| CliError::Data(e.to_string()))
}

fn run_pretrain(config: &ExperimentConfig) -> Result<()> {
    let np_block = config.np.as_ref().expect("validated");
    let source_block = config.source.as_ref().expect("validated");
    let train = config.train.as_ref().expect("validated");
    let np_config = np_block.to_np_config();
    np_config.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let mut source = build_source(source_block, config.seed)?;
    let opts = TrainOptions {
        iters: train.iters,
        batch: train.batch,
        lr: train.lr,
        max_extra_targets: train.max_extra_targets,
    };
    let t0 = Instant::now();
    let (np, trace) = meta_train(&np_config, source.as_mut(), &opts, &mut rng_from_seed(config.seed))?;
    let wall = t0.elapsed().as_millis() as u64;

    let mut records: Vec<RunRecord> = trace
        .iter()
        .enumerate()
        .map(|(i, loss)| {
            let mut r = RunRecord::new(i, config.seed);
            r.observed = Some(*loss);
            r
        })
        .collect();
    stamp(&mut records, wall);
    write_jsonl(&config.output_dir.join("loss_trace_seed0.jsonl"), &records)?;

    let provenance = Provenance {
        iters: train.iters as u64,
        seed: config.seed,
        source: source_block.descriptor(),
    };
    checkpoint_save(
        &np.params,
        &np_config,
        &provenance,
        &config.output_dir.join("checkpoint.ckpt"),
    )?;
    write_csv(
        &config.output_dir.join("summary.csv"),
        &["iters", "final_loss"],
        &[vec![
            train.iters.to_string(),
            format!("{}", trace.last().copied().unwrap_or(f64::NAN)),
        ]],
    )?;
    Ok(())
}

// ---- bo --------------------------------------------------------------------

fn load_np(path: &Path, expected: Option<&NpConfig>) -> Result<NeuralProcess> {
    let ckpt = checkpoint_load(path)?;
    if let Some(want) = expected {
        check_config_matches(&ckpt.config, want)?;
    }
    NeuralProcess::from_params(ckpt.config, ckpt.params).map_err(|e| CliError::Config(e.to_string()))
}

fn heldout_task(seed: u64, index: u64, grid_size: usize, kernel: &SeKernel) -> Result<FunctionTask> {
    let grid = linspace(-1.0, 1.0, grid_size);
    let mut rng = derive_rng(derive_seed(seed, 0xF00D), index);
    sample_gp_function(kernel, &grid, None, &mut rng).map_err(|e| CliError::Numeric(e.to_string()))
}

fn run_bo(config: &ExperimentConfig) -> Result<()> {
    let bo: &BoBlock = config.bo.as_ref().expect("validated");
    let np = load_np(&bo.checkpoint, None)?;
    let surrogate = NpSurrogate {
        np: &np,
        num_z: bo.num_z,
    };
    let kernel = SeKernel::default();

    // persist the held-out task set alongside the runs
    let mut dump = Vec::new();
    for t in 0..bo.num_tasks as u64 {
        let task = heldout_task(config.seed, t, bo.grid_size, &kernel)?;
        let rec = TaskDumpRecord {
            task_id: t,
            grid: task.grid.clone(),
            values: task.values.clone(),
            seed: derive_seed(derive_seed(config.seed, 0xF00D), t),
        };
        dump.push(serde_json::to_string(&rec).map_err(|e| CliError::Other(e.to_string()))?);
    }
    std::fs::write(config.output_dir.join("tasks.jsonl"), dump.join("\n") + "\n")?;

    for method in &bo.methods {
        if method != "np" && method != "random" {
            return Err(CliError::Config(format!("unknown bo method `{method}`")));
        }
    }

    for seed_idx in 0..bo.num_seeds as u64 {
        for task_idx in 0..bo.num_tasks as u64 {
            let task = heldout_task(config.seed, task_idx, bo.grid_size, &kernel)?;
            let replicate = seed_idx * bo.num_tasks as u64 + task_idx;
            let rep_seed = derive_seed(config.seed, replicate);

            // shared initial observations so methods start identically
            let mut init_rng = derive_rng(rep_seed, 0x1111);
            let mut initial = Vec::new();
            let mut taken = vec![false; task.len()];
            use metasurrogate_core::rng::RngExt as _;
            for _ in 0..bo.initial_observations.min(task.len()) {
                let mut idx = init_rng.random_range(0..task.len());
                while taken[idx] {
                    idx = init_rng.random_range(0..task.len());
                }
                taken[idx] = true;
                initial.push((idx, task.values[idx]));
            }

            for method in &bo.methods {
                let t0 = Instant::now();
                let mut run = match method.as_str() {
                    "np" => bo_loop(
                        &surrogate,
                        &task,
                        &initial,
                        bo.iterations,
                        rep_seed,
                        &mut derive_rng(rep_seed, 0x2222),
                    )
                    .map_err(|e| CliError::Numeric(e.to_string()))?,
                    _ => random_search_loop(
                        &task,
                        &initial,
                        bo.iterations,
                        rep_seed,
                        &mut derive_rng(rep_seed, 0x2222),
                    )
                    .map_err(|e| CliError::Numeric(e.to_string()))?,
                };
                stamp(&mut run.records, t0.elapsed().as_millis() as u64);
                write_jsonl(
                    &config
                        .output_dir
                        .join(format!("{method}_seed{replicate}.jsonl")),
                    &run.records,
                )?;
            }
        }
    }
    crate::report::report(&config.output_dir)?;
    Ok(())
}

// ---- bandit -----------------------------------------------------------------

fn run_bandit(config: &ExperimentConfig) -> Result<()> {
    let bandit: &BanditBlock = config.bandit.as_ref().expect("validated");
    let dir = resolve_data_dir(bandit.data_dir.as_deref())?;
    let data = ingest(&dir, config.seed)?;
    let np = load_np(&bandit.checkpoint, None)?;
    if np.config.input_dim != data.feature_dim() {
        return Err(CliError::Config(format!(
            "checkpoint input_dim {} does not match dataset feature width {}",
            np.config.input_dim,
            data.feature_dim()
        )));
    }
    let surrogate = NpSurrogate {
        np: &np,
        num_z: bandit.num_z,
    };
    let users: Vec<_> = match bandit.max_users {
        Some(cap) => data.test.iter().take(cap).collect(),
        None => data.test.iter().collect(),
    };

    let mut summary_rows = Vec::new();
    for acq_name in &bandit.acquisitions {
        let acquisition = match acq_name.as_str() {
            "random" => Acquisition::Random,
            "info_gain" => Acquisition::InfoGain {
                samples: bandit.info_gain_samples,
                candidate_cap: bandit.candidate_cap,
            },
            other => return Err(CliError::Config(format!("unknown acquisition `{other}`"))),
        };
        let mut per_split_rmse: Vec<Vec<Option<f64>>> = Vec::new();
        for split in 0..bandit.splits as u64 {
            let t0 = Instant::now();
            // pooled squared error across users, per budget
            let mut sse = vec![0.0; bandit.budgets.len()];
            let mut count = vec![0usize; bandit.budgets.len()];
            for (u, task) in users.iter().enumerate() {
                if task.len() < 2 {
                    continue;
                }
                let mut rng = derive_rng(
                    derive_seed(config.seed, split),
                    (u as u64) ^ acq_hash(acq_name),
                );
                let results = bandit_eval_multi(
                    &surrogate,
                    task,
                    &bandit.budgets,
                    &acquisition,
                    bandit.max_context,
                    &mut rng,
                )
                .map_err(|e| CliError::Numeric(e.to_string()))?;
                for (bi, r) in results.iter().enumerate() {
                    if let Some(b) = r {
                        sse[bi] += b.sse;
                        count[bi] += b.count;
                    }
                }
            }
            let rmse: Vec<Option<f64>> = sse
                .iter()
                .zip(&count)
                .map(|(s, c)| {
                    if *c > 0 {
                        Some((s / *c as f64).sqrt())
                    } else {
                        None
                    }
                })
                .collect();
            let mut records: Vec<RunRecord> = rmse
                .iter()
                .enumerate()
                .filter_map(|(bi, r)| {
                    r.map(|v| {
                        let mut rec = RunRecord::new(bi, derive_seed(config.seed, split));
                        rec.rmse = Some(v);
                        rec.observed = Some(bandit.budgets[bi]);
                        rec
                    })
                })
                .collect();
            stamp(&mut records, t0.elapsed().as_millis() as u64);
            write_jsonl(
                &config
                    .output_dir
                    .join(format!("bandit_{acq_name}_seed{split}.jsonl")),
                &records,
            )?;
            per_split_rmse.push(rmse);
        }
        for (bi, budget) in bandit.budgets.iter().enumerate() {
            let vals: Vec<f64> = per_split_rmse
                .iter()
                .filter_map(|s| s[bi])
                .collect();
            if vals.is_empty() {
                continue;
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            summary_rows.push(vec![
                acq_name.clone(),
                format!("{budget}"),
                format!("{mean}"),
                format!("{}", var.sqrt()),
                vals.len().to_string(),
            ]);
        }
    }
    write_csv(
        &config.output_dir.join("summary.csv"),
        &["acquisition", "budget", "rmse_mean", "rmse_stddev", "splits"],
        &summary_rows,
    )?;
    Ok(())
}

fn acq_hash(name: &str) -> u64 {
    name.bytes().fold(0xACu64, |a, b| a.wrapping_mul(131).wrapping_add(b as u64))
}

// ---- mbrl --------------------------------------------------------------------

fn run_mbrl(config: &ExperimentConfig) -> Result<()> {
    let mbrl: &MbrlBlock = config.mbrl.as_ref().expect("validated");
    let np = load_np(&mbrl.checkpoint, None)?;
    let target = CartPoleParams {
        pole_mass: mbrl.pole_mass,
        cart_mass: mbrl.cart_mass,
        ..CartPoleParams::default()
    };
    let planner = mbrl.planner.to_planner();

    for method in &mbrl.methods {
        for seed_idx in 0..mbrl.num_seeds as u64 {
            let rep_seed = derive_seed(config.seed, seed_idx);
            let t0 = Instant::now();
            let mut records = match method.as_str() {
                "np_cem" => {
                    let (_, records, _) = mbrl_test_loop(
                        &np,
                        &target,
                        mbrl.episodes,
                        &planner,
                        mbrl.max_context,
                        rep_seed,
                        &mut rng_from_seed(rep_seed),
                    )
                    .map_err(|e| CliError::Numeric(e.to_string()))?;
                    records
                }
                _ => {
                    let rewards =
                        random_policy_rollouts(&target, mbrl.episodes, &mut rng_from_seed(rep_seed));
                    rewards
                        .iter()
                        .enumerate()
                        .map(|(ep, r)| {
                            let mut rec = RunRecord::new(ep, rep_seed);
                            rec.episode_reward = Some(*r);
                            rec.observed = Some(*r);
                            rec
                        })
                        .collect()
                }
            };
            stamp(&mut records, t0.elapsed().as_millis() as u64);
            write_jsonl(
                &config
                    .output_dir
                    .join(format!("{method}_seed{seed_idx}.jsonl")),
                &records,
            )?;
        }
    }
    crate::report::report(&config.output_dir)?;
    Ok(())
}

// ---- two-level ------------------------------------------------------------------

fn run_two_level(config: &ExperimentConfig) -> Result<()> {
    let tl: &TwoLevelBlock = config.two_level.as_ref().expect("validated");
    let position_model = GpSurrogate {
        kernel: KernelFn::SquaredExp {
            lengthscale: tl.position_lengthscale,
            variance: 1.0,
        },
        noise_variance: tl.gp_noise,
    };
    let min_model = GpSurrogate {
        kernel: KernelFn::SquaredExp {
            lengthscale: tl.task_lengthscale,
            variance: 1.0,
        },
        noise_variance: tl.gp_noise,
    };

    for seed_idx in 0..tl.num_seeds as u64 {
        let rep_seed = derive_seed(config.seed, seed_idx);
        let pool = planted_minimum_pool(
            tl.num_tasks,
            tl.positions_per_task,
            &mut derive_rng(rep_seed, 0x9001),
        );
        for method in &tl.methods {
            let t0 = Instant::now();
            let mut run = match method.as_str() {
                "two_level" => two_level_search(
                    &position_model,
                    &min_model,
                    &pool,
                    tl.inner_iters,
                    tl.budget,
                    rep_seed,
                    &mut derive_rng(rep_seed, 0x5EA2C4),
                )
                .map_err(|e| CliError::Numeric(e.to_string()))?,
                _ => flat_random_search(
                    &pool,
                    tl.budget,
                    rep_seed,
                    &mut derive_rng(rep_seed, 0x5EA2C4),
                )
                .map_err(|e| CliError::Numeric(e.to_string()))?,
            };
            stamp(&mut run.records, t0.elapsed().as_millis() as u64);
            write_jsonl(
                &config
                    .output_dir
                    .join(format!("{method}_seed{seed_idx}.jsonl")),
                &run.records,
            )?;
        }
    }
    crate::report::report(&config.output_dir)?;
    Ok(())
}
