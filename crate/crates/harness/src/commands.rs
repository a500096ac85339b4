//! The subcommands behind the `mrlco` binary.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use log::info;
use rayon::prelude::*;
use serde_json::json;

use mrlco_core::baselines::{greedy_schedule, heft_schedule, optimal_schedule};
use mrlco_core::meta::{adapt, meta_train, pretrain, IterationRecord};
use mrlco_core::MetaState;
use mrlco_core::neural::{checkpoint, ParamLayout};
use mrlco_core::rng::{self, label};
use mrlco_core::sim::SchedulePlan;
use mrlco_core::task::LearningTask;
use mrlco_core::Params;

use crate::config::{ExperimentConfig, Role};
use crate::datasets::{self, load_tasks};
use crate::io::{write_csv, JsonLog, ResultRow};

pub const MRLCO: &str = "mrlco";
pub const FINE_TUNING: &str = "fine-tuning";
pub const SCRATCH: &str = "scratch";
pub const HEFT: &str = "heft";
pub const GREEDY: &str = "greedy";
pub const OPTIMAL: &str = "optimal";

pub fn checkpoint_path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.out_dir.join("checkpoints").join(format!("{name}.ckpt"))
}

pub fn results_path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.out_dir.join("results").join(format!("{name}.csv"))
}

/// The randomly initialized policy every training run starts from.
pub fn initial_policy(cfg: &ExperimentConfig) -> Result<Params> {
    let layout = ParamLayout::new(&cfg.net_config())?;
    Ok(Params::init(layout, &mut rng::stream(cfg.seed, &[label::INIT])))
}

pub fn generate(cfg: &ExperimentConfig) -> Result<()> {
    let manifest = datasets::generate(cfg)?;
    info!(
        "wrote {} datasets to {}",
        manifest.len(),
        datasets::dataset_dir(cfg).display()
    );
    Ok(())
}

fn train(cfg: &ExperimentConfig, name: &str, meta: bool) -> Result<()> {
    let tasks = load_tasks(cfg, Role::Train)?;
    let mut state = MetaState::new(initial_policy(cfg)?, cfg.meta_batch);
    let mut log = JsonLog::create(&cfg.out_dir.join("logs").join(format!("train-{name}.jsonl")))?;
    let header = |it: u64| json!({"experiment": cfg.name, "algorithm": name, "iteration": it, "seed": cfg.seed});
    let mut observe = |s: &MetaState, rec: &IterationRecord| -> mrlco_core::Result<()> {
        log.write(rec).map_err(|e| mrlco_core::Error::Format(e.to_string()))?;
        info!("{name} iteration {} mean latency {:.2} ms", rec.iteration, rec.mean_latency);
        if cfg.checkpoint_every > 0 && s.iteration % cfg.checkpoint_every == 0 {
            let path = cfg.out_dir.join("checkpoints").join(format!("{name}-{:05}.ckpt", s.iteration));
            checkpoint::save(&path, &s.theta, header(s.iteration))?;
        }
        Ok(())
    };
    let seed = rng::derive(cfg.seed, &[label::META]);
    if meta {
        meta_train(&mut state, &tasks, &cfg.hyper, cfg.meta_iterations, seed, &mut observe)?;
    } else {
        pretrain(&mut state, &tasks, &cfg.hyper, cfg.pretrain_iterations, seed, &mut observe)?;
    }
    checkpoint::save(&checkpoint_path(cfg, name), &state.theta, header(state.iteration))?;
    Ok(())
}

pub fn train_meta(cfg: &ExperimentConfig) -> Result<()> {
    train(cfg, MRLCO, true)
}

pub fn train_finetune(cfg: &ExperimentConfig) -> Result<()> {
    train(cfg, FINE_TUNING, false)
}

pub fn load_policy(cfg: &ExperimentConfig, name: &str) -> Result<Params> {
    let path = checkpoint_path(cfg, name);
    if !path.exists() {
        bail!("checkpoint {} is missing; train it first", path.display());
    }
    let (p, _) = checkpoint::load(&path, Some(&cfg.net_config()))
        .with_context(|| format!("loading {}", path.display()))?;
    Ok(p)
}

fn heuristic_latency(task: &LearningTask, greedy: bool) -> Result<f64> {
    let plans = task
        .dags
        .iter()
        .map(|d| {
            if greedy {
                Ok(greedy_schedule(&d.ranked, &task.params)?)
            } else {
                Ok(heft_schedule(&d.ranked, &task.params))
            }
        })
        .collect::<mrlco_core::Result<Vec<SchedulePlan>>>()?;
    Ok(task.mean_latency(&plans)?)
}

/// Adaptation curves of the learned policies next to the heuristics,
/// `adapt_steps + 1` rows per algorithm and test dataset.
pub fn adapt_rows(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let tests = load_tasks(cfg, Role::Test)?;
    let mut policies = vec![(MRLCO, load_policy(cfg, MRLCO)?), (FINE_TUNING, load_policy(cfg, FINE_TUNING)?)];
    if cfg.include_scratch {
        policies.push((SCRATCH, initial_policy(cfg)?));
    }
    let row = |task: &LearningTask, algorithm: &str, step: usize, lat: f64| ResultRow {
        experiment: cfg.name.clone(),
        dataset: task.id.clone(),
        algorithm: algorithm.into(),
        update_step: step,
        avg_latency_ms: lat,
        seed: cfg.seed,
    };
    let mut rows = Vec::new();
    for (ti, task) in tests.iter().enumerate() {
        // every algorithm adapts with the same sample stream
        let seed = rng::derive(cfg.seed, &[label::ADAPT, ti as u64]);
        let curves = policies
            .par_iter()
            .map(|(_, p)| adapt(p, task, cfg.adapt_steps, &cfg.hyper, seed))
            .collect::<mrlco_core::Result<Vec<_>>>()?;
        for ((name, _), curve) in policies.iter().zip(curves) {
            for (step, lat) in curve.into_iter().enumerate() {
                rows.push(row(task, name, step, lat));
            }
        }
        for (name, greedy) in [(HEFT, false), (GREEDY, true)] {
            let lat = heuristic_latency(task, greedy)?;
            for step in 0..=cfg.adapt_steps {
                rows.push(row(task, name, step, lat));
            }
        }
        info!("adapted on {}", task.id);
    }
    Ok(rows)
}

pub fn run_adapt(cfg: &ExperimentConfig) -> Result<()> {
    let rows = adapt_rows(cfg)?;
    write_csv(&results_path(cfg, "adapt"), &rows)
}

/// HEFT, greedy and (for small enough DAGs) exhaustive optimal latency on
/// every test dataset.
pub fn baseline_rows(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let tests = load_tasks(cfg, Role::Test)?;
    let mut rows = Vec::new();
    for task in &tests {
        let mut push = |algorithm: &str, lat: f64| {
            rows.push(ResultRow {
                experiment: cfg.name.clone(),
                dataset: task.id.clone(),
                algorithm: algorithm.into(),
                update_step: 0,
                avg_latency_ms: lat,
                seed: cfg.seed,
            })
        };
        push(HEFT, heuristic_latency(task, false)?);
        push(GREEDY, heuristic_latency(task, true)?);
        if task.dags.iter().all(|d| d.len() <= cfg.optimal_limit) {
            let mut total = 0.0;
            for d in &task.dags {
                total += optimal_schedule(&d.ranked, &task.params, cfg.optimal_limit)?.1;
            }
            push(OPTIMAL, total / task.dags.len() as f64);
        } else {
            info!("skipping optimal on {}: more than {} tasks", task.id, cfg.optimal_limit);
        }
    }
    Ok(rows)
}

pub fn run_baseline(cfg: &ExperimentConfig) -> Result<()> {
    let rows = baseline_rows(cfg)?;
    write_csv(&results_path(cfg, "baseline"), &rows)
}
