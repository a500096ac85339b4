//! First-order meta-training over a pool of learning tasks, the fine-tuning
//! pretraining it is compared against, and test-time adaptation.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{Adam, PolicyParams};
use crate::ppo::{inner_update, inner_update_with, HyperParams};
use crate::rng::{self, label};
use crate::scalar::Scalar;
use crate::task::LearningTask;

/// `g = (1/n) Σ_i (θ'_i − θ) / α / m`
pub fn meta_gradient<T: Scalar>(
    theta: &PolicyParams<T>,
    adapted: &[PolicyParams<T>],
    alpha: T,
    m: usize,
) -> Result<PolicyParams<T>> {
    if adapted.is_empty() {
        return Err(Error::Config("meta-gradient needs at least one adapted policy".into()));
    }
    if !(alpha > T::zero()) || m == 0 {
        return Err(Error::Config("meta-gradient needs alpha > 0 and m >= 1".into()));
    }
    let m = T::of(m as f64);
    let mut g = theta.zeros_like();
    for a in adapted {
        let mut d = a.difference(theta)?;
        for x in d.flat_mut() {
            *x = *x / alpha / m;
        }
        g.add_assign(&d)?;
    }
    let n = T::of(adapted.len() as f64);
    for x in g.flat_mut() {
        *x /= n;
    }
    Ok(g)
}

#[derive(Debug, Clone)]
pub struct MetaState<T: Scalar> {
    pub theta: PolicyParams<T>,
    pub adam: Adam<T>,
    pub iteration: u64,
    pub meta_batch: usize,
}

impl<T: Scalar> MetaState<T> {
    pub fn new(theta: PolicyParams<T>, meta_batch: usize) -> Self {
        let adam = Adam::new(theta.len());
        MetaState {
            theta,
            adam,
            iteration: 0,
            meta_batch,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub tasks: Vec<String>,
    /// Greedy latency (ms) of each task's adapted policy.
    pub latencies: Vec<f64>,
    pub mean_latency: f64,
    pub wall_ms: f64,
}

/// Task indices for outer iteration `iteration`, drawn with replacement.
pub fn sample_tasks(seed: u64, iteration: u64, pool: usize, count: usize) -> Vec<usize> {
    let mut r = rng::stream(seed, &[label::META, iteration]);
    (0..count).map(|_| r.gen_range(0..pool)).collect()
}

fn check_pool(tasks: &[LearningTask], meta_batch: usize) -> Result<()> {
    if tasks.is_empty() || meta_batch == 0 {
        return Err(Error::Config("need a nonempty task pool and a positive meta batch".into()));
    }
    Ok(())
}

/// Runs `iterations` outer iterations, calling `observe` after each one.
pub fn meta_train<T: Scalar>(
    state: &mut MetaState<T>,
    tasks: &[LearningTask],
    hp: &HyperParams,
    iterations: u64,
    seed: u64,
    observe: &mut dyn FnMut(&MetaState<T>, &IterationRecord) -> Result<()>,
) -> Result<()> {
    check_pool(tasks, state.meta_batch)?;
    hp.validate()?;
    for _ in 0..iterations {
        let start = Instant::now();
        let it = state.iteration;
        let picked = sample_tasks(seed, it, tasks.len(), state.meta_batch);
        let theta = &state.theta;
        let results: Vec<(PolicyParams<T>, f64)> = picked
            .par_iter()
            .enumerate()
            .map(|(slot, &ti)| {
                let s = rng::derive(seed, &[label::TASK, it, slot as u64]);
                let out = inner_update(theta, &tasks[ti], hp, s, false)?;
                let lat = tasks[ti].evaluate_greedy(&out.params)?;
                Ok((out.params, lat))
            })
            .collect::<Result<_>>()?;
        let (adapted, latencies): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        let mut g = meta_gradient(&state.theta, &adapted, T::of(hp.inner_lr), hp.inner_steps)?;
        g.scale(-T::one());
        state.adam.step(&mut state.theta, &g, T::of(hp.outer_lr))?;
        state.iteration += 1;
        let record = IterationRecord {
            iteration: state.iteration,
            tasks: picked.iter().map(|&i| tasks[i].id.clone()).collect(),
            mean_latency: latencies.iter().sum::<f64>() / latencies.len() as f64,
            latencies,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        observe(state, &record)?;
    }
    Ok(())
}

/// Plain PPO over the same task stream: each iteration pools the DAGs of the
/// sampled tasks into one dataset and runs one inner update on it, keeping
/// the optimizer state across iterations.
pub fn pretrain<T: Scalar>(
    state: &mut MetaState<T>,
    tasks: &[LearningTask],
    hp: &HyperParams,
    iterations: u64,
    seed: u64,
    observe: &mut dyn FnMut(&MetaState<T>, &IterationRecord) -> Result<()>,
) -> Result<()> {
    check_pool(tasks, state.meta_batch)?;
    for _ in 0..iterations {
        let start = Instant::now();
        let it = state.iteration;
        let picked = sample_tasks(seed, it, tasks.len(), state.meta_batch);
        let pooled = LearningTask {
            id: "pooled".into(),
            params: tasks[picked[0]].params,
            dags: picked.iter().flat_map(|&i| tasks[i].dags.iter().cloned()).collect(),
        };
        let s = rng::derive(seed, &[label::TASK, it]);
        let out = inner_update_with(&state.theta, &pooled, hp, s, &mut state.adam, false)?;
        state.theta = out.params;
        state.iteration += 1;
        let latencies = picked
            .iter()
            .map(|&i| tasks[i].evaluate_greedy(&state.theta))
            .collect::<Result<Vec<_>>>()?;
        let record = IterationRecord {
            iteration: state.iteration,
            tasks: picked.iter().map(|&i| tasks[i].id.clone()).collect(),
            mean_latency: latencies.iter().sum::<f64>() / latencies.len() as f64,
            latencies,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        observe(state, &record)?;
    }
    Ok(())
}

/// Adapts `theta` to `task` for `steps` inner updates (one optimizer state
/// across them) and returns the greedy mean latency before any update and
/// after each one: `steps + 1` values.
pub fn adapt<T: Scalar>(
    theta: &PolicyParams<T>,
    task: &LearningTask,
    steps: usize,
    hp: &HyperParams,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut params = theta.clone();
    let mut adam = Adam::new(params.len());
    let mut curve = Vec::with_capacity(steps + 1);
    curve.push(task.evaluate_greedy(&params)?);
    for k in 1..=steps {
        let s = rng::derive(seed, &[label::ADAPT, k as u64]);
        params = inner_update_with(&params, task, hp, s, &mut adam, false)?.params;
        curve.push(task.evaluate_greedy(&params)?);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{NetConfig, ParamLayout};

    fn dyadic(seed: u64) -> PolicyParams<f64> {
        let l = ParamLayout::new(&NetConfig::small(6, 3)).unwrap();
        let mut r = rng::stream(seed, &[]);
        let data = (0..l.total()).map(|_| f64::from(r.gen_range(-512i32..512)) / 64.0).collect();
        PolicyParams::from_flat(l, data).unwrap()
    }

    #[test]
    fn algebra_is_exact() {
        let theta = dyadic(1);
        let u = dyadic(2);
        let (alpha, m) = (0.125, 4);
        assert!(meta_gradient(&theta, &[theta.clone(), theta.clone()], alpha, m)
            .unwrap()
            .flat()
            .iter()
            .all(|&x| x == 0.0));

        let mut moved = theta.clone();
        moved.scaled_add(alpha * m as f64, &u).unwrap();
        assert_eq!(meta_gradient(&theta, &[moved], alpha, m).unwrap(), u);

        let (mut plus, mut minus) = (theta.clone(), theta.clone());
        plus.add_assign(&u).unwrap();
        minus.scaled_add(-1.0, &u).unwrap();
        assert!(meta_gradient(&theta, &[plus, minus], alpha, m)
            .unwrap()
            .flat()
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn preconditions() {
        let theta = dyadic(1);
        assert!(meta_gradient(&theta, &[], 0.1, 1).is_err());
        assert!(meta_gradient(&theta, &[theta.clone()], 0.0, 1).is_err());
        assert!(meta_gradient(&theta, &[theta.clone()], 0.1, 0).is_err());
    }

    #[test]
    fn task_sampling_is_reproducible() {
        let a = sample_tasks(5, 3, 7, 10);
        assert_eq!(a, sample_tasks(5, 3, 7, 10));
        assert!(a.iter().all(|&i| i < 7));
        assert_ne!(a, sample_tasks(5, 4, 7, 10));
    }
}
