//! Task-specific training: rollouts, GAE, the clipped PPO objective and the
//! m-step inner update.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::seq2seq::{backward_decoder, backward_encoder, sample_from, EncoderGrad};
use crate::neural::{decode, decode_step, encode, Adam, DecoderState, HeadGrads, PolicyParams};
use crate::rng::{self, label};
use crate::scalar::Scalar;
use crate::sim::{total_latency, Action, ScheduleState};
use crate::task::{LearningTask, PreparedDag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub gamma: f64,
    pub lambda: f64,
    /// Clip range ε.
    pub clip: f64,
    /// Value-loss coefficient c1.
    pub value_coef: f64,
    /// Inner learning rate α.
    pub inner_lr: f64,
    /// Outer learning rate β.
    pub outer_lr: f64,
    /// Gradient steps per inner update, m.
    pub inner_steps: usize,
    pub trajectories_per_dag: usize,
    /// Steps per gradient step; `None` uses every collected step.
    pub minibatch: Option<usize>,
    pub normalize_advantages: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            value_coef: 0.5,
            inner_lr: 5e-4,
            outer_lr: 5e-4,
            inner_steps: 3,
            trajectories_per_dag: 20,
            minibatch: None,
            normalize_advantages: true,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.gamma) || !unit(self.lambda) {
            return Err(Error::Config(format!(
                "gamma and lambda must lie in [0, 1], got {} and {}",
                self.gamma, self.lambda
            )));
        }
        if !(self.clip > 0.0) || self.value_coef < 0.0 || self.inner_lr < 0.0 || self.outer_lr < 0.0 {
            return Err(Error::Config("clip must be positive, coefficients and rates non-negative".into()));
        }
        if self.inner_steps == 0 || self.trajectories_per_dag == 0 || self.minibatch == Some(0) {
            return Err(Error::Config(
                "inner steps, trajectories per DAG and minibatch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One sampled episode over a DAG of the task.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    /// Index of the DAG within its task.
    pub dag: usize,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    /// Log-probability of each action under the sampling policy.
    pub log_probs: Vec<T>,
    pub values: Vec<T>,
    /// Latency (ms) of the completed plan.
    pub latency: f64,
}

impl<T: Scalar> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

fn rollout<T: Scalar>(
    policy: &PolicyParams<T>,
    dag: &PreparedDag,
    dag_index: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Trajectory<T>>> {
    let enc = encode(policy, &dag.embeddings)?;
    let n = dag.len();
    (0..count)
        .map(|ep| {
            let mut rng = rng::stream(seed, &[label::COLLECT, dag_index as u64, ep as u64]);
            let mut state = DecoderState::start(&enc);
            let mut sched = ScheduleState::new(n);
            let mut prev = None;
            let mut t = Trajectory {
                dag: dag_index,
                actions: Vec::with_capacity(n),
                rewards: Vec::with_capacity(n),
                log_probs: Vec::with_capacity(n),
                values: Vec::with_capacity(n),
                latency: 0.0,
            };
            for j in 0..n {
                let step = decode_step(policy, &enc, &mut state, prev);
                let (a, lp) = sample_from(step.log_probs(), &mut rng);
                let before = sched.makespan;
                sched.advance_with(&dag.ranked, &dag.latencies[j], a)?;
                t.actions.push(a);
                t.rewards.push(-(sched.makespan - before) / dag.scale);
                t.log_probs.push(lp);
                t.values.push(step.value());
                prev = Some(a);
            }
            t.latency = total_latency(&sched, &dag.ranked)?;
            Ok(t)
        })
        .collect()
}

/// Samples `count` episodes per DAG. Episode `e` of DAG `d` draws from its
/// own stream `(seed, COLLECT, d, e)`, so the result does not depend on how
/// the work is spread across threads. Output is ordered by DAG, then episode.
pub fn collect<T: Scalar>(
    policy: &PolicyParams<T>,
    task: &LearningTask,
    count: usize,
    seed: u64,
) -> Result<Vec<Trajectory<T>>> {
    let per_dag: Vec<Vec<Trajectory<T>>> = task
        .dags
        .par_iter()
        .enumerate()
        .map(|(d, dag)| rollout(policy, dag, d, count, seed))
        .collect::<Result<_>>()?;
    Ok(per_dag.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageSet {
    pub advantages: Vec<f64>,
    /// Discounted reward-to-go, the value target.
    pub returns: Vec<f64>,
}

/// Generalized advantage estimation with a zero terminal value.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> AdvantageSet {
    let n = rewards.len();
    debug_assert_eq!(values.len(), n);
    let mut advantages = vec![0.0; n];
    let mut returns = vec![0.0; n];
    let (mut acc, mut ret) = (0.0, 0.0);
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * lambda * acc;
        ret = rewards[t] + gamma * ret;
        advantages[t] = acc;
        returns[t] = ret;
    }
    AdvantageSet { advantages, returns }
}

pub fn trajectory_gae<T: Scalar>(t: &Trajectory<T>, hp: &HyperParams) -> AdvantageSet {
    let values: Vec<f64> = t.values.iter().map(|v| v.as_f64()).collect();
    gae(&t.rewards, &values, hp.gamma, hp.lambda)
}

/// A step of the batch: `(trajectory, step)`.
pub type StepRef = (usize, usize);

pub fn all_steps<T: Scalar>(trajectories: &[Trajectory<T>]) -> Vec<StepRef> {
    trajectories
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Objective<T: Scalar> {
    /// `J = surrogate - c1 * value_loss`
    pub value: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    /// Probability ratio of every batch step, in batch order.
    pub ratios: Vec<f64>,
    /// Fraction of steps whose clipped term was selected with zero gradient.
    pub clipped: f64,
    /// Gradient of `value` (ascent direction).
    pub grad: PolicyParams<T>,
}

struct DagPart<T: Scalar> {
    grad: PolicyParams<T>,
    surrogate: f64,
    value_sq: f64,
    ratios: Vec<(usize, f64)>,
    clipped: usize,
}

/// Clipped surrogate plus value loss over `batch`, averaged over its steps,
/// with its gradient. Advantages are used as given; see [`normalize`].
pub fn ppo_objective<T: Scalar>(
    target: &PolicyParams<T>,
    task: &LearningTask,
    trajectories: &[Trajectory<T>],
    advantages: &[AdvantageSet],
    batch: &[StepRef],
    hp: &HyperParams,
) -> Result<Objective<T>> {
    if advantages.len() != trajectories.len() || batch.is_empty() {
        return Err(Error::Shape(format!(
            "{} trajectories, {} advantage sets, {} batch steps",
            trajectories.len(),
            advantages.len(),
            batch.len()
        )));
    }
    // dag -> trajectory -> [(step, position in batch)]
    let mut groups: BTreeMap<usize, BTreeMap<usize, Vec<(usize, usize)>>> = BTreeMap::new();
    for (k, &(ti, j)) in batch.iter().enumerate() {
        let t = trajectories
            .get(ti)
            .filter(|t| j < t.len())
            .ok_or_else(|| Error::Shape(format!("batch step ({ti}, {j}) out of range")))?;
        groups.entry(t.dag).or_default().entry(ti).or_default().push((j, k));
    }
    let groups: Vec<_> = groups.into_iter().collect();
    let scale = 1.0 / batch.len() as f64;
    let (lo, hi) = (1.0 - hp.clip, 1.0 + hp.clip);

    let parts: Vec<DagPart<T>> = groups
        .par_iter()
        .map(|(d, trajs)| {
            let dag = task
                .dags
                .get(*d)
                .ok_or_else(|| Error::Shape(format!("trajectory refers to DAG {d}")))?;
            let enc = encode(target, &dag.embeddings)?;
            let mut eg = EncoderGrad::zeros(target, &enc);
            let mut part = DagPart {
                grad: target.zeros_like(),
                surrogate: 0.0,
                value_sq: 0.0,
                ratios: Vec::new(),
                clipped: 0,
            };
            for (&ti, steps) in trajs {
                let traj = &trajectories[ti];
                let adv = &advantages[ti];
                let trace = decode(target, &enc, &traj.actions)?;
                let mut heads = HeadGrads::zeros(trace.len());
                for &(j, k) in steps {
                    let a = traj.actions[j].index();
                    let lp = trace[j].log_probs();
                    let ratio = (lp[a].as_f64() - traj.log_probs[j].as_f64()).exp();
                    let big_a = adv.advantages[j];
                    let unclipped = ratio * big_a;
                    let clipped = ratio.clamp(lo, hi) * big_a;
                    part.surrogate += unclipped.min(clipped);
                    part.ratios.push((k, ratio));
                    if unclipped <= clipped {
                        // d(ratio * A)/dlogits = ratio * A * (onehot(a) - pi)
                        let probs = trace[j].probs();
                        let g = ratio * big_a * scale;
                        for (c, dl) in heads.dlogits[j].iter_mut().enumerate() {
                            let onehot = if c == a { 1.0 } else { 0.0 };
                            *dl = T::of(g * (onehot - probs[c].as_f64()));
                        }
                    } else {
                        part.clipped += 1;
                    }
                    let err = trace[j].value().as_f64() - adv.returns[j];
                    part.value_sq += err * err;
                    heads.dvalues[j] = T::of(-2.0 * hp.value_coef * err * scale);
                }
                backward_decoder(target, &enc, &trace, &heads, &mut part.grad, &mut eg)?;
            }
            backward_encoder(target, &enc, eg, &mut part.grad);
            Ok(part)
        })
        .collect::<Result<_>>()?;

    let mut grad = target.zeros_like();
    let (mut surrogate, mut value_sq, mut clipped) = (0.0, 0.0, 0);
    let mut ratios = vec![0.0; batch.len()];
    for part in parts {
        grad.add_assign(&part.grad)?;
        surrogate += part.surrogate;
        value_sq += part.value_sq;
        clipped += part.clipped;
        for (k, r) in part.ratios {
            ratios[k] = r;
        }
    }
    let surrogate = surrogate * scale;
    let value_loss = value_sq * scale;
    let value = surrogate - hp.value_coef * value_loss;
    if !value.is_finite() || !grad.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite PPO objective (surrogate {surrogate}, value loss {value_loss})"
        )));
    }
    Ok(Objective {
        value,
        surrogate,
        value_loss,
        ratios,
        clipped: clipped as f64 * scale,
        grad,
    })
}

/// Standardizes the advantages of the batch steps in place.
pub fn normalize(advantages: &mut [AdvantageSet], batch: &[StepRef]) {
    let n = batch.len() as f64;
    if batch.is_empty() {
        return;
    }
    let mean = batch.iter().map(|&(i, j)| advantages[i].advantages[j]).sum::<f64>() / n;
    let var = batch
        .iter()
        .map(|&(i, j)| (advantages[i].advantages[j] - mean).powi(2))
        .sum::<f64>()
        / n;
    let inv = 1.0 / (var.sqrt() + 1e-8);
    for &(i, j) in batch {
        let a = &mut advantages[i].advantages[j];
        *a = (*a - mean) * inv;
    }
}

#[derive(Debug, Clone)]
pub struct InnerOutcome<T: Scalar> {
    pub params: PolicyParams<T>,
    /// Mean latency (ms) of the sampled episodes.
    pub sampled_latency: f64,
    /// Objective value at each gradient step, before the step.
    pub objectives: Vec<f64>,
    /// `θ_0..θ_m` when requested.
    pub trace: Vec<PolicyParams<T>>,
}

/// One sampling phase under `θ` followed by `m` Adam ascent steps on the PPO
/// objective, using `adam` as the optimizer state.
pub fn inner_update_with<T: Scalar>(
    theta: &PolicyParams<T>,
    task: &LearningTask,
    hp: &HyperParams,
    seed: u64,
    adam: &mut Adam<T>,
    keep_trace: bool,
) -> Result<InnerOutcome<T>> {
    hp.validate()?;
    let trajectories = collect(theta, task, hp.trajectories_per_dag, seed)?;
    let sampled_latency = trajectories.iter().map(|t| t.latency).sum::<f64>() / trajectories.len() as f64;
    let advantages: Vec<AdvantageSet> = trajectories.iter().map(|t| trajectory_gae(t, hp)).collect();
    let steps = all_steps(&trajectories);

    let mut params = theta.clone();
    let mut trace = Vec::new();
    if keep_trace {
        trace.push(params.clone());
    }
    let mut objectives = Vec::with_capacity(hp.inner_steps);
    let lr = T::of(hp.inner_lr);
    for k in 0..hp.inner_steps {
        let batch = match hp.minibatch {
            Some(b) if b < steps.len() => {
                let mut s = steps.clone();
                s.shuffle(&mut rng::stream(seed, &[label::MINIBATCH, k as u64]));
                s.truncate(b);
                s.sort_unstable();
                s
            }
            _ => steps.clone(),
        };
        let mut adv = advantages.clone();
        if hp.normalize_advantages {
            normalize(&mut adv, &batch);
        }
        let obj = ppo_objective(&params, task, &trajectories, &adv, &batch, hp)?;
        objectives.push(obj.value);
        let mut descent = obj.grad;
        descent.scale(-T::one());
        adam.step(&mut params, &descent, lr)?;
        if keep_trace {
            trace.push(params.clone());
        }
    }
    Ok(InnerOutcome {
        params,
        sampled_latency,
        objectives,
        trace,
    })
}

/// The inner update `U(θ, task)` with a fresh optimizer state.
pub fn inner_update<T: Scalar>(
    theta: &PolicyParams<T>,
    task: &LearningTask,
    hp: &HyperParams,
    seed: u64,
    keep_trace: bool,
) -> Result<InnerOutcome<T>> {
    let mut adam = Adam::new(theta.len());
    inner_update_with(theta, task, hp, seed, &mut adam, keep_trace)
}
