//! A learning task: one DAG dataset under one set of system parameters.

use rayon::prelude::*;

use crate::dag::{compute_rank, embed_dag, DagApp, GeneratorConfig, RankedDag, TaskEmbedding};
use crate::error::{Error, Result};
use crate::neural::{greedy_decode, PolicyParams};
use crate::scalar::Scalar;
use crate::sim::{evaluate_with_table, latency_table, RewardScale, SchedulePlan, SystemParams, TaskLatencies};

/// A DAG ranked and embedded for one system configuration.
#[derive(Debug, Clone)]
pub struct PreparedDag {
    pub ranked: RankedDag,
    pub embeddings: Vec<TaskEmbedding>,
    pub latencies: Vec<TaskLatencies>,
    /// Reward divisor for this DAG.
    pub scale: f64,
}

impl PreparedDag {
    pub fn new(dag: &DagApp, params: &SystemParams, embed: &GeneratorConfig, scale: RewardScale) -> Result<Self> {
        let ranked = compute_rank(dag, params);
        let embeddings = embed_dag(&ranked, embed)?;
        let latencies = latency_table(&ranked, params);
        let scale = scale.factor(&latencies);
        Ok(PreparedDag {
            ranked,
            embeddings,
            latencies,
            scale,
        })
    }

    pub fn len(&self) -> usize {
        self.ranked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }

    pub fn evaluate(&self, plan: &SchedulePlan) -> Result<f64> {
        evaluate_with_table(&self.ranked, plan, &self.latencies)
    }
}

#[derive(Debug, Clone)]
pub struct LearningTask {
    pub id: String,
    pub params: SystemParams,
    pub dags: Vec<PreparedDag>,
}

impl LearningTask {
    pub fn new(
        id: impl Into<String>,
        dags: &[DagApp],
        params: SystemParams,
        embed: &GeneratorConfig,
        scale: RewardScale,
    ) -> Result<Self> {
        let id = id.into();
        if dags.is_empty() {
            return Err(Error::Config(format!("task {id} has no DAGs")));
        }
        let dags = dags
            .iter()
            .map(|d| PreparedDag::new(d, &params, embed, scale))
            .collect::<Result<_>>()?;
        Ok(LearningTask { id, params, dags })
    }

    pub fn input_width(&self) -> usize {
        self.dags[0].embeddings[0].0.len()
    }

    /// Greedy-decoded plan for every DAG, in dataset order.
    pub fn greedy_plans<T: Scalar>(&self, policy: &PolicyParams<T>) -> Result<Vec<SchedulePlan>> {
        self.dags
            .par_iter()
            .map(|d| greedy_decode(policy, &d.embeddings).map(SchedulePlan::new))
            .collect()
    }

    /// Mean latency (ms) of the greedy plans over the dataset.
    pub fn evaluate_greedy<T: Scalar>(&self, policy: &PolicyParams<T>) -> Result<f64> {
        let plans = self.greedy_plans(policy)?;
        self.mean_latency(&plans)
    }

    /// Mean latency of one plan per DAG; summed in dataset order.
    pub fn mean_latency(&self, plans: &[SchedulePlan]) -> Result<f64> {
        if plans.len() != self.dags.len() {
            return Err(Error::Shape(format!(
                "{} plans for {} DAGs",
                plans.len(),
                self.dags.len()
            )));
        }
        let mut total = 0.0;
        for (d, p) in self.dags.iter().zip(plans) {
            total += d.evaluate(p)?;
        }
        Ok(total / plans.len() as f64)
    }
}
