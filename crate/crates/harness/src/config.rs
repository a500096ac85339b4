//! Experiment configuration.
//!
//! A config file is a JSON object naming an experiment `kind`; every other
//! field is optional and is merged over the defaults for that kind (or over
//! the desk-scale preset when `--desk-scale` is given).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use mrlco_core::dag::GeneratorConfig;
use mrlco_core::neural::NetConfig;
use mrlco_core::ppo::HyperParams;
use mrlco_core::rng::{self, label};
use mrlco_core::sim::{RewardScale, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// One dataset per (fat, density) cell.
    Topology,
    /// One dataset per task count.
    TaskCount,
    /// One dataset per transmission rate.
    TransmissionRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub fats: Vec<f64>,
    pub densities: Vec<f64>,
    /// Topology cells held out for testing, chosen at random.
    pub test_cells: usize,
    pub train_n: Vec<usize>,
    pub test_n: Vec<usize>,
    pub train_rates_mbps: Vec<f64>,
    pub test_rates_mbps: Vec<f64>,
}

/// Network shape; the input width follows from the generator's pad width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub hidden: usize,
    pub layers: usize,
    pub action_embed: usize,
    pub attention_hidden: usize,
    pub head_hidden: usize,
    pub layer_norm: bool,
    pub aligned_input: bool,
}

impl NetworkConfig {
    fn sized(hidden: usize) -> Self {
        NetworkConfig {
            hidden,
            layers: 2,
            action_embed: 16,
            attention_hidden: hidden,
            head_hidden: hidden,
            layer_norm: true,
            aligned_input: true,
        }
    }

    pub fn net(&self, input_width: usize) -> NetConfig {
        NetConfig {
            input_width,
            hidden: self.hidden,
            layers: self.layers,
            action_embed: self.action_embed,
            attention_hidden: self.attention_hidden,
            head_hidden: self.head_hidden,
            layer_norm: self.layer_norm,
            aligned_input: self.aligned_input,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub kind: ExperimentKind,
    pub seed: u64,
    /// Base generator settings; `n`, `fat` and `density` are overridden per
    /// dataset as the grid dictates.
    pub generator: GeneratorConfig,
    pub system: SystemParams,
    pub grid: Grid,
    pub dags_per_set: usize,
    pub network: NetworkConfig,
    pub hyper: HyperParams,
    pub meta_batch: usize,
    /// Outer iterations of meta-training.
    pub meta_iterations: u64,
    /// Iterations of the fine-tuning baseline's pretraining.
    pub pretrain_iterations: u64,
    pub adapt_steps: usize,
    /// Checkpoint period in iterations; 0 keeps only the final one.
    pub checkpoint_every: u64,
    pub reward_scale: RewardScale,
    pub optimal_limit: usize,
    /// Also adapt a randomly initialized policy in `adapt`.
    pub include_scratch: bool,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

/// One dataset to generate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub id: String,
    pub role: Role,
    pub n: usize,
    /// Fixed topology, or `None` to draw fat and density per DAG.
    pub topology: Option<(f64, f64)>,
    pub rate_mbps: Option<f64>,
}

const STEPS: [f64; 5] = [0.4, 0.5, 0.6, 0.7, 0.8];

impl ExperimentConfig {
    /// Full-size settings for an experiment.
    pub fn full_size(kind: ExperimentKind) -> Self {
        let (name, n, meta_batch, grid) = match kind {
            ExperimentKind::Topology => (
                "topology",
                20,
                10,
                Grid {
                    fats: STEPS.to_vec(),
                    densities: STEPS.to_vec(),
                    test_cells: 3,
                    train_n: vec![],
                    test_n: vec![],
                    train_rates_mbps: vec![],
                    test_rates_mbps: vec![],
                },
            ),
            ExperimentKind::TaskCount => (
                "task-count",
                20,
                5,
                Grid {
                    fats: STEPS.to_vec(),
                    densities: STEPS.to_vec(),
                    test_cells: 0,
                    train_n: vec![10, 15, 25, 35, 45, 50],
                    test_n: vec![20, 30, 40],
                    train_rates_mbps: vec![],
                    test_rates_mbps: vec![],
                },
            ),
            ExperimentKind::TransmissionRate => (
                "transmission-rate",
                20,
                5,
                Grid {
                    fats: STEPS.to_vec(),
                    densities: STEPS.to_vec(),
                    test_cells: 0,
                    train_n: vec![],
                    test_n: vec![],
                    train_rates_mbps: vec![4.0, 7.0, 10.0, 13.0, 16.0, 19.0, 22.0],
                    test_rates_mbps: vec![5.5, 8.5, 11.5],
                },
            ),
        };
        ExperimentConfig {
            name: name.into(),
            kind,
            seed: 1,
            generator: GeneratorConfig {
                n,
                ..GeneratorConfig::default()
            },
            system: SystemParams::default(),
            grid,
            dags_per_set: 100,
            network: NetworkConfig::sized(256),
            hyper: HyperParams::default(),
            meta_batch,
            meta_iterations: 1000,
            pretrain_iterations: 1000,
            adapt_steps: 20,
            checkpoint_every: 100,
            reward_scale: RewardScale::MeanLocal,
            optimal_limit: mrlco_core::baselines::DEFAULT_OPTIMAL_LIMIT,
            include_scratch: false,
            out_dir: PathBuf::from("runs").join(name),
        }
    }

    /// Six datasets of twenty 10-task DAGs, a 32-unit network and 100
    /// iterations: small enough for a laptop or CI.
    pub fn desk_scale(kind: ExperimentKind) -> Self {
        let mut c = Self::full_size(kind);
        c.generator.n = 10;
        c.dags_per_set = 20;
        c.network = NetworkConfig::sized(32);
        c.meta_batch = 5;
        c.meta_iterations = 100;
        c.pretrain_iterations = 100;
        c.adapt_steps = 10;
        c.checkpoint_every = 25;
        match kind {
            ExperimentKind::Topology => {
                c.grid.fats = vec![0.4, 0.6, 0.8];
                c.grid.densities = vec![0.4, 0.8];
                c.grid.test_cells = 2;
            }
            ExperimentKind::TaskCount => {
                c.grid.train_n = vec![6, 10, 14, 18];
                c.grid.test_n = vec![8, 16];
            }
            ExperimentKind::TransmissionRate => {
                c.grid.train_rates_mbps = vec![4.0, 7.0, 10.0, 13.0, 16.0];
                c.grid.test_rates_mbps = vec![8.5];
            }
        }
        c.out_dir = PathBuf::from("runs").join(format!("{}-desk", c.name));
        c
    }

    /// Defaults for the file's `kind`, with the file's fields merged over them.
    pub fn from_value(file: Value, desk_scale: bool) -> Result<Self> {
        let kind: ExperimentKind = serde_json::from_value(
            file.get("kind").cloned().context("config needs a \"kind\" field")?,
        )
        .context("unknown experiment kind")?;
        let base = if desk_scale {
            Self::desk_scale(kind)
        } else {
            Self::full_size(kind)
        };
        let mut merged = serde_json::to_value(base)?;
        merge(&mut merged, file);
        let cfg: ExperimentConfig = serde_json::from_value(merged).context("invalid experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, desk_scale: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Self::from_value(value, desk_scale)
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.dags_per_set == 0 || self.meta_batch == 0 {
            bail!("dags_per_set and meta_batch must be positive");
        }
        let train = self.datasets()?;
        for role in [Role::Train, Role::Test] {
            if !train.iter().any(|d| d.role == role) {
                bail!("experiment {} has no {role:?} datasets", self.name);
            }
        }
        for d in &train {
            GeneratorConfig {
                n: d.n,
                ..self.generator.clone()
            }
            .validate()?;
        }
        Ok(())
    }

    pub fn net_config(&self) -> NetConfig {
        self.network.net(self.generator.embedding_width())
    }

    /// Dataset list, training sets first; ids are unique.
    pub fn datasets(&self) -> Result<Vec<DatasetSpec>> {
        let g = &self.grid;
        let n = self.generator.n;
        let specs = match self.kind {
            ExperimentKind::Topology => {
                let mut cells: Vec<(f64, f64)> = g
                    .fats
                    .iter()
                    .flat_map(|&f| g.densities.iter().map(move |&d| (f, d)))
                    .collect();
                if g.test_cells >= cells.len() {
                    bail!("{} test cells requested from a grid of {}", g.test_cells, cells.len());
                }
                let mut picks: Vec<usize> = (0..cells.len()).collect();
                picks.shuffle(&mut rng::stream(self.seed, &[label::SPLIT]));
                let mut test: Vec<usize> = picks[..g.test_cells].to_vec();
                test.sort_unstable();
                let test_cells: Vec<(f64, f64)> = test.iter().map(|&i| cells[i]).collect();
                cells.retain(|c| !test_cells.contains(c));
                let spec = |role, (f, d): (f64, f64)| DatasetSpec {
                    id: format!("fat{f}-density{d}"),
                    role,
                    n,
                    topology: Some((f, d)),
                    rate_mbps: None,
                };
                cells
                    .into_iter()
                    .map(|c| spec(Role::Train, c))
                    .chain(test_cells.into_iter().map(|c| spec(Role::Test, c)))
                    .collect::<Vec<_>>()
            }
            ExperimentKind::TaskCount => {
                let spec = |role, n: usize| DatasetSpec {
                    id: format!("n{n}"),
                    role,
                    n,
                    topology: None,
                    rate_mbps: None,
                };
                g.train_n
                    .iter()
                    .map(|&n| spec(Role::Train, n))
                    .chain(g.test_n.iter().map(|&n| spec(Role::Test, n)))
                    .collect()
            }
            ExperimentKind::TransmissionRate => {
                let spec = |role, r: f64| DatasetSpec {
                    id: format!("rate{r}"),
                    role,
                    n,
                    topology: None,
                    rate_mbps: Some(r),
                };
                g.train_rates_mbps
                    .iter()
                    .map(|&r| spec(Role::Train, r))
                    .chain(g.test_rates_mbps.iter().map(|&r| spec(Role::Test, r)))
                    .collect()
            }
        };
        let mut ids: Vec<&str> = specs.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            bail!("dataset grid contains duplicates");
        }
        Ok(specs)
    }

    /// System parameters a dataset is evaluated under.
    pub fn system_for(&self, spec: &DatasetSpec) -> Result<SystemParams> {
        Ok(match spec.rate_mbps {
            Some(r) => self.system.with_rate(r * 1e6)?,
            None => self.system,
        })
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}
