//! Dataset files: one JSON document per dataset plus a manifest.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use mrlco_core::dag::{generate_dag, DagApp, GeneratorConfig};
use mrlco_core::rng::{self, label};
use mrlco_core::sim::SystemParams;
use mrlco_core::task::LearningTask;

use crate::config::{DatasetSpec, ExperimentConfig, Role};
use crate::io::write_atomic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub name: String,
    pub role: Role,
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub system: SystemParams,
    pub dags: Vec<DagApp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub role: Role,
    pub file: String,
    pub n: usize,
    pub dags: usize,
}

pub fn dataset_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("datasets")
}

/// DAGs of dataset `index`, drawn from stream `(seed, DATASET, index)`.
/// Without a fixed topology each DAG draws its fat and density from the
/// grid's sets first.
pub fn build_dataset(cfg: &ExperimentConfig, index: usize, spec: &DatasetSpec) -> Result<DatasetFile> {
    let seed = rng::derive(cfg.seed, &[label::DATASET, index as u64]);
    let mut r = rng::stream(seed, &[]);
    let base = GeneratorConfig {
        n: spec.n,
        seed,
        ..cfg.generator.clone()
    };
    let mut dags = Vec::with_capacity(cfg.dags_per_set);
    for _ in 0..cfg.dags_per_set {
        let (fat, density) = match spec.topology {
            Some(t) => t,
            None => (
                *cfg.grid.fats.choose(&mut r).context("empty fat set")?,
                *cfg.grid.densities.choose(&mut r).context("empty density set")?,
            ),
        };
        let g = GeneratorConfig {
            fat,
            density,
            ..base.clone()
        };
        dags.push(generate_dag(&g, &mut r)?);
    }
    Ok(DatasetFile {
        name: spec.id.clone(),
        role: spec.role,
        seed,
        generator: base,
        system: cfg.system_for(spec)?,
        dags,
    })
}

/// Writes every dataset and the manifest; returns the manifest.
pub fn generate(cfg: &ExperimentConfig) -> Result<Vec<ManifestEntry>> {
    let dir = dataset_dir(cfg);
    let mut manifest = Vec::new();
    for (i, spec) in cfg.datasets()?.iter().enumerate() {
        let file = build_dataset(cfg, i, spec)?;
        let name = format!("{}.json", spec.id);
        write_atomic(&dir.join(&name), &serde_json::to_vec(&file)?)?;
        manifest.push(ManifestEntry {
            id: spec.id.clone(),
            role: spec.role,
            file: name,
            n: spec.n,
            dags: file.dags.len(),
        });
    }
    write_atomic(&dir.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_dataset(path: &Path) -> Result<DatasetFile> {
    let bytes = std::fs::read(path).with_context(|| format!("reading dataset {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing dataset {}", path.display()))
}

/// Learning tasks for every dataset with the given role, in grid order.
pub fn load_tasks(cfg: &ExperimentConfig, role: Role) -> Result<Vec<LearningTask>> {
    let dir = dataset_dir(cfg);
    let mut tasks = Vec::new();
    for spec in cfg.datasets()?.into_iter().filter(|s| s.role == role) {
        let path = dir.join(format!("{}.json", spec.id));
        if !path.exists() {
            bail!("dataset {} is missing; run `mrlco generate` first", path.display());
        }
        let file = read_dataset(&path)?;
        if file.role != role || file.system != cfg.system_for(&spec)? || file.generator.n != spec.n {
            bail!("dataset {} does not match the experiment config", path.display());
        }
        tasks.push(LearningTask::new(
            spec.id,
            &file.dags,
            file.system,
            &file.generator,
            cfg.reward_scale,
        )?);
    }
    Ok(tasks)
}
