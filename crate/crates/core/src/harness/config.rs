use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autonet::TrainConfig;
use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, ModelState};
use crate::metalearn::MetaConfig;
use crate::rng::{derive_seed, label_key};
use crate::synthdata::{Generator, TaskSpec, AUGMENTATIONS};
use crate::topofeat::{ExtractionConfig, GMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub generators: Vec<Generator>,
    /// `[rotation degrees, x scale]` pairs; `[0, 1]` is the plain task.
    pub augmentations: Vec<[f64; 2]>,
    pub samples_per_split: usize,
    /// Per-generator noise overrides.
    pub noise: BTreeMap<Generator, f64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            generators: Generator::ALL.to_vec(),
            augmentations: AUGMENTATIONS.iter().map(|&(r, s)| [r, s]).collect(),
            samples_per_split: 600,
            noise: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub conventional: TrainConfig,
    /// Full-batch steps of the small-data procedure.
    pub overfit_steps: u32,
    /// Per-class training points of the small-data procedure.
    pub overfit_per_class: BTreeMap<Generator, usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            conventional: TrainConfig::default(),
            overfit_steps: 250,
            overfit_per_class: Generator::ALL.iter().map(|&g| (g, g.small_data_per_class())).collect(),
        }
    }
}

impl TrainingConfig {
    pub fn per_class(&self, g: Generator) -> usize {
        self.overfit_per_class
            .get(&g)
            .copied()
            .unwrap_or_else(|| g.small_data_per_class())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSimConfig {
    /// Small training sets each pretrained model is fine-tuned on.
    pub subsets: usize,
    /// Batches used to average features for the topological shift.
    pub delta_batches: usize,
    pub delta_batch_size: usize,
    /// Which conventional initialization serves as the pretrained model.
    pub pretrained_seed: u64,
}

impl Default for TaskSimConfig {
    fn default() -> Self {
        Self {
            subsets: 3,
            delta_batches: 10,
            delta_batch_size: 32,
            pretrained_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaEvalConfig {
    /// Task ids to evaluate; empty means every unaugmented task.
    pub tasks: Vec<String>,
    pub seeds: u64,
    pub steps: u32,
    pub g_modes: Vec<GMode>,
}

impl Default for MetaEvalConfig {
    fn default() -> Self {
        Self {
            tasks: vec!["spirals-r0-x1".into()],
            seeds: 10,
            steps: 100,
            g_modes: GMode::ALL.to_vec(),
        }
    }
}

/// Everything an experiment depends on; every output is a function of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    /// Named layer-width lists.
    pub architectures: BTreeMap<String, Vec<usize>>,
    pub seeds_per_state: u64,
    pub training: TrainingConfig,
    pub extraction: ExtractionConfig,
    pub estimators: EstimatorConfig,
    pub meta: MetaConfig,
    pub meta_eval: MetaEvalConfig,
    pub tasksim: TaskSimConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/nettopo"),
            data: DataConfig::default(),
            architectures: BTreeMap::from([("fc6".to_string(), vec![2, 25, 25, 25, 25, 25, 2])]),
            seeds_per_state: 3,
            training: TrainingConfig::default(),
            extraction: ExtractionConfig::default(),
            estimators: EstimatorConfig::default(),
            meta: MetaConfig::default(),
            meta_eval: MetaEvalConfig::default(),
            tasksim: TaskSimConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.generators.is_empty() || self.data.augmentations.is_empty() {
            return Err(Error::Config("task roster is empty".into()));
        }
        if self.architectures.is_empty() {
            return Err(Error::Config("architecture roster is empty".into()));
        }
        for (name, widths) in &self.architectures {
            if widths.len() < 2 || widths.contains(&0) || widths[0] != 2 || widths[widths.len() - 1] != 2 {
                return Err(Error::Config(format!(
                    "architecture {name}: widths must start and end with 2 and be positive"
                )));
            }
        }
        if self.seeds_per_state == 0 {
            return Err(Error::Config("seeds_per_state must be >= 1".into()));
        }
        self.training.conventional.validate()?;
        self.extraction.validate()?;
        self.estimators.validate()?;
        self.meta.validate()?;
        if self.tasksim.subsets == 0 || self.tasksim.delta_batches == 0 || self.tasksim.delta_batch_size == 0 {
            return Err(Error::Config("task-similarity counts must be >= 1".into()));
        }
        for t in self.roster() {
            t.validate()?;
        }
        Ok(())
    }

    pub fn roster(&self) -> Vec<TaskSpec> {
        self.data
            .generators
            .iter()
            .flat_map(|&g| {
                self.data.augmentations.iter().map(move |&[r, s]| {
                    let mut spec = TaskSpec::new(g, self.seed).augmented(r, s);
                    spec.samples_per_split = self.data.samples_per_split;
                    if let Some(&noise) = self.data.noise.get(&g) {
                        spec.noise = noise;
                    }
                    spec
                })
            })
            .collect()
    }

    pub fn task(&self, id: &str) -> Result<TaskSpec> {
        self.roster()
            .into_iter()
            .find(|t| t.id() == id)
            .ok_or_else(|| Error::InvalidInput(format!("task {id:?} is not in the roster")))
    }

    pub fn architecture(&self, name: &str) -> Result<&[usize]> {
        self.architectures
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidInput(format!("architecture {name:?} is not configured")))
    }

    /// Initialization seed of run `index` of `state` on `task`.
    pub fn init_seed(&self, task: &str, arch: &str, state: ModelState, index: u64) -> u64 {
        derive_seed(
            self.seed,
            &[label_key("init"), label_key(task), label_key(arch), state as u64, index],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_and_defaults() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        let small =
            ExperimentConfig::from_toml("seed = 4\nseeds_per_state = 1\n[data]\ngenerators = [\"moons\"]\n").unwrap();
        assert_eq!(small.seed, 4);
        assert_eq!(small.roster().len(), 6);
        assert_eq!(small.training.per_class(Generator::Gauss), 2);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml("seeds_per_state = 0").is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("[architectures]\nx = [3, 2]").is_err());
    }

    #[test]
    fn seeds_are_distinct_per_run() {
        let cfg = ExperimentConfig::default();
        let a = cfg.init_seed("moons-r0-x1", "fc6", ModelState::Trained, 0);
        assert_ne!(a, cfg.init_seed("moons-r0-x1", "fc6", ModelState::Trained, 1));
        assert_ne!(a, cfg.init_seed("moons-r0-x1", "fc6", ModelState::Overfit, 0));
        assert_eq!(a, cfg.init_seed("moons-r0-x1", "fc6", ModelState::Trained, 0));
    }
}
