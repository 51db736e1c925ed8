use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::store::Store;
use crate::autonet::{accuracy, init_net, save_checkpoint, train, DenseNet, Schedule, TrainConfig};
use crate::error::{Error, Result};
use crate::estimators::{MetaRecord, ModelState};
use crate::synthdata::{generate, subsample, write_csv, Dataset2D, TaskSpec};
use crate::topofeat::{characterize, ExtractionConfig, GMode};

/// A network after its state's procedure, with its record.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub net: DenseNet,
    pub init_seed: u64,
    pub record: MetaRecord,
}

pub(crate) fn conventional_config(config: &ExperimentConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..config.training.conventional.clone()
    }
}

/// Full-batch small-data procedure with the conventional optimizer settings.
pub(crate) fn small_data_config(config: &ExperimentConfig, steps: u32, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: None,
        schedule: Schedule::Steps(steps),
        seed,
        ..config.training.conventional.clone()
    }
}

/// Records always carry every statistic; other g-modes are projections.
pub(crate) fn record_extraction(config: &ExperimentConfig) -> ExtractionConfig {
    ExtractionConfig {
        g_mode: GMode::Both,
        ..config.extraction.clone()
    }
}

fn with_context(e: Error, what: &str) -> Error {
    match e {
        Error::NonFinite(m) => Error::NonFinite(format!("{what}: {m}")),
        other => other,
    }
}

/// Builds run `index` of `state` on `task`, runs the state's procedure and
/// characterizes the result on the full training split.
pub fn train_one(
    config: &ExperimentConfig,
    task: &TaskSpec,
    data: &Dataset2D,
    arch: &str,
    state: ModelState,
    index: u64,
) -> Result<TrainedRun> {
    let widths = config.architecture(arch)?;
    let id = task.id();
    let init_seed = config.init_seed(&id, arch, state, index);
    let what = format!("task {id} arch {arch} state {state} seed {index}");
    let mut net = init_net(widths, init_seed)?;
    let x = data.train.matrix();
    let train_acc = match state {
        ModelState::Untrained => accuracy(&net, &x, &data.train.labels)?,
        ModelState::Trained => {
            train(
                &mut net,
                &x,
                &data.train.labels,
                &conventional_config(config, init_seed),
            )
            .map_err(|e| with_context(e, &what))?;
            accuracy(&net, &x, &data.train.labels)?
        }
        ModelState::Overfit => {
            let small = subsample(data, config.training.per_class(task.generator), init_seed)?;
            let sx = small.train.matrix();
            let cfg = small_data_config(config, config.training.overfit_steps, init_seed);
            train(&mut net, &sx, &small.train.labels, &cfg).map_err(|e| with_context(e, &what))?;
            accuracy(&net, &sx, &small.train.labels)?
        }
    };
    let test_acc = accuracy(&net, &data.test.matrix(), &data.test.labels)?;
    let features = characterize(&net, &x, &record_extraction(config)).map_err(|e| with_context(e, &what))?;
    let record = MetaRecord {
        task_id: id,
        arch_id: arch.to_string(),
        seed_id: index,
        model_state: state,
        train_acc,
        test_acc,
        layout_hash: features.layout.hash().to_string(),
        features: features.values,
    };
    record.validate().map_err(|e| with_context(e, &what))?;
    Ok(TrainedRun { net, init_seed, record })
}

pub(crate) fn datasets(config: &ExperimentConfig) -> Result<Vec<(TaskSpec, Dataset2D)>> {
    config
        .roster()
        .into_par_iter()
        .map(|t| generate(&t).map(|d| (t, d)))
        .collect()
}

/// Writes every roster task as CSV; returns the task ids.
pub fn gen_data(config: &ExperimentConfig, store: &Store) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for (task, data) in datasets(config)? {
        let path = store.data_path(&task.id());
        store.prepare(&path)?;
        write_csv(&data, &path)?;
        ids.push(task.id());
    }
    Ok(ids)
}

/// Every (task, seed) run of `state` on `arch`. Checkpoints, the record file
/// and the layout descriptor are (re)written in roster order. A failing run
/// leaves a one-line diagnostic under `failures/`.
pub fn run_training(
    config: &ExperimentConfig,
    arch: &str,
    state: ModelState,
    store: &Store,
) -> Result<Vec<MetaRecord>> {
    let widths = config.architecture(arch)?.to_vec();
    let data = datasets(config)?;
    let jobs: Vec<(usize, u64)> = (0..data.len())
        .flat_map(|t| (0..config.seeds_per_state).map(move |i| (t, i)))
        .collect();
    let runs: Result<Vec<TrainedRun>> = jobs
        .par_iter()
        .map(|&(t, i)| train_one(config, &data[t].0, &data[t].1, arch, state, i))
        .collect();
    let runs = match runs {
        Ok(r) => r,
        Err(e) => {
            let diag = serde_json::json!({ "arch": arch, "state": state, "kind": e.kind(), "error": e.to_string() });
            store.write(
                &store.root().join("failures").join(format!("{arch}-{state}.json")),
                format!("{diag}\n").as_bytes(),
            )?;
            return Err(e);
        }
    };
    for run in &runs {
        let r = &run.record;
        let path = store.checkpoint_path(arch, state, &r.task_id, r.seed_id);
        store.prepare(&path)?;
        save_checkpoint(&run.net, &path)?;
    }
    let records: Vec<MetaRecord> = runs.into_iter().map(|r| r.record).collect();
    store.save_layout(arch, &record_extraction(config).layout_for(&widths, GMode::Both))?;
    store.save_records(arch, state, &records)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::Generator;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.data.generators = vec![Generator::Gauss];
        cfg.data.augmentations = vec![[0.0, 1.0]];
        cfg.data.samples_per_split = 40;
        cfg.architectures = [("tiny".to_string(), vec![2, 4, 2])].into();
        cfg.seeds_per_state = 2;
        cfg.training.conventional.schedule = Schedule::Epochs(2);
        cfg.training.overfit_steps = 5;
        cfg
    }

    #[test]
    fn untrained_runs_take_no_steps() {
        let cfg = tiny();
        let (task, data) = datasets(&cfg).unwrap().remove(0);
        let run = train_one(&cfg, &task, &data, "tiny", ModelState::Untrained, 0).unwrap();
        assert_eq!(run.net, init_net(&[2, 4, 2], run.init_seed).unwrap());
        assert_eq!(run.record.seed_id, 0);
    }

    #[test]
    fn training_writes_records_and_is_deterministic() {
        let cfg = tiny();
        let dir = tempfile::tempdir().unwrap();
        let store = Store::new(dir.path());
        let a = run_training(&cfg, "tiny", ModelState::Overfit, &store).unwrap();
        let b = run_training(&cfg, "tiny", ModelState::Overfit, &store).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert_eq!(store.load_records("tiny").unwrap(), a);
        assert_eq!(store.load_layout("tiny").unwrap().hash(), a[0].layout_hash);
        assert!(store
            .checkpoint_path("tiny", ModelState::Overfit, "gauss-r0-x1", 1)
            .exists());
    }
}
