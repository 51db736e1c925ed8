use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::store::Store;
use super::training::{conventional_config, datasets, record_extraction, small_data_config};
use super::{cell, mean_stderr};
use crate::autonet::{accuracy, init_net, train, DenseNet, Matrix};
use crate::error::{Error, Result};
use crate::estimators::{fit_finetune, select_model, task_delta, ModelState, SimRecord};
use crate::metalearn::pearson;
use crate::rng::{derive_seed, label_key, rng_from};
use crate::synthdata::{subsample, Dataset2D, TaskSpec};
use crate::topofeat::{characterize, FeatureLayout, GMode, TopoFeatureVector};

fn feature_batches(config: &ExperimentConfig, task: &str, data: &Dataset2D) -> Vec<Matrix> {
    let x = data.train.matrix();
    let n = x.rows();
    (0..config.tasksim.delta_batches as u64)
        .map(|b| {
            let mut rng = rng_from(config.seed, &[label_key("delta-batch"), label_key(task), b]);
            let mut idx = sample(&mut rng, n, config.tasksim.delta_batch_size.min(n)).into_vec();
            idx.sort_unstable();
            x.select_rows(&idx)
        })
        .collect()
}

/// Test accuracy on `target` of `pretrained` after the small-data procedure,
/// averaged over the configured number of training subsets.
fn finetune_accuracy(
    config: &ExperimentConfig,
    pretrained: &DenseNet,
    target: &TaskSpec,
    data: &Dataset2D,
) -> Result<f64> {
    let id = target.id();
    let mut total = 0.0;
    for j in 0..config.tasksim.subsets as u64 {
        let seed = derive_seed(config.seed, &[label_key("finetune"), label_key(&id), j]);
        let small = subsample(data, config.training.per_class(target.generator), seed)?;
        let mut net = pretrained.clone();
        let cfg = small_data_config(config, config.training.overfit_steps, seed);
        train(&mut net, &small.train.matrix(), &small.train.labels, &cfg)?;
        total += accuracy(&net, &data.test.matrix(), &data.test.labels)?;
    }
    Ok(total / config.tasksim.subsets as f64)
}

/// Pretrains one conventional model per unaugmented task and fine-tunes it on
/// every other unaugmented task, recording the topological shift and the
/// fine-tuned test accuracy of each ordered pair.
pub fn run_finetune(config: &ExperimentConfig, arch: &str, store: &Store) -> Result<Vec<SimRecord>> {
    let widths = config.architecture(arch)?.to_vec();
    let tasks: Vec<(TaskSpec, Dataset2D)> = datasets(config)?
        .into_iter()
        .filter(|(t, _)| !t.is_augmented())
        .collect();
    if tasks.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "task similarity needs at least three unaugmented tasks, found {}",
            tasks.len()
        )));
    }
    let extraction = record_extraction(config);
    let index = config.tasksim.pretrained_seed;
    let pretrained: Vec<DenseNet> = tasks
        .par_iter()
        .map(|(t, d)| {
            let seed = config.init_seed(&t.id(), arch, ModelState::Trained, index);
            let mut net = init_net(&widths, seed)?;
            train(
                &mut net,
                &d.train.matrix(),
                &d.train.labels,
                &conventional_config(config, seed),
            )?;
            Ok(net)
        })
        .collect::<Result<_>>()?;
    let batches: Vec<Vec<Matrix>> = tasks.iter().map(|(t, d)| feature_batches(config, &t.id(), d)).collect();
    let features_on = |net: &DenseNet, task: usize| -> Result<Vec<TopoFeatureVector>> {
        batches[task]
            .iter()
            .map(|x| characterize(net, x, &extraction))
            .collect()
    };
    let pairs: Vec<(usize, usize)> = (0..tasks.len())
        .flat_map(|s| (0..tasks.len()).filter(move |&t| t != s).map(move |t| (s, t)))
        .collect();
    let sims: Vec<SimRecord> = pairs
        .par_iter()
        .map(|&(s, t)| {
            let delta = task_delta(&features_on(&pretrained[s], t)?, &features_on(&pretrained[s], s)?)?;
            Ok(SimRecord {
                source_task: tasks[s].0.id(),
                target_task: tasks[t].0.id(),
                arch_id: arch.to_string(),
                layout_hash: delta.layout.hash().to_string(),
                delta: delta.values,
                finetune_acc: finetune_accuracy(config, &pretrained[s], &tasks[t].0, &tasks[t].1)?,
            })
        })
        .collect::<Result<_>>()?;
    store.save_sims(arch, &sims)?;
    Ok(sims)
}

/// One held-out target task choosing among pretrained models of the others.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskSimRow {
    pub task: String,
    pub g_mode: GMode,
    pub selected: String,
    /// 1 + number of candidates with strictly higher actual accuracy.
    pub rank: f64,
    pub n_candidates: usize,
    /// Expected rank of a uniformly random choice.
    pub random_rank: f64,
    pub corr: f64,
    pub selected_acc: f64,
    pub mean_acc: f64,
    /// Percentage points gained over the mean candidate.
    pub improvement: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSimReport {
    pub rows: Vec<TaskSimRow>,
}

impl TaskSimReport {
    fn column(&self, f: impl Fn(&TaskSimRow) -> f64) -> (f64, f64) {
        mean_stderr(&self.rows.iter().map(f).collect::<Vec<_>>())
    }

    pub fn mean_rank(&self) -> f64 {
        self.column(|r| r.rank).0
    }

    pub fn mean_random_rank(&self) -> f64 {
        self.column(|r| r.random_rank).0
    }

    pub fn metrics(&self, arch: &str) -> Vec<(String, String, String, f64)> {
        self.rows
            .iter()
            .flat_map(|r| {
                [
                    ("rank", r.rank),
                    ("random_rank", r.random_rank),
                    ("corr", r.corr),
                    ("improvement", r.improvement),
                ]
                .map(|(m, v)| (r.task.clone(), arch.to_string(), format!("{m}_{}", r.g_mode), v))
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("task,g_mode,selected,rank,n_candidates,random_rank,corr,selected_acc,mean_acc,improvement\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.task,
                r.g_mode,
                r.selected,
                cell(r.rank),
                r.n_candidates,
                cell(r.random_rank),
                cell(r.corr),
                cell(r.selected_acc),
                cell(r.mean_acc),
                cell(r.improvement)
            ));
        }
        let g = self.rows.first().map_or(String::new(), |r| r.g_mode.to_string());
        let cols = [
            self.column(|r| r.rank),
            self.column(|r| r.random_rank),
            self.column(|r| r.corr),
            self.column(|r| r.selected_acc),
            self.column(|r| r.mean_acc),
            self.column(|r| r.improvement),
        ];
        for (label, se) in [("mean", false), ("stderr", true)] {
            let c: Vec<String> = cols.iter().map(|&(m, s)| cell(if se { s } else { m })).collect();
            out.push_str(&format!(
                "{label},{g},,{},,{},{},{},{},{}\n",
                c[0], c[1], c[2], c[3], c[4], c[5]
            ));
        }
        out
    }
}

/// Leave-one-task-out evaluation of pretrained-model selection. Every
/// ordered pair of distinct tasks must be present exactly once.
pub fn cv_tasksim(
    sims: &[SimRecord],
    source: &Arc<FeatureLayout>,
    target: &Arc<FeatureLayout>,
    alpha: f64,
) -> Result<TaskSimReport> {
    let tasks: BTreeSet<&str> = sims
        .iter()
        .flat_map(|s| [s.source_task.as_str(), s.target_task.as_str()])
        .collect();
    if tasks.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "model selection needs at least three tasks, found {}",
            tasks.len()
        )));
    }
    let mut seen: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for s in sims {
        *seen.entry((&s.source_task, &s.target_task)).or_default() += 1;
    }
    for &a in &tasks {
        for &b in &tasks {
            let count = seen.get(&(a, b)).copied().unwrap_or(0);
            if a != b && count != 1 {
                return Err(Error::InvalidInput(format!(
                    "fine-tuning pair {a} -> {b} appears {count} times, expected once"
                )));
            }
        }
    }
    let sims: Vec<SimRecord> = sims
        .iter()
        .map(|s| {
            let v = TopoFeatureVector::new(s.delta.clone(), Arc::clone(source))?;
            if s.layout_hash != source.hash() {
                return Err(Error::LayoutMismatch {
                    expected: source.hash().to_string(),
                    found: s.layout_hash.clone(),
                });
            }
            Ok(SimRecord {
                layout_hash: target.hash().to_string(),
                delta: v.project(target)?.values,
                ..s.clone()
            })
        })
        .collect::<Result<_>>()?;
    let rows = tasks
        .iter()
        .map(|&held| {
            let fit: Vec<SimRecord> = sims.iter().filter(|s| !s.involves(held)).cloned().collect();
            let model = fit_finetune(&fit, alpha)?;
            let cands: Vec<&SimRecord> = sims.iter().filter(|s| s.target_task == held).collect();
            let options: Vec<(String, Vec<f64>)> =
                cands.iter().map(|s| (s.source_task.clone(), s.delta.clone())).collect();
            let selected = select_model(&options, &model)?.to_string();
            let actual: Vec<f64> = cands.iter().map(|s| s.finetune_acc).collect();
            let predicted = options
                .iter()
                .map(|(_, d)| model.predict_raw(d))
                .collect::<Result<Vec<_>>>()?;
            let chosen = cands
                .iter()
                .find(|s| s.source_task == selected)
                .expect("selection is one of the candidates")
                .finetune_acc;
            let m = actual.len() as f64;
            let mean_acc = actual.iter().sum::<f64>() / m;
            Ok(TaskSimRow {
                task: held.to_string(),
                g_mode: target.g_mode(),
                selected,
                rank: 1.0 + actual.iter().filter(|&&a| a > chosen).count() as f64,
                n_candidates: cands.len(),
                random_rank: (m + 1.0) / 2.0,
                corr: pearson(&predicted, &actual),
                selected_acc: chosen,
                mean_acc,
                improvement: 100.0 * (chosen - mean_acc),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskSimReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topofeat::ExtractionConfig;

    fn oracle() -> (Vec<SimRecord>, Arc<FeatureLayout>) {
        let layout = Arc::new(ExtractionConfig::default().layout_for(&[1, 1], GMode::Ph));
        let tasks = ["a", "b", "c", "d", "e"];
        let mut sims = Vec::new();
        for (i, s) in tasks.iter().enumerate() {
            for (j, t) in tasks.iter().enumerate() {
                if i == j {
                    continue;
                }
                let acc = 0.5 + 0.07 * i as f64 + 0.013 * j as f64;
                let mut delta = vec![0.0; layout.len()];
                delta[0] = -acc;
                delta[1] = ((i * 7 + j * 3) % 5) as f64;
                sims.push(SimRecord {
                    source_task: s.to_string(),
                    target_task: t.to_string(),
                    arch_id: "x".into(),
                    layout_hash: layout.hash().into(),
                    delta,
                    finetune_acc: acc,
                });
            }
        }
        (sims, layout)
    }

    #[test]
    fn oracle_fixture_ranks_first() {
        let (sims, layout) = oracle();
        let rep = cv_tasksim(&sims, &layout, &layout, 0.0).unwrap();
        assert_eq!(rep.rows.len(), 5);
        assert!(rep
            .rows
            .iter()
            .all(|r| r.rank == 1.0 && r.n_candidates == 4 && r.improvement > 0.0));
        assert_eq!(rep.mean_random_rank(), 2.5);
    }

    #[test]
    fn missing_pair_is_rejected() {
        let (mut sims, layout) = oracle();
        sims.pop();
        assert!(cv_tasksim(&sims, &layout, &layout, 0.0).is_err());
    }
}
