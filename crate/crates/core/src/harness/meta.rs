use std::collections::BTreeSet;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::training::{record_extraction, small_data_config};
use super::{cell, mean_stderr};
use crate::autonet::{accuracy, init_net, train, DenseNet};
use crate::error::{Error, Result};
use crate::estimators::{MetaRecord, ModelState};
use crate::metalearn::{build_bank, meta_train, MetaRun, TopoBank};
use crate::synthdata::{generate, subsample};
use crate::topofeat::{ExtractionConfig, FeatureLayout, GMode};

/// Final accuracies of one seed under one mode (`baseline` or a g-mode).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetaSeedRow {
    pub task: String,
    pub arch: String,
    pub mode: String,
    pub seed_index: u64,
    pub init_seed: u64,
    pub final_train: f64,
    pub final_test: f64,
    /// Last topological loss; NaN for the baseline.
    pub final_tda: f64,
}

/// Test accuracy (fraction) aggregated over seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetaRow {
    pub task: String,
    pub arch: String,
    pub mode: String,
    pub mean_final_test: f64,
    pub stderr: f64,
    pub n_seeds: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetaComparison {
    pub rows: Vec<MetaRow>,
    pub seeds: Vec<MetaSeedRow>,
    /// `(task, g-mode, bank)` for every regularized configuration.
    pub banks: Vec<(String, GMode, TopoBank)>,
}

impl MetaComparison {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,arch,mode,mean_final_test,stderr,n_seeds\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.task,
                r.arch,
                r.mode,
                cell(r.mean_final_test),
                cell(r.stderr),
                r.n_seeds
            ));
        }
        out
    }

    pub fn metrics(&self) -> Vec<(String, String, String, f64)> {
        self.rows
            .iter()
            .map(|r| {
                (
                    r.task.clone(),
                    r.arch.clone(),
                    format!("final_test_{}", r.mode),
                    r.mean_final_test,
                )
            })
            .collect()
    }

    pub fn seeds_csv(&self) -> String {
        let mut out = String::from("task,arch,mode,seed_index,init_seed,final_train,final_test,final_tda\n");
        for r in &self.seeds {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.task,
                r.arch,
                r.mode,
                r.seed_index,
                r.init_seed,
                cell(r.final_train),
                cell(r.final_test),
                cell(r.final_tda)
            ));
        }
        out
    }
}

/// Small-data training with and without the topological regularizer from
/// identical initializations and training subsets. Banks draw only on
/// unaugmented tasks other than the evaluated one.
pub fn run_meta_comparison(
    config: &ExperimentConfig,
    arch: &str,
    records: &[MetaRecord],
    source: &Arc<FeatureLayout>,
) -> Result<MetaComparison> {
    let widths = config.architecture(arch)?.to_vec();
    let roster = config.roster();
    let plain: BTreeSet<String> = roster.iter().filter(|t| !t.is_augmented()).map(|t| t.id()).collect();
    let tasks: Vec<String> = if config.meta_eval.tasks.is_empty() {
        plain.iter().cloned().collect()
    } else {
        config.meta_eval.tasks.clone()
    };
    let bank_pool: Vec<&MetaRecord> = records.iter().filter(|r| plain.contains(&r.task_id)).collect();
    let steps = config.meta_eval.steps;
    let mut out = MetaComparison {
        rows: Vec::new(),
        seeds: Vec::new(),
        banks: Vec::new(),
    };
    for task_id in &tasks {
        let spec = config.task(task_id)?;
        let data = generate(&spec)?;
        let mut runs: Vec<(GMode, TopoBank, ExtractionConfig)> = Vec::new();
        for &g in &config.meta_eval.g_modes {
            let target = Arc::new(record_extraction(config).layout_for(&widths, g));
            let projected = bank_pool
                .iter()
                .map(|r| r.project(source, &target))
                .collect::<Result<Vec<_>>>()?;
            let bank = build_bank(&projected, task_id, &config.meta)?;
            let extraction = ExtractionConfig {
                g_mode: g,
                ..config.extraction.clone()
            };
            runs.push((g, bank, extraction));
        }
        let per_seed: Vec<Vec<MetaSeedRow>> = (0..config.meta_eval.seeds)
            .into_par_iter()
            .map(|idx| {
                let init_seed = config.init_seed(task_id, arch, ModelState::Overfit, idx);
                let small = subsample(&data, config.training.per_class(spec.generator), init_seed)?;
                let (x, labels) = (small.train.matrix(), &small.train.labels);
                let (tx, tl) = (data.test.matrix(), &data.test.labels);
                let cfg = small_data_config(config, steps, init_seed);
                let start = init_net(&widths, init_seed)?;
                let row = |mode: &str, net: &DenseNet, tda: f64| -> Result<MetaSeedRow> {
                    Ok(MetaSeedRow {
                        task: task_id.clone(),
                        arch: arch.to_string(),
                        mode: mode.to_string(),
                        seed_index: idx,
                        init_seed,
                        final_train: accuracy(net, &x, labels)?,
                        final_test: accuracy(net, &tx, tl)?,
                        final_tda: tda,
                    })
                };
                let mut net = start.clone();
                train(&mut net, &x, labels, &cfg)?;
                let mut rows = vec![row("baseline", &net, f64::NAN)?];
                for (g, bank, extraction) in &runs {
                    let mut net = start.clone();
                    let run = MetaRun {
                        bank,
                        meta: &config.meta,
                        extraction,
                        train: &cfg,
                    };
                    let losses = meta_train(&mut net, &x, labels, &run, steps).map_err(|e| match e {
                        Error::NonFinite(m) => Error::NonFinite(format!("meta run {task_id} {g} seed {idx}: {m}")),
                        other => other,
                    })?;
                    let tda = losses.last().map_or(f64::NAN, |l| l.tda);
                    rows.push(row(g.as_str(), &net, tda)?);
                }
                Ok(rows)
            })
            .collect::<Result<_>>()?;
        let modes: Vec<String> = std::iter::once("baseline".to_string())
            .chain(runs.iter().map(|(g, _, _)| g.to_string()))
            .collect();
        for mode in &modes {
            let tests: Vec<f64> = per_seed
                .iter()
                .flatten()
                .filter(|r| &r.mode == mode)
                .map(|r| r.final_test)
                .collect();
            let (mean, se) = mean_stderr(&tests);
            out.rows.push(MetaRow {
                task: task_id.clone(),
                arch: arch.to_string(),
                mode: mode.clone(),
                mean_final_test: mean,
                stderr: se,
                n_seeds: tests.len(),
            });
        }
        out.seeds.extend(per_seed.into_iter().flatten());
        out.banks
            .extend(runs.into_iter().map(|(g, b, _)| (task_id.clone(), g, b)));
    }
    Ok(out)
}
