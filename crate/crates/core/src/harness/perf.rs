use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::{cell, mean_stderr};
use crate::error::{Error, Result};
use crate::estimators::{fit_perf_gap, fit_standardizer, fit_test_acc, knn_state, EstimatorConfig, MetaRecord};
use crate::rng::{label_key, rng_from};
use crate::topofeat::{FeatureLayout, GMode};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PerfOptions {
    /// Permutes the model states of each fold's fitting set (chance level).
    pub shuffle_states: Option<u64>,
    /// Keeps the held-out task in the fitting set. Violates the protocol;
    /// only meaningful as a memorization check.
    pub leak_held_out: bool,
}

/// One held-out task. Accuracies are percentages and errors are
/// percentage points.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerfRow {
    pub task: String,
    pub g_mode: GMode,
    pub state_acc: f64,
    pub test_mae: f64,
    pub gap_mae: f64,
    pub baseline_test_mae: f64,
    pub baseline_gap_mae: f64,
    pub n_records: usize,
    /// Held-out records above the training threshold, on which the MAEs are taken.
    pub n_estimated: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerfReport {
    pub rows: Vec<PerfRow>,
}

impl PerfReport {
    const METRICS: [&'static str; 5] = [
        "state_acc",
        "test_mae",
        "gap_mae",
        "baseline_test_mae",
        "baseline_gap_mae",
    ];

    fn value(r: &PerfRow, metric: &str) -> f64 {
        match metric {
            "state_acc" => r.state_acc,
            "test_mae" => r.test_mae,
            "gap_mae" => r.gap_mae,
            "baseline_test_mae" => r.baseline_test_mae,
            _ => r.baseline_gap_mae,
        }
    }

    fn column(&self, metric: &str) -> Vec<f64> {
        self.rows.iter().map(|r| Self::value(r, metric)).collect()
    }

    /// `(metric, mean, standard error)` across folds.
    pub fn summary(&self) -> Vec<(&'static str, f64, f64)> {
        Self::METRICS
            .iter()
            .map(|&m| {
                let (mean, se) = mean_stderr(&self.column(m));
                (m, mean, se)
            })
            .collect()
    }

    pub fn mean(&self, metric: &str) -> f64 {
        mean_stderr(&self.column(metric)).0
    }

    /// Every per-fold value in long format, metric names suffixed by g-mode.
    pub fn metrics(&self, arch: &str) -> Vec<(String, String, String, f64)> {
        self.rows
            .iter()
            .flat_map(|r| {
                Self::METRICS.map(|m| {
                    (
                        r.task.clone(),
                        arch.to_string(),
                        format!("{m}_{}", r.g_mode),
                        Self::value(r, m),
                    )
                })
            })
            .collect()
    }

    /// Per-fold rows followed by `mean` and `stderr` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "task,g_mode,state_acc,test_mae,gap_mae,baseline_test_mae,baseline_gap_mae,n_records,n_estimated\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.task,
                r.g_mode,
                cell(r.state_acc),
                cell(r.test_mae),
                cell(r.gap_mae),
                cell(r.baseline_test_mae),
                cell(r.baseline_gap_mae),
                r.n_records,
                r.n_estimated
            ));
        }
        let g = self.rows.first().map_or(String::new(), |r| r.g_mode.to_string());
        let summary = self.summary();
        for (label, pick) in [("mean", 0usize), ("stderr", 1)] {
            let cells: Vec<String> = summary
                .iter()
                .map(|s| cell(if pick == 0 { s.1 } else { s.2 }))
                .collect();
            out.push_str(&format!("{label},{g},{},,\n", cells.join(",")));
        }
        out
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean_abs(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (s, n) = pairs.fold((0.0, 0usize), |(s, n), (a, b)| (s + (a - b).abs(), n + 1));
    if n == 0 {
        f64::NAN
    } else {
        100.0 * s / n as f64
    }
}

/// Leave-one-task-out evaluation of the state classifier and of the test
/// accuracy and gap regressors. Records are given in `source` layout and
/// evaluated in `target`, a sub-layout of it.
pub fn cv_performance(
    records: &[MetaRecord],
    source: &Arc<FeatureLayout>,
    target: &Arc<FeatureLayout>,
    config: &EstimatorConfig,
    options: &PerfOptions,
) -> Result<PerfReport> {
    config.validate()?;
    let records: Vec<MetaRecord> = if source.hash() == target.hash() {
        records.to_vec()
    } else {
        records
            .iter()
            .map(|r| r.project(source, target))
            .collect::<Result<_>>()?
    };
    let tasks: BTreeSet<&str> = records.iter().map(|r| r.task_id.as_str()).collect();
    if tasks.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "leave-one-task-out needs at least two tasks, found {}",
            tasks.len()
        )));
    }
    let rows = tasks
        .into_par_iter()
        .map(|held| fold(&records, held, target, config, options))
        .collect::<Result<Vec<_>>>()?;
    Ok(PerfReport { rows })
}

fn fold(
    records: &[MetaRecord],
    held: &str,
    layout: &FeatureLayout,
    config: &EstimatorConfig,
    options: &PerfOptions,
) -> Result<PerfRow> {
    let test: Vec<&MetaRecord> = records.iter().filter(|r| r.task_id == held).collect();
    let mut fit: Vec<MetaRecord> = records
        .iter()
        .filter(|r| options.leak_held_out || r.task_id != held)
        .cloned()
        .collect();
    if !options.leak_held_out && fit.iter().any(|r| r.task_id == held) {
        return Err(Error::InvalidInput(format!(
            "held-out task {held} leaked into its fold"
        )));
    }
    if let Some(seed) = options.shuffle_states {
        let mut states: Vec<_> = fit.iter().map(|r| r.model_state).collect();
        states.shuffle(&mut rng_from(seed, &[label_key("shuffle-states"), label_key(held)]));
        fit.iter_mut().zip(states).for_each(|(r, s)| r.model_state = s);
    }
    let standardizer = fit_standardizer(&fit)?;
    let mut hits = 0usize;
    for r in &test {
        if knn_state(&r.features, layout.hash(), &fit, &standardizer, config.k)? == r.model_state {
            hits += 1;
        }
    }
    let h = fit_test_acc(&fit, &standardizer, config)?;
    let h_gap = fit_perf_gap(&fit, &standardizer, config)?;
    let kept: Vec<&MetaRecord> = fit.iter().filter(|r| r.train_acc >= config.train_threshold).collect();
    let med_test = median(kept.iter().map(|r| r.test_acc).collect());
    let med_gap = median(kept.iter().map(|r| r.perf_gap()).collect());
    let est: Vec<&&MetaRecord> = test.iter().filter(|r| r.train_acc >= config.train_threshold).collect();
    let pred_test = est.iter().map(|r| h.predict(&r.features)).collect::<Result<Vec<_>>>()?;
    let pred_gap = est
        .iter()
        .map(|r| h_gap.predict(&r.features))
        .collect::<Result<Vec<_>>>()?;
    Ok(PerfRow {
        task: held.to_string(),
        g_mode: layout.g_mode(),
        state_acc: 100.0 * hits as f64 / test.len() as f64,
        test_mae: mean_abs(pred_test.iter().zip(&est).map(|(p, r)| (*p, r.test_acc))),
        gap_mae: mean_abs(pred_gap.iter().zip(&est).map(|(p, r)| (*p, r.perf_gap()))),
        baseline_test_mae: mean_abs(est.iter().map(|r| (med_test, r.test_acc))),
        baseline_gap_mae: mean_abs(est.iter().map(|r| (med_gap, r.perf_gap()))),
        n_records: test.len(),
        n_estimated: est.len(),
    })
}
