//! Experiment orchestration: training runs, feature records, cross-validated
//! estimator evaluation, task-similarity studies and meta-learning
//! comparisons. Every output is a pure function of an [`ExperimentConfig`].

mod config;
mod meta;
mod perf;
mod report;
mod store;
mod tasksim;
mod training;

pub use config::{DataConfig, ExperimentConfig, MetaEvalConfig, TaskSimConfig, TrainingConfig};
pub use meta::{run_meta_comparison, MetaComparison, MetaRow, MetaSeedRow};
pub use perf::{cv_performance, PerfOptions, PerfReport, PerfRow};
pub use report::{write_manifest, write_report, MANIFEST_FORMAT};
pub use store::Store;
pub use tasksim::{cv_tasksim, run_finetune, TaskSimReport, TaskSimRow};
pub use training::{gen_data, run_training, train_one, TrainedRun};

/// Mean and standard error (sample standard deviation over `sqrt(n)`) of the
/// finite values; `(NaN, NaN)` when there are none.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Fixed-format number for report cells.
pub(crate) fn cell(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        "nan".into()
    }
}

/// Long-format `task,architecture,metric,value` table.
pub fn metrics_csv(rows: &[(String, String, String, f64)]) -> String {
    let mut out = String::from("task,architecture,metric,value\n");
    for (task, arch, metric, value) in rows {
        out.push_str(&format!("{task},{arch},{metric},{}\n", cell(*value)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stderr_examples() {
        assert_eq!(mean_stderr(&[1.0, 3.0]), (2.0, 1.0));
        assert_eq!(mean_stderr(&[5.0]), (5.0, 0.0));
        assert!(mean_stderr(&[f64::NAN]).0.is_nan());
        assert_eq!(cell(0.5), "0.500000");
    }
}
