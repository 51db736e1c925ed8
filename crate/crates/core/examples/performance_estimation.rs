//! Test-set-free performance estimation on a reduced roster: train every
//! state, then evaluate the state classifier and the accuracy and gap
//! regressors with leave-one-task-out cross-validation.

use std::sync::Arc;

use nettopo::estimators::ModelState;
use nettopo::harness::{cv_performance, run_training, ExperimentConfig, PerfOptions, Store};
use nettopo::topofeat::GMode;

fn main() -> nettopo::Result<()> {
    let mut config = ExperimentConfig::default();
    config.data.augmentations = vec![[0.0, 1.0], [90.0, 2.0]];
    config.seeds_per_state = 2;
    let store = Store::new(std::env::temp_dir().join("nettopo-perf-example"));
    for state in ModelState::ALL {
        run_training(&config, "fc6", state, &store)?;
    }
    let records = store.load_records("fc6")?;
    let source = store.load_layout("fc6")?;
    for g in GMode::ALL {
        let target = Arc::new(config.extraction.layout_for(config.architecture("fc6")?, g));
        let report = cv_performance(&records, &source, &target, &config.estimators, &PerfOptions::default())?;
        print!("{g:<5}");
        for (metric, mean, se) in report.summary() {
            print!("  {metric} {mean:.2}±{se:.2}");
        }
        println!();
    }
    Ok(())
}
