//! Pretrained-model selection from topological shifts across the five
//! unaugmented tasks.

use std::sync::Arc;

use nettopo::harness::{cv_tasksim, run_finetune, ExperimentConfig, Store};
use nettopo::topofeat::GMode;

fn main() -> nettopo::Result<()> {
    let mut config = ExperimentConfig::default();
    config.data.augmentations = vec![[0.0, 1.0]];
    let store = Store::new(std::env::temp_dir().join("nettopo-tasksim-example"));
    let sims = run_finetune(&config, "fc6", &store)?;
    let widths = config.architecture("fc6")?.to_vec();
    let source = Arc::new(config.extraction.layout_for(&widths, GMode::Both));
    for s in &sims {
        println!(
            "{:>14} -> {:<14} fine-tuned test accuracy {:.3}",
            s.source_task, s.target_task, s.finetune_acc
        );
    }
    let report = cv_tasksim(&sims, &source, &source, config.estimators.alpha)?;
    print!("{}", report.to_csv());
    Ok(())
}
