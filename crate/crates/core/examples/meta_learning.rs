//! Small-data training on spirals with and without the pull toward the
//! features of well-generalizing networks from other tasks.

use nettopo::estimators::ModelState;
use nettopo::harness::{run_meta_comparison, run_training, ExperimentConfig, Store};

fn main() -> nettopo::Result<()> {
    let mut config = ExperimentConfig::default();
    config.data.augmentations = vec![[0.0, 1.0]];
    config.meta_eval.seeds = 3;
    let store = Store::new(std::env::temp_dir().join("nettopo-meta-example"));
    for state in ModelState::ALL {
        run_training(&config, "fc6", state, &store)?;
    }
    let records = store.load_records("fc6")?;
    let source = store.load_layout("fc6")?;
    let cmp = run_meta_comparison(&config, "fc6", &records, &source)?;
    for (task, g, bank) in &cmp.banks {
        let active = bank.mask.iter().filter(|&&m| m).count();
        println!(
            "{task} {g}: bank of {} entries, {active} masked-in components",
            bank.len()
        );
    }
    print!("{}", cmp.to_csv());
    Ok(())
}
