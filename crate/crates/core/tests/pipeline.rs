use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

use nettopo::estimators::ModelState;
use nettopo::harness::{
    cv_performance, cv_tasksim, run_finetune, run_meta_comparison, run_training, ExperimentConfig, PerfOptions, Store,
};
use nettopo::topofeat::GMode;

const CONFIG: &str = r#"
seed = 3
seeds_per_state = 2

[data]
generators = ["gauss", "moons", "xor"]
augmentations = [[0.0, 1.0], [90.0, 1.0]]
samples_per_split = 80

[architectures]
small = [2, 8, 8, 2]

[meta]
test_threshold = 0.8
gap_threshold = 0.2
tau_corr = 0.0

[meta_eval]
tasks = ["moons-r0-x1"]
seeds = 2
steps = 20

[tasksim]
subsets = 1
delta_batches = 2
"#;

fn cli(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nettopo"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn hashes(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, hex::encode(Sha256::digest(std::fs::read(&p).unwrap())));
            }
        }
    }
    out
}

#[test]
fn library_pipeline_keeps_held_out_tasks_apart() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig::from_toml(CONFIG).unwrap();
    config.out = dir.path().to_path_buf();
    let store = Store::new(dir.path());
    for state in ModelState::ALL {
        let records = run_training(&config, "small", state, &store).unwrap();
        assert_eq!(records.len(), 6 * 2);
        assert!(records
            .iter()
            .all(|r| r.model_state == state && r.features.iter().all(|v| v.is_finite())));
    }
    let records = store.load_records("small").unwrap();
    let source = store.load_layout("small").unwrap();
    let target = std::sync::Arc::new(config.extraction.layout_for(&[2, 8, 8, 2], GMode::Ph));
    let perf = cv_performance(&records, &source, &target, &config.estimators, &PerfOptions::default()).unwrap();
    assert_eq!(perf.rows.len(), 6);
    assert!(perf
        .rows
        .iter()
        .all(|r| r.n_records == 6 && (0.0..=100.0).contains(&r.state_acc)));

    let sims = run_finetune(&config, "small", &store).unwrap();
    assert_eq!(sims.len(), 3 * 2);
    let rep = cv_tasksim(&sims, &source, &target, config.estimators.alpha).unwrap();
    assert_eq!(rep.rows.len(), 3);
    assert!(rep
        .rows
        .iter()
        .all(|r| r.rank >= 1.0 && r.rank <= r.n_candidates as f64));

    let cmp = run_meta_comparison(&config, "small", &records, &source).unwrap();
    for (task, _, bank) in &cmp.banks {
        assert_eq!(&bank.current_task, task);
        assert!(bank
            .entries
            .iter()
            .all(|e| &e.task_id != task && !e.task_id.contains("-r90-")));
    }
    assert_eq!(cmp.seeds.len(), 2 * (1 + GMode::ALL.len()));
}

#[test]
fn cli_runs_end_to_end_and_reports_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.toml");
    std::fs::write(&config, CONFIG).unwrap();
    let out = dir.path().join("run");
    for args in [
        &["gen-data"][..],
        &["train"],
        &["cv-perf", "--g-mode", "ph"],
        &["cv-perf", "--shuffle-states", "1"],
        &["finetune"],
        &["cv-tasksim"],
        &["meta"],
        &["report"],
    ] {
        let o = cli(args, &config, &out);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let files = hashes(&out);
    for f in [
        "manifest.json",
        "records/small-trained.jsonl",
        "layouts/small.tsv",
        "reports/cv-perf-small-ph.csv",
        "reports/cv-perf-small-both-shuffled.csv",
        "reports/cv-tasksim-small-both.csv",
        "reports/meta-small.csv",
        "reports/features-small.csv",
        "data/moons-r90-x1.csv",
    ] {
        assert!(files.contains_key(f), "missing {f}");
    }
    let ckpt = out.join("checkpoints/small/trained/gauss-r0-x1-s0.json");
    let o = cli(
        &[
            "extract",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--task",
            "gauss-r0-x1",
        ],
        &config,
        &out,
    );
    assert!(o.status.success());

    let o = cli(&["train", "--state", "bogus"], &config, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error kind=usage msg="));
    let o = cli(
        &["extract", "--checkpoint", "missing.json", "--task", "gauss-r0-x1"],
        &config,
        &out,
    );
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error kind=io msg="), "{err}");
    let empty = dir.path().join("empty");
    let o = cli(&["report"], &config, &empty);
    assert_eq!(o.status.code(), Some(1));
    assert!(!empty.join("reports").exists());
}
