use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::json;
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::store::Store;
use super::{cell, mean_stderr};
use crate::error::{Error, Result};
use crate::estimators::ModelState;

pub const MANIFEST_FORMAT: &str = "nettopo-manifest-v1";

/// Raw feature table and per-(task, state) accuracy summary of `arch`,
/// followed by a fresh manifest. Nothing is written when the store holds no
/// records.
pub fn write_report(config: &ExperimentConfig, arch: &str, store: &Store) -> Result<Vec<PathBuf>> {
    let records = store.load_records(arch)?;
    let layout = store.load_layout(arch)?;
    let mut features = String::from("task,arch,state,seed,train_acc,test_acc");
    for c in layout.components() {
        features.push(',');
        features.push_str(&c.name);
    }
    features.push('\n');
    for r in &records {
        features.push_str(&format!(
            "{},{},{},{},{},{}",
            r.task_id, r.arch_id, r.model_state, r.seed_id, r.train_acc, r.test_acc
        ));
        for v in &r.features {
            features.push_str(&format!(",{v}"));
        }
        features.push('\n');
    }
    let mut groups: BTreeMap<(&str, ModelState), Vec<(f64, f64)>> = BTreeMap::new();
    for r in &records {
        groups
            .entry((&r.task_id, r.model_state))
            .or_default()
            .push((r.train_acc, r.test_acc));
    }
    let mut summary = String::from("task,state,n,mean_train,stderr_train,mean_test,stderr_test\n");
    for ((task, state), accs) in &groups {
        let (tr, te): (Vec<f64>, Vec<f64>) = accs.iter().copied().unzip();
        let (a, b) = mean_stderr(&tr);
        let (c, d) = mean_stderr(&te);
        summary.push_str(&format!(
            "{task},{state},{},{},{},{},{}\n",
            tr.len(),
            cell(a),
            cell(b),
            cell(c),
            cell(d)
        ));
    }
    let paths = vec![
        store.report_path(&format!("features-{arch}.csv")),
        store.report_path(&format!("accuracy-{arch}.csv")),
    ];
    store.write(&paths[0], features.as_bytes())?;
    store.write(&paths[1], summary.as_bytes())?;
    let manifest = write_manifest(config, store)?;
    Ok(paths.into_iter().chain([manifest]).collect())
}

fn collect_files(dir: &Path, root: &Path, out: &mut Vec<(String, PathBuf)>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, root, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("below root");
            out.push((rel.to_string_lossy().replace('\\', "/"), path));
        }
    }
    Ok(())
}

/// Writes `manifest.json`: configuration, every seed the configuration
/// implies, layout hashes of the stored architectures and a SHA-256 of every
/// other file in the store.
pub fn write_manifest(config: &ExperimentConfig, store: &Store) -> Result<PathBuf> {
    let root = store.root();
    if !root.exists() {
        return Err(Error::Empty(format!("store {} does not exist", root.display())));
    }
    let mut files = Vec::new();
    collect_files(root, root, &mut files)?;
    files.retain(|(rel, _)| rel != "manifest.json" && !rel.ends_with(".tmp"));
    files.sort();
    let mut digests = BTreeMap::new();
    for (rel, path) in &files {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        digests.insert(rel.clone(), hex::encode(Sha256::digest(&bytes)));
    }
    let mut layouts = BTreeMap::new();
    for arch in config.architectures.keys() {
        if store.layout_path(arch).exists() {
            layouts.insert(arch.clone(), store.load_layout(arch)?.hash().to_string());
        }
    }
    let mut init_seeds = Vec::new();
    for task in config.roster() {
        for arch in config.architectures.keys() {
            for state in ModelState::ALL {
                for i in 0..config.seeds_per_state.max(config.meta_eval.seeds) {
                    init_seeds.push(json!({
                        "task": task.id(),
                        "arch": arch,
                        "state": state,
                        "index": i,
                        "seed": config.init_seed(&task.id(), arch, state, i),
                    }));
                }
            }
        }
    }
    let manifest = json!({
        "format": MANIFEST_FORMAT,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "seeds": {
            "global": config.seed,
            "extraction": config.extraction.seed,
            "meta": config.meta.seed,
            "init": init_seeds,
        },
        "layouts": layouts,
        "files": digests,
    });
    let path = store.manifest_path();
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    store.write(&path, text.as_bytes())?;
    Ok(path)
}
