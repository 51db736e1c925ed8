use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::estimators::{read_records, write_records, MetaRecord, ModelState, SimRecord};
use crate::topofeat::FeatureLayout;

/// Directory holding every artifact of one experiment.
///
/// ```text
/// records/{arch}-{state}.jsonl      one MetaRecord per line
/// layouts/{arch}.tsv                feature layout descriptor
/// checkpoints/{arch}/{state}/{task}-s{i}.json
/// finetune/{arch}.jsonl             one SimRecord per line
/// data/{task}.csv
/// reports/*.csv
/// manifest.json
/// ```
#[derive(Clone, Debug)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records_path(&self, arch: &str, state: ModelState) -> PathBuf {
        self.root.join("records").join(format!("{arch}-{state}.jsonl"))
    }

    pub fn layout_path(&self, arch: &str) -> PathBuf {
        self.root.join("layouts").join(format!("{arch}.tsv"))
    }

    pub fn checkpoint_path(&self, arch: &str, state: ModelState, task: &str, index: u64) -> PathBuf {
        self.root
            .join("checkpoints")
            .join(arch)
            .join(state.as_str())
            .join(format!("{task}-s{index}.json"))
    }

    pub fn finetune_path(&self, arch: &str) -> PathBuf {
        self.root.join("finetune").join(format!("{arch}.jsonl"))
    }

    pub fn data_path(&self, task: &str) -> PathBuf {
        self.root.join("data").join(format!("{task}.csv"))
    }

    pub fn report_path(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    /// Creates the parent directory of `path`.
    pub fn prepare(&self, path: &Path) -> Result<()> {
        ensure_parent(path)
    }

    /// Writes `bytes` to `path` through a temporary sibling and a rename.
    pub fn write(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        ensure_parent(path)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn save_layout(&self, arch: &str, layout: &FeatureLayout) -> Result<()> {
        self.write(&self.layout_path(arch), layout.descriptor().as_bytes())
    }

    pub fn load_layout(&self, arch: &str) -> Result<Arc<FeatureLayout>> {
        let path = self.layout_path(arch);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Arc::new(FeatureLayout::parse_descriptor(&text)?))
    }

    pub fn save_records(&self, arch: &str, state: ModelState, records: &[MetaRecord]) -> Result<()> {
        let path = self.records_path(arch, state);
        ensure_parent(&path)?;
        write_records(path, records)
    }

    /// All records of `arch`, in state order; states never trained are skipped.
    pub fn load_records(&self, arch: &str) -> Result<Vec<MetaRecord>> {
        let mut out = Vec::new();
        for state in ModelState::ALL {
            let path = self.records_path(arch, state);
            if path.exists() {
                out.extend(read_records(&path)?);
            }
        }
        if out.is_empty() {
            return Err(Error::Empty(format!(
                "no records for architecture {arch:?} under {}",
                self.root.display()
            )));
        }
        Ok(out)
    }

    pub fn save_sims(&self, arch: &str, sims: &[SimRecord]) -> Result<()> {
        let mut out = Vec::new();
        for s in sims {
            serde_json::to_writer(&mut out, s)?;
            out.push(b'\n');
        }
        self.write(&self.finetune_path(arch), &out)
    }

    pub fn load_sims(&self, arch: &str) -> Result<Vec<SimRecord>> {
        let path = self.finetune_path(arch);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Corrupt(format!("{}:{}: {e}", path.display(), i + 1)))
            })
            .collect()
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_roundtrip_and_empty_store() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::new(dir.path());
        assert!(matches!(store.load_records("fc"), Err(Error::Empty(_))));
        let r = MetaRecord {
            task_id: "moons-r0-x1".into(),
            arch_id: "fc".into(),
            seed_id: 2,
            model_state: ModelState::Overfit,
            train_acc: 1.0,
            test_acc: 0.75,
            layout_hash: "abc".into(),
            features: vec![0.5, -1.0],
        };
        store
            .save_records("fc", ModelState::Overfit, std::slice::from_ref(&r))
            .unwrap();
        assert_eq!(store.load_records("fc").unwrap(), vec![r]);
        std::fs::write(store.records_path("fc", ModelState::Trained), "{not json\n").unwrap();
        assert!(matches!(store.load_records("fc"), Err(Error::Corrupt(_))));
    }
}
