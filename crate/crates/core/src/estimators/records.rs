use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topofeat::{FeatureLayout, TopoFeatureVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelState {
    Untrained,
    Trained,
    Overfit,
}

impl ModelState {
    pub const ALL: [ModelState; 3] = [ModelState::Untrained, ModelState::Trained, ModelState::Overfit];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelState::Untrained => "untrained",
            ModelState::Trained => "trained",
            ModelState::Overfit => "overfit",
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ModelState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown model state {s:?}")))
    }
}

/// One characterized network: its features plus what we know about it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaRecord {
    pub task_id: String,
    pub arch_id: String,
    pub seed_id: u64,
    pub model_state: ModelState,
    pub train_acc: f64,
    pub test_acc: f64,
    pub layout_hash: String,
    pub features: Vec<f64>,
}

impl MetaRecord {
    pub fn perf_gap(&self) -> f64 {
        (self.test_acc - self.train_acc).abs()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("train_acc", self.train_acc), ("test_acc", self.test_acc)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Corrupt(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "features of {} seed {}",
                self.task_id, self.seed_id
            )));
        }
        Ok(())
    }

    /// Features bound to `layout`, which must carry the record's hash.
    pub fn vector(&self, layout: &Arc<FeatureLayout>) -> Result<TopoFeatureVector> {
        if layout.hash() != self.layout_hash {
            return Err(Error::LayoutMismatch {
                expected: layout.hash().to_string(),
                found: self.layout_hash.clone(),
            });
        }
        TopoFeatureVector::new(self.features.clone(), Arc::clone(layout))
    }

    /// The record re-expressed in a sub-layout of its own.
    pub fn project(&self, source: &Arc<FeatureLayout>, target: &Arc<FeatureLayout>) -> Result<Self> {
        let v = self.vector(source)?.project(target)?;
        Ok(Self {
            layout_hash: target.hash().to_string(),
            features: v.values,
            ..self.clone()
        })
    }
}

/// Writes one JSON object per line.
pub fn write_records(path: impl AsRef<Path>, records: &[MetaRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Reads a JSON-lines record file; any malformed line is an error.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<MetaRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let r: MetaRecord =
                serde_json::from_str(line).map_err(|e| Error::Corrupt(format!("{}:{}: {e}", path.display(), i + 1)))?;
            r.validate()
                .map_err(|e| Error::Corrupt(format!("{}:{}: {e}", path.display(), i + 1)))?;
            Ok(r)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let r = MetaRecord {
            task_id: "moons_0".into(),
            arch_id: "fc6".into(),
            seed_id: 2,
            model_state: ModelState::Overfit,
            train_acc: 1.0,
            test_acc: 0.8125,
            layout_hash: "abcd".into(),
            features: vec![0.1, -2.5e-7, 3.0],
        };
        write_records(&path, &[r.clone(), r.clone()]).unwrap();
        assert_eq!(read_records(&path).unwrap(), vec![r.clone(), r]);
        assert!((read_records(&path).unwrap()[0].perf_gap() - 0.1875).abs() < 1e-15);

        std::fs::write(&path, "{\"task_id\":1}\n").unwrap();
        assert!(matches!(read_records(&path), Err(Error::Corrupt(_))));
    }

    #[test]
    fn state_names() {
        for s in ModelState::ALL {
            assert_eq!(s.as_str().parse::<ModelState>().unwrap(), s);
        }
        assert!("fit".parse::<ModelState>().is_err());
    }
}
