//! Network checkpoints.
//!
//! A checkpoint is a single JSON object:
//!
//! ```text
//! {
//!   "format": "nettopo-dense-v1",
//!   "seed": 17,
//!   "widths": [2, 25, 2],
//!   "layers": [
//!     { "rows": 2, "cols": 25, "weights": [ ...row-major, rows*cols values... ], "bias": [ ...cols values... ] },
//!     ...
//!   ]
//! }
//! ```
//!
//! Floats are written in shortest round-trip form, so save/load is lossless.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dense, DenseNet, Matrix};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "nettopo-dense-v1";

#[derive(Serialize, Deserialize)]
struct LayerPayload {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    seed: u64,
    widths: Vec<usize>,
    layers: Vec<LayerPayload>,
}

pub fn save_checkpoint(net: &DenseNet, path: impl AsRef<Path>) -> Result<()> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        seed: net.seed(),
        widths: net.widths().to_vec(),
        layers: net
            .layers()
            .iter()
            .map(|l| LayerPayload {
                rows: l.weights.rows(),
                cols: l.weights.cols(),
                weights: l.weights.as_slice().to_vec(),
                bias: l.bias.clone(),
            })
            .collect(),
    };
    let text = serde_json::to_string(&file)?;
    std::fs::write(path.as_ref(), text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DenseNet> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Corrupt(format!(
            "unsupported checkpoint format {:?}",
            file.format
        )));
    }
    let layers = file
        .layers
        .into_iter()
        .map(|l| {
            Ok(Dense {
                weights: Matrix::from_vec(l.rows, l.cols, l.weights)?,
                bias: l.bias,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let net = DenseNet::from_layers(layers, file.seed)?;
    if net.widths() != file.widths.as_slice() {
        return Err(Error::Corrupt(format!(
            "declared widths {:?} disagree with layer payloads {:?}",
            file.widths,
            net.widths()
        )));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autonet::init_net;

    #[test]
    fn roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let net = init_net(&[2, 7, 3, 2], 99).unwrap();
        save_checkpoint(&net, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), net);
    }

    #[test]
    fn rejects_foreign_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        std::fs::write(&path, r#"{"format":"other","seed":0,"widths":[1,1],"layers":[]}"#).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Corrupt(_))));
    }
}
