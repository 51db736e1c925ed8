//! Predictors fitted on topological feature records: model-state kNN,
//! LASSO regressors for test accuracy and performance gap, and the
//! fine-tuning model used for pretrained-model selection.

mod lasso;
mod records;
mod tasksim;

pub use lasso::{lasso_alpha_max, lasso_fit, lasso_fit_with, LassoConfig, LassoModel};
pub use records::{read_records, write_records, MetaRecord, ModelState};
pub use tasksim::{fit_finetune, select_model, task_delta, FinetuneModel, SimRecord};

use serde::{Deserialize, Serialize};

use crate::autonet::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Neighbours for model-state classification.
    pub k: usize,
    pub alpha: f64,
    /// Records below this training accuracy are not used to fit the
    /// accuracy and gap regressors.
    pub train_threshold: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            k: 3,
            alpha: 0.01,
            train_threshold: 0.98,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.train_threshold) {
            return Err(Error::Config(format!(
                "training threshold must lie in [0, 1], got {}",
                self.train_threshold
            )));
        }
        Ok(())
    }
}

/// Componentwise z-scoring with population statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut iter = rows.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::Empty("standardizer fitting set".into()))?;
        let d = first.len();
        let mut rows = vec![first];
        for r in iter {
            if r.len() != d {
                return Err(Error::Shape(format!(
                    "row of length {} among rows of length {d}",
                    r.len()
                )));
            }
            rows.push(r);
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in &rows {
            mean.iter_mut().zip(*r).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in &rows {
            for ((s, v), m) in var.iter_mut().zip(*r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .enumerate()
            .map(|(j, s)| {
                if rows.iter().all(|r| r[j] == rows[0][j]) {
                    0.0
                } else {
                    (s / n).sqrt()
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn transform(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.len() {
            return Err(Error::Shape(format!(
                "row of length {} for a standardizer of length {}",
                row.len(),
                self.len()
            )));
        }
        Ok(row
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect())
    }
}

pub fn fit_standardizer(records: &[MetaRecord]) -> Result<Standardizer> {
    check_same_layout(records)?;
    Standardizer::fit(records.iter().map(|r| r.features.as_slice()))
}

fn check_same_layout(records: &[MetaRecord]) -> Result<()> {
    if let Some(first) = records.first() {
        if let Some(bad) = records.iter().find(|r| r.layout_hash != first.layout_hash) {
            return Err(Error::LayoutMismatch {
                expected: first.layout_hash.clone(),
                found: bad.layout_hash.clone(),
            });
        }
    }
    Ok(())
}

fn check_query(query_hash: &str, records: &[MetaRecord]) -> Result<()> {
    check_same_layout(records)?;
    match records.first() {
        Some(r) if r.layout_hash != query_hash => Err(Error::LayoutMismatch {
            expected: r.layout_hash.clone(),
            found: query_hash.to_string(),
        }),
        _ => Ok(()),
    }
}

/// Majority state among the `k` nearest records (Euclidean distance after
/// standardization). Among tied majority states the one with the closest
/// representative wins.
pub fn knn_state(
    query: &[f64],
    query_hash: &str,
    records: &[MetaRecord],
    standardizer: &Standardizer,
    k: usize,
) -> Result<ModelState> {
    if records.is_empty() {
        return Err(Error::Empty("kNN reference records".into()));
    }
    if k == 0 {
        return Err(Error::InvalidInput("k must be >= 1".into()));
    }
    check_query(query_hash, records)?;
    let q = standardizer.transform(query)?;
    let mut dist: Vec<(f64, usize)> = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let z = standardizer.transform(&r.features)?;
            Ok((z.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
        })
        .collect::<Result<_>>()?;
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let nearest = &dist[..k.min(dist.len())];
    let mut votes = [0usize; 3];
    for &(_, i) in nearest {
        votes[records[i].model_state.index()] += 1;
    }
    let top = *votes.iter().max().expect("three states");
    let winner = nearest
        .iter()
        .map(|&(_, i)| records[i].model_state)
        .find(|s| votes[s.index()] == top)
        .expect("a voted state exists");
    Ok(winner)
}

/// A LASSO regressor on standardized features whose predictions are
/// clamped to the accuracy range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyModel {
    pub standardizer: Standardizer,
    pub lasso: LassoModel,
}

impl AccuracyModel {
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        let z = self.standardizer.transform(features)?;
        Ok(self.lasso.predict(&z)?.clamp(0.0, 1.0))
    }
}

fn fit_filtered(
    records: &[MetaRecord],
    standardizer: &Standardizer,
    config: &EstimatorConfig,
    target: impl Fn(&MetaRecord) -> f64,
) -> Result<AccuracyModel> {
    config.validate()?;
    check_same_layout(records)?;
    let kept: Vec<&MetaRecord> = records
        .iter()
        .filter(|r| r.train_acc >= config.train_threshold)
        .collect();
    if kept.is_empty() {
        return Err(Error::Empty(format!(
            "no record reaches the training threshold {}",
            config.train_threshold
        )));
    }
    let rows = kept
        .iter()
        .map(|r| standardizer.transform(&r.features))
        .collect::<Result<Vec<_>>>()?;
    let x = Matrix::from_rows(&rows)?;
    let y: Vec<f64> = kept.iter().map(|r| target(r)).collect();
    Ok(AccuracyModel {
        standardizer: standardizer.clone(),
        lasso: lasso_fit(&x, &y, config.alpha)?,
    })
}

/// Test-accuracy regressor fitted on records above the training threshold.
pub fn fit_test_acc(
    records: &[MetaRecord],
    standardizer: &Standardizer,
    config: &EstimatorConfig,
) -> Result<AccuracyModel> {
    fit_filtered(records, standardizer, config, |r| r.test_acc)
}

/// Performance-gap regressor fitted on records above the training threshold.
pub fn fit_perf_gap(
    records: &[MetaRecord],
    standardizer: &Standardizer,
    config: &EstimatorConfig,
) -> Result<AccuracyModel> {
    fit_filtered(records, standardizer, config, MetaRecord::perf_gap)
}
