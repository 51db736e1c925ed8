use serde::{Deserialize, Serialize};

use super::lasso::{lasso_fit, LassoModel};
use crate::autonet::Matrix;
use crate::error::{Error, Result};
use crate::topofeat::TopoFeatureVector;

/// Mean features of a model fed batches of a new task minus its mean
/// features on batches of the task it was trained on.
pub fn task_delta(on_new: &[TopoFeatureVector], on_own: &[TopoFeatureVector]) -> Result<TopoFeatureVector> {
    let first = on_new
        .first()
        .or(on_own.first())
        .ok_or_else(|| Error::Empty("task delta needs feature batches".into()))?;
    if on_new.is_empty() || on_own.is_empty() {
        return Err(Error::Empty("task delta needs batches on both tasks".into()));
    }
    let layout = &first.layout;
    if let Some(bad) = on_new.iter().chain(on_own).find(|v| v.layout.hash() != layout.hash()) {
        return Err(Error::LayoutMismatch {
            expected: layout.hash().to_string(),
            found: bad.layout.hash().to_string(),
        });
    }
    let mean = |vs: &[TopoFeatureVector]| {
        let mut m = vec![0.0; layout.len()];
        for v in vs {
            m.iter_mut().zip(&v.values).for_each(|(a, b)| *a += b);
        }
        m.iter_mut().for_each(|a| *a /= vs.len() as f64);
        m
    };
    let delta = mean(on_new).iter().zip(mean(on_own)).map(|(a, b)| a - b).collect();
    TopoFeatureVector::new(delta, layout.clone())
}

/// A pretrained model (trained on `source_task`) fine-tuned on `target_task`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub source_task: String,
    pub target_task: String,
    pub arch_id: String,
    pub layout_hash: String,
    pub delta: Vec<f64>,
    /// Test accuracy after fine-tuning, averaged over small training sets.
    pub finetune_acc: f64,
}

impl SimRecord {
    pub fn involves(&self, task: &str) -> bool {
        self.source_task == task || self.target_task == task
    }
}

/// Predicts fine-tuned test accuracy from a topological shift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneModel {
    pub layout_hash: String,
    pub lasso: LassoModel,
}

impl FinetuneModel {
    pub fn predict_raw(&self, delta: &[f64]) -> Result<f64> {
        self.lasso.predict(delta)
    }

    pub fn predict(&self, delta: &[f64]) -> Result<f64> {
        Ok(self.predict_raw(delta)?.clamp(0.0, 1.0))
    }
}

pub fn fit_finetune(records: &[SimRecord], alpha: f64) -> Result<FinetuneModel> {
    let first = records
        .first()
        .ok_or_else(|| Error::Empty("fine-tuning records".into()))?;
    if let Some(bad) = records.iter().find(|r| r.layout_hash != first.layout_hash) {
        return Err(Error::LayoutMismatch {
            expected: first.layout_hash.clone(),
            found: bad.layout_hash.clone(),
        });
    }
    let rows: Vec<Vec<f64>> = records.iter().map(|r| r.delta.clone()).collect();
    let y: Vec<f64> = records.iter().map(|r| r.finetune_acc).collect();
    Ok(FinetuneModel {
        layout_hash: first.layout_hash.clone(),
        lasso: lasso_fit(&Matrix::from_rows(&rows)?, &y, alpha)?,
    })
}

/// The candidate with the highest predicted fine-tuned accuracy; ties go to
/// the smallest shift `|delta|`, then to the earlier candidate.
pub fn select_model<'a>(candidates: &'a [(String, Vec<f64>)], model: &FinetuneModel) -> Result<&'a str> {
    if candidates.is_empty() {
        return Err(Error::Empty("no candidate models".into()));
    }
    let mut best: Option<(f64, f64, &str)> = None;
    for (id, delta) in candidates {
        let score = model.predict_raw(delta)?;
        let norm = delta.iter().map(|v| v * v).sum::<f64>();
        let better = match best {
            None => true,
            Some((s, n, _)) => score > s || (score == s && norm < n),
        };
        if better {
            best = Some((score, norm, id));
        }
    }
    Ok(best.expect("nonempty").2)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::topofeat::{ExtractionConfig, FeatureLayout, GMode};

    fn layout() -> Arc<FeatureLayout> {
        Arc::new(ExtractionConfig::default().layout_for(&[1, 1], GMode::Ph))
    }

    fn vec_of(v: f64, l: &Arc<FeatureLayout>) -> TopoFeatureVector {
        TopoFeatureVector::new(vec![v; l.len()], l.clone()).unwrap()
    }

    #[test]
    fn delta_properties() {
        let l = layout();
        let a = [vec_of(1.0, &l), vec_of(3.0, &l)];
        let b = [vec_of(0.5, &l)];
        assert!(task_delta(&a, &a).unwrap().values.iter().all(|&v| v == 0.0));
        assert!(task_delta(&b, &[vec_of(0.25, &l)])
            .unwrap()
            .values
            .iter()
            .all(|&v| v == 0.25));
        let d1 = task_delta(&a, &b).unwrap();
        let d2 = task_delta(&b, &a).unwrap();
        assert!(d1.values.iter().zip(&d2.values).all(|(x, y)| *x == -*y));
        assert!(task_delta(&a, &[]).is_err());
    }

    #[test]
    fn selection_follows_the_fitted_model() {
        let rec = |d: f64, acc: f64| SimRecord {
            source_task: "s".into(),
            target_task: "t".into(),
            arch_id: "a".into(),
            layout_hash: "h".into(),
            delta: vec![d],
            finetune_acc: acc,
        };
        let model = fit_finetune(&[rec(0.0, 0.9), rec(1.0, 0.7), rec(2.0, 0.5)], 0.0).unwrap();
        // acc = 0.9 - 0.2 d
        assert!((model.predict(&[0.5]).unwrap() - 0.8).abs() < 1e-9);
        let cands = vec![("far".to_string(), vec![1.5]), ("near".to_string(), vec![0.0])];
        assert_eq!(select_model(&cands, &model).unwrap(), "near");
        assert_eq!(select_model(&cands[..1], &model).unwrap(), "far");
        assert!(select_model(&[], &model).is_err());
    }
}
