//! Topological regularization toward features of networks that generalized
//! well on other tasks.

use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::autonet::{adam_step, cross_entropy, ActivationStats, AdamState, DenseNet, Matrix, TrainConfig};
use crate::error::{Error, Result};
use crate::estimators::{MetaRecord, Standardizer};
use crate::rng::{label_key, rng_from};
use crate::topofeat::{aggregate, feature_backward, ExtractionConfig, Family, PointSetBundle, TopoFeatureVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    pub lambda: f64,
    /// Bank entries drawn at every step.
    pub sample_size: usize,
    /// Closest sampled entries averaged into the loss.
    pub min_k: usize,
    pub tau_corr: f64,
    pub test_threshold: f64,
    pub gap_threshold: f64,
    /// Families whose components receive gradient.
    pub families: Vec<Family>,
    pub seed: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            lambda: 0.05,
            sample_size: 25,
            min_k: 5,
            tau_corr: 0.6,
            test_threshold: 0.99,
            gap_threshold: 0.02,
            families: vec![Family::HMu, Family::HSigma],
            seed: 0,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.min_k == 0 || self.min_k > self.sample_size {
            return Err(Error::Config(format!(
                "need 1 <= min_k <= sample size, got {} and {}",
                self.min_k, self.sample_size
            )));
        }
        if !(0.0..=1.0).contains(&self.tau_corr) {
            return Err(Error::Config(format!(
                "correlation threshold {} outside [0, 1]",
                self.tau_corr
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub task_id: String,
    pub test_acc: f64,
    pub perf_gap: f64,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopoBank {
    pub layout_hash: String,
    /// Task the bank was built for; never present among the entries.
    pub current_task: String,
    pub entries: Vec<BankEntry>,
    pub sigma: Vec<f64>,
    pub mask: Vec<bool>,
}

const BANK_FORMAT: &str = "nettopo-bank-v1";

#[derive(Serialize, Deserialize)]
struct BankFile {
    format: String,
    #[serde(flatten)]
    bank: TopoBank,
}

impl TopoBank {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(&BankFile {
            format: BANK_FORMAT.into(),
            bank: self.clone(),
        })?;
        std::fs::write(path.as_ref(), text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Loads a bank, refusing one built for a different feature layout.
    pub fn load(path: impl AsRef<Path>, expected_layout_hash: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        let file: BankFile = serde_json::from_str(&text)?;
        if file.format != BANK_FORMAT {
            return Err(Error::Corrupt(format!("unsupported bank format {:?}", file.format)));
        }
        if file.bank.layout_hash != expected_layout_hash {
            return Err(Error::LayoutMismatch {
                expected: expected_layout_hash.to_string(),
                found: file.bank.layout_hash,
            });
        }
        let d = file.bank.sigma.len();
        if file.bank.mask.len() != d || file.bank.entries.iter().any(|e| e.features.len() != d) {
            return Err(Error::Corrupt("bank vectors disagree in length".into()));
        }
        Ok(file.bank)
    }
}

/// Pearson correlation; zero when either side has no variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa.sqrt() * sbb.sqrt())
    }
}

/// Components whose correlation with test accuracy reaches `tau_corr` in
/// absolute value.
pub fn correlation_mask(records: &[MetaRecord], tau_corr: f64) -> Result<Vec<bool>> {
    if records.len() < 2 {
        return Err(Error::InvalidInput(
            "correlation mask needs at least two records".into(),
        ));
    }
    let acc: Vec<f64> = records.iter().map(|r| r.test_acc).collect();
    if acc.iter().all(|&a| a == acc[0]) {
        return Err(Error::InvalidInput("test accuracy is constant across records".into()));
    }
    let d = records[0].features.len();
    if records.iter().any(|r| r.features.len() != d) {
        return Err(Error::Shape("records differ in feature length".into()));
    }
    let mut col = vec![0.0; records.len()];
    Ok((0..d)
        .map(|j| {
            records.iter().zip(col.iter_mut()).for_each(|(r, c)| *c = r.features[j]);
            if col.iter().all(|&v| v == col[0]) {
                return false;
            }
            pearson(&col, &acc).abs() >= tau_corr
        })
        .collect())
}

/// Admits well-generalizing records of other tasks. Deviations and the
/// mask come from every record of the other tasks.
pub fn build_bank(records: &[MetaRecord], current_task: &str, config: &MetaConfig) -> Result<TopoBank> {
    config.validate()?;
    let others: Vec<MetaRecord> = records.iter().filter(|r| r.task_id != current_task).cloned().collect();
    let first = others
        .first()
        .ok_or_else(|| Error::Empty(format!("no records from tasks other than {current_task}")))?;
    if let Some(bad) = others.iter().find(|r| r.layout_hash != first.layout_hash) {
        return Err(Error::LayoutMismatch {
            expected: first.layout_hash.clone(),
            found: bad.layout_hash.clone(),
        });
    }
    let sigma = Standardizer::fit(others.iter().map(|r| r.features.as_slice()))?.std;
    let mask = correlation_mask(&others, config.tau_corr)?
        .into_iter()
        .zip(&sigma)
        .map(|(m, s)| m && *s > 0.0)
        .collect();
    let entries: Vec<BankEntry> = others
        .iter()
        .filter(|r| r.test_acc >= config.test_threshold && r.perf_gap() <= config.gap_threshold)
        .map(|r| BankEntry {
            task_id: r.task_id.clone(),
            test_acc: r.test_acc,
            perf_gap: r.perf_gap(),
            features: r.features.clone(),
        })
        .collect();
    if entries.is_empty() {
        return Err(Error::Empty(format!(
            "no record of another task passes test >= {} and gap <= {}",
            config.test_threshold, config.gap_threshold
        )));
    }
    Ok(TopoBank {
        layout_hash: first.layout_hash.clone(),
        current_task: current_task.to_string(),
        entries,
        sigma,
        mask,
    })
}

/// `(1/|t|)·Σ_j mask_j·|t_j − s_j|/σ_j`, skipping components with `σ_j = 0`.
pub fn weighted_distance(t: &[f64], s: &[f64], bank: &TopoBank) -> Result<f64> {
    if t.len() != bank.sigma.len() || s.len() != bank.sigma.len() {
        return Err(Error::LayoutMismatch {
            expected: format!("{} components", bank.sigma.len()),
            found: format!("{} and {}", t.len(), s.len()),
        });
    }
    let sum: f64 = (0..t.len())
        .filter(|&j| bank.mask[j] && bank.sigma[j] > 0.0)
        .map(|j| (t[j] - s[j]).abs() / bank.sigma[j])
        .sum();
    Ok(sum / t.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopoLoss {
    pub loss: f64,
    /// Gradient on the feature vector, zero outside the optimized families.
    pub grad: Vec<f64>,
    /// Bank indices averaged into the loss.
    pub selected: Vec<usize>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss against a fixed subset of bank entries.
pub fn topo_loss_on(t: &TopoFeatureVector, bank: &TopoBank, config: &MetaConfig, subset: &[usize]) -> Result<TopoLoss> {
    if t.layout.hash() != bank.layout_hash {
        return Err(Error::LayoutMismatch {
            expected: bank.layout_hash.clone(),
            found: t.layout.hash().to_string(),
        });
    }
    if subset.is_empty() {
        return Err(Error::Empty("no bank entries to compare against".into()));
    }
    let mut dist = subset
        .iter()
        .map(|&i| {
            let e = bank
                .entries
                .get(i)
                .ok_or_else(|| Error::InvalidInput(format!("bank index {i} out of range")))?;
            Ok((weighted_distance(&t.values, &e.features, bank)?, i))
        })
        .collect::<Result<Vec<_>>>()?;
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let k = config.min_k.min(dist.len());
    let chosen = &dist[..k];
    let loss = chosen.iter().map(|d| d.0).sum::<f64>() / k as f64;

    let allowed = t.layout.family_mask(&config.families);
    let n = t.len() as f64;
    let mut grad = vec![0.0; t.len()];
    for &(_, i) in chosen {
        let e = &bank.entries[i].features;
        for j in 0..t.len() {
            if allowed[j] && bank.mask[j] && bank.sigma[j] > 0.0 {
                grad[j] += sign(t.values[j] - e[j]) / (bank.sigma[j] * n);
            }
        }
    }
    grad.iter_mut().for_each(|g| *g /= k as f64);
    Ok(TopoLoss {
        loss,
        grad,
        selected: chosen.iter().map(|d| d.1).collect(),
    })
}

/// Draws `sample_size` entries and averages the `min_k` closest distances.
pub fn topo_loss<R: rand::Rng + ?Sized>(
    t: &TopoFeatureVector,
    bank: &TopoBank,
    config: &MetaConfig,
    rng: &mut R,
) -> Result<TopoLoss> {
    if bank.is_empty() {
        return Err(Error::Empty("topological bank".into()));
    }
    let mut subset = sample(rng, bank.len(), config.sample_size.min(bank.len())).into_vec();
    subset.sort_unstable();
    topo_loss_on(t, bank, config, &subset)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetaLosses {
    pub conv: f64,
    pub tda: f64,
    pub total: f64,
}

/// Everything one meta-training run needs besides the network.
pub struct MetaRun<'a> {
    pub bank: &'a TopoBank,
    pub meta: &'a MetaConfig,
    pub extraction: &'a ExtractionConfig,
    pub train: &'a TrainConfig,
}

/// Features of `net` on `x` are pulled toward the bank: one Adam step on
/// `L_conv + lambda·L_tda`. Statistics come from the same batch.
pub fn meta_train_step(
    net: &mut DenseNet,
    x: &Matrix,
    labels: &[usize],
    run: &MetaRun<'_>,
    state: &mut AdamState,
    step: u64,
) -> Result<MetaLosses> {
    let trace = net.trace(x)?;
    let (conv, grad_logits) = cross_entropy(trace.logits(), labels)?;
    if !conv.is_finite() {
        return Err(Error::NonFinite(format!("training loss at step {}", step + 1)));
    }
    let mut grads = net.backward_from_trace(&trace, Some(&grad_logits), None)?;

    let stats = ActivationStats::from_trace(&trace);
    let bundle = PointSetBundle::build(net, &stats, run.extraction)?;
    let layout = Arc::new(bundle.layout(run.extraction.g_mode));
    let features = aggregate(&bundle, &layout)?;
    let mut rng = rng_from(run.meta.seed, &[label_key("bank-sample"), step]);
    let tl = topo_loss(&features, run.bank, run.meta, &mut rng)?;
    let lambda = run.meta.lambda;
    if lambda != 0.0 {
        let upstream: Vec<f64> = tl.grad.iter().map(|g| g * lambda).collect();
        let fg = feature_backward(&bundle, &layout, &upstream)?;
        grads.add_assign(&fg.to_parameter_gradients(net, Some(&trace))?)?;
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite(format!("gradients at step {}", step + 1)));
    }
    adam_step(net, &grads, state, run.train);
    Ok(MetaLosses {
        conv,
        tda: tl.loss,
        total: conv + lambda * tl.loss,
    })
}

/// Full-batch meta-training for `steps` steps.
pub fn meta_train(
    net: &mut DenseNet,
    x: &Matrix,
    labels: &[usize],
    run: &MetaRun<'_>,
    steps: u32,
) -> Result<Vec<MetaLosses>> {
    run.meta.validate()?;
    run.train.validate()?;
    let mut state = AdamState::new(net);
    (0..steps)
        .map(|s| meta_train_step(net, x, labels, run, &mut state, u64::from(s)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::ModelState;
    use crate::topofeat::GMode;

    fn rec(task: &str, test: f64, train: f64, features: Vec<f64>) -> MetaRecord {
        MetaRecord {
            task_id: task.into(),
            arch_id: "a".into(),
            seed_id: 0,
            model_state: ModelState::Trained,
            train_acc: train,
            test_acc: test,
            layout_hash: "h".into(),
            features,
        }
    }

    fn bank(sigma: Vec<f64>, mask: Vec<bool>, entries: Vec<Vec<f64>>) -> TopoBank {
        TopoBank {
            layout_hash: "h".into(),
            current_task: "c".into(),
            entries: entries
                .into_iter()
                .map(|features| BankEntry {
                    task_id: "o".into(),
                    test_acc: 1.0,
                    perf_gap: 0.0,
                    features,
                })
                .collect(),
            sigma,
            mask,
        }
    }

    #[test]
    fn admission_rules() {
        let records = vec![
            rec("other", 0.995, 1.0, vec![1.0, 0.0]),
            rec("other", 0.97, 0.98, vec![0.0, 1.0]),
            rec("cur", 1.0, 1.0, vec![2.0, 2.0]),
            rec("third", 0.5, 0.6, vec![0.5, 0.5]),
        ];
        let b = build_bank(&records, "cur", &MetaConfig::default()).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.entries[0].test_acc, 0.995);
        assert!(b.entries.iter().all(|e| e.task_id != "cur"));
        let strict = MetaConfig {
            test_threshold: 0.999,
            ..MetaConfig::default()
        };
        assert!(build_bank(&records, "cur", &strict).is_err());
    }

    #[test]
    fn mask_examples() {
        let r = |a: f64, f: Vec<f64>| rec("t", a, 1.0, f);
        let records = vec![
            r(0.2, vec![0.2, 3.0, -0.2]),
            r(0.5, vec![0.5, 3.0, -0.5]),
            r(0.9, vec![0.9, 3.0, -0.9]),
        ];
        assert_eq!(correlation_mask(&records, 0.6).unwrap(), vec![true, false, true]);
        let flat = vec![r(0.5, vec![1.0]), r(0.5, vec![2.0])];
        assert!(correlation_mask(&flat, 0.6).is_err());
    }

    #[test]
    fn distance_examples() {
        let b = bank(vec![1.0, 2.0], vec![true, true], vec![vec![0.0, 0.0]]);
        assert_eq!(weighted_distance(&[1.0, 4.0], &[0.0, 0.0], &b).unwrap(), 1.5);
        assert_eq!(weighted_distance(&[1.0, 4.0], &[1.0, 4.0], &b).unwrap(), 0.0);
        let off = bank(vec![1.0, 2.0], vec![false, false], vec![]);
        assert_eq!(weighted_distance(&[1.0, 4.0], &[0.0, 0.0], &off).unwrap(), 0.0);
        let zero_sigma = bank(vec![0.0, 2.0], vec![true, true], vec![]);
        assert_eq!(weighted_distance(&[1.0, 4.0], &[0.0, 0.0], &zero_sigma).unwrap(), 1.0);
    }

    #[test]
    fn single_entry_loss_is_the_distance() {
        let layout = Arc::new(ExtractionConfig::default().layout_for(&[1, 1], GMode::Ph));
        let d = layout.len();
        let mut b = bank(vec![1.0; d], vec![true; d], vec![vec![0.5; d]]);
        b.layout_hash = layout.hash().to_string();
        let t = TopoFeatureVector::new(vec![1.0; d], layout.clone()).unwrap();
        let cfg = MetaConfig {
            min_k: 1,
            families: Family::ALL.to_vec(),
            ..MetaConfig::default()
        };
        let tl = topo_loss(&t, &b, &cfg, &mut rng_from(0, &[])).unwrap();
        assert_eq!(
            tl.loss,
            weighted_distance(&t.values, &b.entries[0].features, &b).unwrap()
        );
        assert!(tl.grad.iter().all(|&g| g == 1.0 / d as f64));

        let same = TopoFeatureVector::new(vec![0.5; d], layout).unwrap();
        let tl = topo_loss(&same, &b, &cfg, &mut rng_from(0, &[])).unwrap();
        assert_eq!(tl.loss, 0.0);
        assert!(tl.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn bank_file_checks_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.json");
        let b = bank(vec![1.0, 0.5], vec![true, false], vec![vec![0.25, 1.0]]);
        b.save(&path).unwrap();
        assert_eq!(TopoBank::load(&path, "h").unwrap(), b);
        assert!(matches!(TopoBank::load(&path, "x"), Err(Error::LayoutMismatch { .. })));
    }
}
