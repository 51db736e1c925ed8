use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{adam_step, cross_entropy, AdamState, DenseNet, Matrix};
use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Passes over the shuffled training set.
    Epochs(u32),
    /// Optimizer steps, each on one batch.
    Steps(u32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// `None` trains on the full set every step.
    pub batch_size: Option<usize>,
    pub schedule: Schedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: Some(32),
            schedule: Schedule::Epochs(10),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Full-batch small-data procedure used for overfitting and fine-tuning.
    pub fn full_batch(steps: u32) -> Self {
        Self {
            batch_size: None,
            schedule: Schedule::Steps(steps),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.epsilon < 0.0 || self.epsilon.is_nan() {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub losses: Vec<f64>,
}

/// Forward, cross-entropy, backprop and one Adam update on a single batch.
pub fn supervised_step(
    net: &mut DenseNet,
    x: &Matrix,
    labels: &[usize],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<f64> {
    let trace = net.trace(x)?;
    let (loss, grad_logits) = cross_entropy(trace.logits(), labels)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("training loss at step {}", state.step() + 1)));
    }
    let grads = net.backward_from_trace(&trace, Some(&grad_logits), None)?;
    adam_step(net, &grads, state, config);
    Ok(loss)
}

/// Trains `net` in place with Adam on mean cross-entropy.
pub fn train(net: &mut DenseNet, x: &Matrix, labels: &[usize], config: &TrainConfig) -> Result<TrainLog> {
    config.validate()?;
    if x.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} samples but {} labels",
            x.rows(),
            labels.len()
        )));
    }
    if x.rows() == 0 {
        return Err(Error::Empty("training set".into()));
    }
    let mut state = AdamState::new(net);
    let mut log = TrainLog::default();
    let n = x.rows();
    let mut rng = rng_from(config.seed, &[0x7261_696e]);
    let mut order: Vec<usize> = (0..n).collect();

    let run_batch = |idx: &[usize], net: &mut DenseNet, state: &mut AdamState| -> Result<f64> {
        if idx.len() == n && idx.iter().enumerate().all(|(i, &j)| i == j) {
            supervised_step(net, x, labels, state, config)
        } else {
            let bx = x.select_rows(idx);
            let by: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            supervised_step(net, &bx, &by, state, config)
        }
    };

    match (config.schedule, config.batch_size) {
        (Schedule::Steps(steps), None) => {
            for _ in 0..steps {
                log.losses.push(run_batch(&order, net, &mut state)?);
            }
        }
        (Schedule::Steps(steps), Some(bs)) => {
            let mut cursor = n;
            for _ in 0..steps {
                if cursor + bs.min(n) > n {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                let end = (cursor + bs).min(n);
                let idx = order[cursor..end].to_vec();
                cursor = end;
                log.losses.push(run_batch(&idx, net, &mut state)?);
            }
        }
        (Schedule::Epochs(epochs), batch) => {
            let bs = batch.unwrap_or(n);
            for _ in 0..epochs {
                order.shuffle(&mut rng);
                for chunk in order.clone().chunks(bs) {
                    log.losses.push(run_batch(chunk, net, &mut state)?);
                }
            }
        }
    }
    Ok(log)
}

/// Fraction of rows whose arg-max logit equals the label.
pub fn accuracy(net: &DenseNet, x: &Matrix, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("accuracy over an empty set".into()));
    }
    let pred = net.predict(x)?;
    if pred.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            pred.len(),
            labels.len()
        )));
    }
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autonet::init_net;

    fn toy() -> (Matrix, Vec<usize>) {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                vec![s * (1.0 + (i as f64) * 0.01), 0.3 * ((i * 7) % 5) as f64 - 0.6]
            })
            .collect();
        let labels = (0..40).map(|i| i % 2).collect();
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn learns_a_separable_toy_problem() {
        let (x, y) = toy();
        let mut net = init_net(&[2, 8, 2], 3).unwrap();
        let cfg = TrainConfig {
            batch_size: Some(8),
            schedule: Schedule::Epochs(20),
            ..TrainConfig::default()
        };
        let log = train(&mut net, &x, &y, &cfg).unwrap();
        assert_eq!(log.losses.len(), 20 * 5);
        assert_eq!(accuracy(&net, &x, &y).unwrap(), 1.0);
    }

    #[test]
    fn training_is_deterministic() {
        let (x, y) = toy();
        let run = || {
            let mut net = init_net(&[2, 6, 2], 5).unwrap();
            train(&mut net, &x, &y, &TrainConfig::default()).unwrap();
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_invalid_config() {
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            beta2: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
