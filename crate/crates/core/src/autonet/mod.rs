//! A small fully-connected ReLU classifier with hand-written backprop.
//!
//! Layer `i` maps `h_i` (n × |h_i|) to `h_{i+1} = relu(h_i · W_i + b_i)`; the
//! last layer is linear and produces logits. Activation layers are numbered
//! from 0 (the inputs) to `L` (the logits), weight matrices from 0 to `L - 1`.

mod adam;
mod checkpoint;
mod matrix;
mod train;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT};
pub use matrix::Matrix;
pub use train::{accuracy, supervised_step, train, Schedule, TrainConfig, TrainLog};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

/// One affine layer. `weights` is `in × out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    widths: Vec<usize>,
    layers: Vec<Dense>,
    seed: u64,
}

/// Builds a network with weights and biases drawn uniformly from
/// `±1/√fan_in`, deterministic in `seed`.
pub fn init_net(widths: &[usize], seed: u64) -> Result<DenseNet> {
    if widths.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "a network needs at least two layer widths, got {}",
            widths.len()
        )));
    }
    if widths.contains(&0) {
        return Err(Error::InvalidInput(format!(
            "layer widths must be positive: {widths:?}"
        )));
    }
    let layers = widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut rng = rng_from(seed, &[i as u64]);
            let weights: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            let bias = (0..fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
            Dense {
                weights: Matrix::from_vec(fan_in, fan_out, weights).expect("sized above"),
                bias,
            }
        })
        .collect();
    Ok(DenseNet {
        widths: widths.to_vec(),
        layers,
        seed,
    })
}

impl DenseNet {
    /// Assembles a network from explicit layers, validating the shape chain.
    pub fn from_layers(layers: Vec<Dense>, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("a network needs at least one layer".into()));
        }
        let mut widths = vec![layers[0].weights.rows()];
        for (i, layer) in layers.iter().enumerate() {
            let (rows, cols) = layer.weights.shape();
            if rows != *widths.last().unwrap() {
                return Err(Error::Shape(format!(
                    "layer {i} expects {rows} inputs but the previous layer emits {}",
                    widths.last().unwrap()
                )));
            }
            if layer.bias.len() != cols {
                return Err(Error::Shape(format!(
                    "layer {i} has {cols} outputs but {} biases",
                    layer.bias.len()
                )));
            }
            if rows == 0 || cols == 0 {
                return Err(Error::InvalidInput(format!("layer {i} has an empty dimension")));
            }
            if !layer.weights.is_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
            widths.push(cols);
        }
        Ok(Self { widths, layers, seed })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    /// Number of weight matrices.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Full forward pass keeping every activation layer.
    pub fn trace(&self, x: &Matrix) -> Result<ForwardTrace> {
        if x.cols() != self.input_width() {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                x.cols(),
                self.input_width()
            )));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = activations[i].matmul(&layer.weights)?;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            if i + 1 < self.layers.len() {
                z.map_inplace(|v| v.max(0.0));
            }
            activations.push(z);
        }
        Ok(ForwardTrace { activations })
    }

    /// Logits plus the activation statistics of every layer.
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ActivationStats)> {
        let trace = self.trace(x)?;
        let stats = ActivationStats::from_trace(&trace);
        Ok((trace.logits().clone(), stats))
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let trace = self.trace(x)?;
        let logits = trace.logits();
        Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
    }

    /// Gradients of the mean cross-entropy on `(x, labels)` plus any `extra`
    /// parameter gradients supplied by the caller. Returns the loss as well.
    pub fn backward(&self, x: &Matrix, labels: &[usize], extra: Option<&Gradients>) -> Result<(f64, Gradients)> {
        let trace = self.trace(x)?;
        let (loss, grad_logits) = cross_entropy(trace.logits(), labels)?;
        let mut grads = self.backward_from_trace(&trace, Some(&grad_logits), None)?;
        if let Some(extra) = extra {
            grads.add_assign(extra)?;
        }
        Ok((loss, grads))
    }

    /// Backpropagates an upstream gradient on the logits and, optionally,
    /// gradients injected directly on activation layers (indexed `0..=L`;
    /// entry 0 is ignored).
    pub fn backward_from_trace(
        &self,
        trace: &ForwardTrace,
        grad_logits: Option<&Matrix>,
        activation_grads: Option<&[Option<Matrix>]>,
    ) -> Result<Gradients> {
        let depth = self.layers.len();
        if trace.activations.len() != depth + 1 {
            return Err(Error::Shape("trace does not belong to this network".into()));
        }
        if let Some(ag) = activation_grads {
            if ag.len() != depth + 1 {
                return Err(Error::Shape(format!(
                    "expected {} activation gradient slots, got {}",
                    depth + 1,
                    ag.len()
                )));
            }
        }
        let n = trace.activations[0].rows();
        let injected = |layer: usize| activation_grads.and_then(|ag| ag[layer].as_ref());

        let mut delta = match grad_logits {
            Some(g) => g.clone(),
            None => Matrix::zeros(n, self.output_width()),
        };
        if let Some(g) = injected(depth) {
            delta.add_assign(g)?;
        }
        let mut grads = Gradients::zeros_like(self);
        for i in (0..depth).rev() {
            let input = &trace.activations[i];
            grads.weights[i] = input.t_matmul(&delta)?;
            grads.biases[i] = (0..delta.cols())
                .map(|c| (0..delta.rows()).map(|r| delta[(r, c)]).sum())
                .collect();
            if i == 0 {
                break;
            }
            let mut upstream = delta.matmul_t(&self.layers[i].weights)?;
            if let Some(g) = injected(i) {
                upstream.add_assign(g)?;
            }
            for (u, &h) in upstream.as_mut_slice().iter_mut().zip(input.as_slice()) {
                if h <= 0.0 {
                    *u = 0.0;
                }
            }
            delta = upstream;
        }
        Ok(grads)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Every activation layer of one forward pass: inputs, post-ReLU hidden
/// layers and logits.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub activations: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Matrix {
        self.activations.last().expect("trace always holds the inputs")
    }
}

/// Per-node activation samples with their population mean and deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationStats {
    /// `mu[layer][node]`.
    pub mu: Vec<Vec<f64>>,
    /// `sigma[layer][node]`.
    pub sigma: Vec<Vec<f64>>,
    /// `activations[layer][node][sample]`.
    pub activations: Vec<Vec<Vec<f64>>>,
    n_samples: usize,
}

impl ActivationStats {
    pub fn from_trace(trace: &ForwardTrace) -> Self {
        let n = trace.activations[0].rows();
        let mut mu = Vec::with_capacity(trace.activations.len());
        let mut sigma = Vec::with_capacity(trace.activations.len());
        let mut activations = Vec::with_capacity(trace.activations.len());
        for layer in &trace.activations {
            let nodes: Vec<Vec<f64>> = (0..layer.cols()).map(|c| layer.column(c)).collect();
            let (m, s): (Vec<f64>, Vec<f64>) = nodes.iter().map(|v| mean_std(v)).unzip();
            mu.push(m);
            sigma.push(s);
            activations.push(nodes);
        }
        Self {
            mu,
            sigma,
            activations,
            n_samples: n,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_layers(&self) -> usize {
        self.mu.len()
    }

    pub fn width(&self, layer: usize) -> usize {
        self.mu[layer].len()
    }

    pub fn node(&self, layer: usize, node: usize) -> Result<&[f64]> {
        self.activations
            .get(layer)
            .and_then(|l| l.get(node))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidInput(format!("node ({layer}, {node}) is not tracked")))
    }

    /// Population covariance between two tracked nodes.
    pub fn covariance(&self, a: (usize, usize), b: (usize, usize)) -> Result<f64> {
        if self.n_samples < 2 {
            return Err(Error::InvalidInput(format!(
                "covariance needs at least two samples, have {}",
                self.n_samples
            )));
        }
        let va = self.node(a.0, a.1)?;
        let vb = self.node(b.0, b.1)?;
        Ok(covariance_with_means(va, self.mu[a.0][a.1], vb, self.mu[b.0][b.1]))
    }
}

pub(crate) fn covariance_with_means(a: &[f64], mean_a: f64, b: &[f64], mean_b: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - mean_a) * (y - mean_b)).sum::<f64>() / a.len() as f64
}

pub(crate) fn mean_std(v: &[f64]) -> (f64, f64) {
    if let Some(&first) = v.first() {
        if v.iter().all(|&x| x == first) {
            return (first, 0.0);
        }
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean softmax cross-entropy and its gradient `(softmax - onehot) / n`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (n, classes) = logits.shape();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} rows of logits", labels.len())));
    }
    if n == 0 {
        return Err(Error::Empty("cross-entropy over an empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidInput(format!("label {bad} outside [0, {classes})")));
    }
    let mut grad = Matrix::zeros(n, classes);
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[label];
        let g = grad.row_mut(r);
        for (c, gv) in g.iter_mut().enumerate() {
            *gv = (row[c] - log_z).exp() / n as f64;
        }
        g[label] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, grad))
}

/// Gradients with the same shapes as a network's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.weights.rows(), l.weights.cols()))
                .collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.weights.len() != other.weights.len() {
            return Err(Error::Shape("gradient depth mismatch".into()));
        }
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.add_assign(b)?;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            if a.len() != b.len() {
                return Err(Error::Shape("bias gradient length mismatch".into()));
            }
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        self.weights.iter_mut().for_each(|w| w.scale(k));
        self.biases.iter_mut().for_each(|b| b.iter_mut().for_each(|v| *v *= k));
    }

    /// All entries, weights first (layer by layer, row-major), then biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for w in &self.weights {
            out.extend_from_slice(w.as_slice());
        }
        for b in &self.biases {
            out.extend_from_slice(b);
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_net(&[2, 25, 25, 2], 9).unwrap();
        let b = init_net(&[2, 25, 25, 2], 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_net(&[2, 25, 25, 2], 10).unwrap());
        for layer in a.layers() {
            let bound = 1.0 / (layer.weights.rows() as f64).sqrt();
            assert!(layer.weights.as_slice().iter().all(|w| w.abs() <= bound));
            assert!(layer.bias.iter().all(|w| w.abs() <= bound));
        }
        let small = init_net(&[2, 2], 0).unwrap();
        assert_eq!(small.layers()[0].weights.shape(), (2, 2));
        assert_eq!(small.layers()[0].bias.len(), 2);
    }

    #[test]
    fn init_rejects_bad_widths() {
        assert!(init_net(&[2], 0).is_err());
        assert!(init_net(&[2, 0, 2], 0).is_err());
    }

    fn identity_net() -> DenseNet {
        let hidden = Dense {
            weights: Matrix::identity(2),
            bias: vec![0.0; 2],
        };
        let out = Dense {
            weights: Matrix::identity(2),
            bias: vec![0.0; 2],
        };
        DenseNet::from_layers(vec![hidden, out], 0).unwrap()
    }

    #[test]
    fn relu_clamps_and_stats_are_population() {
        let net = identity_net();
        let x = Matrix::from_rows(&[vec![-1.0, 2.0]]).unwrap();
        let trace = net.trace(&x).unwrap();
        assert_eq!(trace.activations[1].row(0), &[0.0, 2.0]);

        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let (_, stats) = net.forward(&x).unwrap();
        assert_eq!(stats.mu[1][0], 1.0);
        assert_eq!(stats.sigma[1][0], 1.0);
        assert_eq!(stats.n_layers(), 3);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_hidden_stats() {
        let net = identity_net();
        let x = Matrix::zeros(4, 2);
        let (_, stats) = net.forward(&x).unwrap();
        assert!(stats.mu[1].iter().chain(&stats.sigma[1]).all(|&v| v == 0.0));
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = identity_net();
        assert!(net.forward(&Matrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn covariance_examples() {
        let trace = ForwardTrace {
            activations: vec![
                Matrix::from_rows(&[vec![1.0, 5.0, -1.0], vec![2.0, 5.0, -2.0], vec![3.0, 5.0, -3.0]]).unwrap(),
            ],
        };
        let stats = ActivationStats::from_trace(&trace);
        assert!((stats.covariance((0, 0), (0, 0)).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(stats.covariance((0, 0), (0, 1)).unwrap(), 0.0);
        assert!((stats.covariance((0, 0), (0, 2)).unwrap() + 2.0 / 3.0).abs() < 1e-15);

        let single = ForwardTrace {
            activations: vec![Matrix::from_rows(&[vec![1.0]]).unwrap()],
        };
        assert!(ActivationStats::from_trace(&single).covariance((0, 0), (0, 0)).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let (loss, grad) = cross_entropy(&Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap(), &[0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((grad.row(0).iter().sum::<f64>()).abs() < 1e-15);

        let (loss, _) = cross_entropy(&Matrix::from_rows(&[vec![10.0, -10.0]]).unwrap(), &[0]).unwrap();
        assert!(loss < 1e-8);

        let logits = Matrix::from_rows(&[vec![0.3, -1.2, 2.0], vec![1.0, 1.5, -0.5]]).unwrap();
        let (_, grad) = cross_entropy(&logits, &[2, 0]).unwrap();
        for r in 0..2 {
            assert!(grad.row(r).iter().sum::<f64>().abs() < 1e-15);
        }
        assert!(cross_entropy(&logits, &[3, 0]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = init_net(&[2, 4, 2], 1).unwrap();
        let x = Matrix::from_rows(&[vec![0.5, -0.2], vec![0.1, 0.9]]).unwrap();
        let trace = net.trace(&x).unwrap();
        let g = net.backward_from_trace(&trace, None, None).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }
}
