use super::{DenseNet, Gradients, TrainConfig};

/// First and second moment estimates for every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Gradients,
    v: Gradients,
    step: u64,
}

impl AdamState {
    pub fn new(net: &DenseNet) -> Self {
        Self {
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(net: &mut DenseNet, grads: &Gradients, state: &mut AdamState, config: &TrainConfig) {
    state.step += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let lr = config.learning_rate;
    let eps = config.epsilon;

    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };

    for (i, layer) in net.layers_mut().iter_mut().enumerate() {
        let params = layer.weights.as_mut_slice();
        let g = grads.weights[i].as_slice();
        let m = state.m.weights[i].as_mut_slice();
        let v = state.v.weights[i].as_mut_slice();
        for k in 0..params.len() {
            update(&mut params[k], g[k], &mut m[k], &mut v[k]);
        }
        for k in 0..layer.bias.len() {
            update(
                &mut layer.bias[k],
                grads.biases[i][k],
                &mut state.m.biases[i][k],
                &mut state.v.biases[i][k],
            );
        }
    }
}
