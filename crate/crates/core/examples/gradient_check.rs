//! Backpropagating a linear function of the features to the weights,
//! checked against central finite differences with activation statistics
//! frozen.

use std::sync::Arc;

use nettopo::autonet::{init_net, ActivationStats};
use nettopo::synthdata::{generate, Generator, TaskSpec};
use nettopo::topofeat::{
    aggregate, characterize_with_stats, feature_backward, ExtractionConfig, Family, GMode, PointSetBundle,
};

fn main() -> nettopo::Result<()> {
    let mut spec = TaskSpec::new(Generator::Circles, 0);
    spec.samples_per_split = 64;
    let data = generate(&spec)?;
    let x = data.train.matrix();
    let net = init_net(&[2, 8, 2], 5)?;
    let config = ExtractionConfig {
        g_mode: GMode::Ph,
        ..Default::default()
    };
    let stats = ActivationStats::from_trace(&net.trace(&x)?);
    let bundle = PointSetBundle::build(&net, &stats, &config)?;
    let layout = Arc::new(bundle.layout(GMode::Ph));
    let t = aggregate(&bundle, &layout)?;
    let weight_fams = layout.family_mask(&[
        Family::A,
        Family::APrime,
        Family::ADouble,
        Family::I,
        Family::IPrime,
        Family::IDouble,
    ]);
    let upstream: Vec<f64> = (0..t.len())
        .map(|j| {
            if weight_fams[j] {
                ((j % 7) as f64 - 3.0) * 0.1
            } else {
                0.0
            }
        })
        .collect();
    let analytic = feature_backward(&bundle, &layout, &upstream)?;

    let objective = |w: &nettopo::autonet::DenseNet| -> nettopo::Result<f64> {
        let v = characterize_with_stats(w, &stats, &config)?;
        Ok(v.values.iter().zip(&upstream).map(|(a, b)| a * b).sum())
    };
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for layer in 0..net.depth() {
        let (rows, cols) = net.layers()[layer].weights.shape();
        for (r, c) in (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))) {
            let mut plus = net.clone();
            plus.layers_mut()[layer].weights[(r, c)] += h;
            let mut minus = net.clone();
            minus.layers_mut()[layer].weights[(r, c)] -= h;
            let fd = (objective(&plus)? - objective(&minus)?) / (2.0 * h);
            let an = analytic.weights[layer][(r, c)];
            let rel = (an - fd).abs() / fd.abs().max(an.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    println!("max relative error over {} weights: {worst:.2e}", net.param_count());
    Ok(())
}
