mod common;

use std::sync::Arc;

use proptest::prelude::*;

use nettopo::autonet::{init_net, ActivationStats, Dense, DenseNet, Matrix};
use nettopo::synthdata::Generator;
use nettopo::topofeat::{
    characterize, characterize_full, characterize_with_stats, feature_backward, Base, ExtractionConfig, Family,
    FeatureLayout, GMode,
};

fn widths() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(2usize..9, 1..3).prop_map(|hidden| {
        let mut w = vec![2];
        w.extend(hidden);
        w.push(2);
        w
    })
}

fn g_mode() -> impl Strategy<Value = GMode> {
    prop::sample::select(GMode::ALL.to_vec())
}

/// Reorders the nodes of hidden activation layer `layer` (1-based).
fn permute_hidden(net: &DenseNet, layer: usize, perm: &[usize]) -> DenseNet {
    let mut layers: Vec<Dense> = net.layers().to_vec();
    let inc = &net.layers()[layer - 1];
    let (rows, cols) = inc.weights.shape();
    let mut w = Matrix::zeros(rows, cols);
    for r in 0..rows {
        for (new, &old) in perm.iter().enumerate() {
            w[(r, new)] = inc.weights[(r, old)];
        }
    }
    layers[layer - 1] = Dense {
        weights: w,
        bias: perm.iter().map(|&old| inc.bias[old]).collect(),
    };
    let out = &net.layers()[layer];
    let (rows, cols) = out.weights.shape();
    let mut w = Matrix::zeros(rows, cols);
    for (new, &old) in perm.iter().enumerate() {
        for c in 0..cols {
            w[(new, c)] = out.weights[(old, c)];
        }
    }
    layers[layer] = Dense {
        weights: w,
        bias: out.bias.clone(),
    };
    DenseNet::from_layers(layers, net.seed()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn extraction_is_deterministic(w in widths(), seed in 0u64..500, g in g_mode()) {
        let net = init_net(&w, seed).unwrap();
        let (x, _) = common::batch(Generator::Moons, 24, seed);
        let config = ExtractionConfig { g_mode: g, ..Default::default() };
        let a = characterize(&net, &x, &config).unwrap();
        let b = characterize(&net, &x, &config).unwrap();
        prop_assert_eq!(a.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(a.layout.len(), a.values.len());
        prop_assert_eq!(a.layout.as_ref(), &config.layout_for(&w, g));
    }

    #[test]
    fn layout_descriptor_roundtrips(w in widths(), g in g_mode(), count in 1usize..20, size in 1usize..20) {
        let config = ExtractionConfig { subset_count: count, subset_size: size, ..Default::default() };
        let layout = config.layout_for(&w, g);
        let back = FeatureLayout::parse_descriptor(&layout.descriptor()).unwrap();
        prop_assert_eq!(back.hash(), layout.hash());
        prop_assert_eq!(&back, &layout);
    }

    #[test]
    fn both_projects_onto_single_modes(w in widths(), seed in 0u64..500) {
        let net = init_net(&w, seed).unwrap();
        let (x, _) = common::batch(Generator::Circles, 16, seed);
        let both = characterize(&net, &x, &ExtractionConfig::default()).unwrap();
        for g in [GMode::Ph, GMode::Noph] {
            let config = ExtractionConfig { g_mode: g, ..Default::default() };
            let direct = characterize(&net, &x, &config).unwrap();
            let projected = both.project(&direct.layout).unwrap();
            prop_assert_eq!(projected.values, direct.values);
        }
    }

    #[test]
    fn weight_families_scale_with_their_layer(w in widths(), seed in 0u64..500, a in 0.1f64..5.0) {
        let net = init_net(&w, seed).unwrap();
        let (x, _) = common::batch(Generator::Xor, 16, seed);
        let stats = net.forward(&x).unwrap().1;
        let config = ExtractionConfig { g_mode: GMode::Ph, ..Default::default() };
        let layer = seed as usize % net.depth();
        let mut scaled = net.clone();
        scaled.layers_mut()[layer].weights.scale(a);
        let t0 = characterize_with_stats(&net, &stats, &config).unwrap();
        let t1 = characterize_with_stats(&scaled, &stats, &config).unwrap();
        for (j, c) in t0.layout.components().iter().enumerate() {
            if c.family.is_weight_family() && c.layer == layer && c.base == Base::Ph {
                prop_assert!((t0.values[j] * a - t1.values[j]).abs() <= 1e-9 * (1.0 + t1.values[j].abs()), "{}", c.name);
            }
        }
    }

    #[test]
    fn hidden_node_permutation_leaves_features_unchanged(w in widths(), seed in 0u64..500, g in g_mode()) {
        let net = init_net(&w, seed).unwrap();
        let layer = 1 + seed as usize % (w.len() - 2);
        let n = w[layer];
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = common::rng(seed);
        for i in (1..n).rev() {
            perm.swap(i, rand::Rng::random_range(&mut rng, 0..=i));
        }
        let permuted = permute_hidden(&net, layer, &perm);
        let (x, _) = common::batch(Generator::Spirals, 20, seed);
        // Blocks cover the whole matrix, so the subsets map through the permutation trivially.
        let config = ExtractionConfig { g_mode: g, subset_size: 16, ..Default::default() };
        let a = characterize(&net, &x, &config).unwrap();
        let b = characterize(&permuted, &x, &config).unwrap();
        for ((u, v), c) in a.values.iter().zip(&b.values).zip(a.layout.components()) {
            prop_assert!((u - v).abs() <= 1e-9 * (1.0 + u.abs()), "{}: {u} vs {v}", c.name);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn feature_backward_matches_finite_differences(seed in 0u64..500, g in g_mode()) {
        let net = init_net(&[2, 6, 2], seed).unwrap();
        let (x, _) = common::batch(Generator::Moons, 32, seed);
        let config = ExtractionConfig { g_mode: g, ..Default::default() };
        let ch = characterize_full(&net, &x, &config).unwrap();
        let stats: &ActivationStats = &ch.stats;
        let layout = Arc::clone(&ch.features.layout);
        let mask = layout.family_mask(&Family::ALL.iter().copied().filter(|f| f.is_weight_family()).collect::<Vec<_>>());
        let upstream: Vec<f64> = (0..layout.len()).map(|j| if mask[j] { ((j * 37 % 11) as f64 - 5.0) * 0.1 } else { 0.0 }).collect();
        let grad = feature_backward(&ch.bundle, &layout, &upstream).unwrap();
        let objective = |n: &DenseNet| -> f64 {
            let t = characterize_with_stats(n, stats, &config).unwrap();
            t.values.iter().zip(&upstream).map(|(a, b)| a * b).sum()
        };
        for layer in 0..net.depth() {
            let (rows, cols) = net.layers()[layer].weights.shape();
            for (r, c) in (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))) {
                let fd = common::central_diff(|v| {
                    let mut n = net.clone();
                    n.layers_mut()[layer].weights[(r, c)] = v;
                    objective(&n)
                }, net.layers()[layer].weights[(r, c)], 1e-6);
                let an = grad.weights[layer][(r, c)];
                prop_assert!(common::rel_err(an, fd, 1e-6) < 1e-3, "w{layer}[{r},{c}] {an} vs {fd}");
            }
        }
    }
}
