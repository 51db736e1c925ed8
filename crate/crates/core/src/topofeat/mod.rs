//! Topological characterization of dense networks.
//!
//! A network plus the activation statistics of a data set is broken into many
//! small point sets on the real line:
//!
//! * `A`/`I` (one set per source node): outgoing weights scaled by the
//!   node's mean activation, respectively the absolute value of the weights
//!   scaled by its deviation.
//! * `A1`/`I1` (one set per target node): incoming weights, each scaled by the
//!   statistics of its own source node.
//! * `A2`/`I2`: random `J × K` blocks of a weight matrix, scaled by the
//!   source-node statistics.
//! * `H_mu`/`H_sigma`: the mean and deviation of every node in a layer.
//! * `C`: covariances between one node's activations and partner nodes.
//!
//! Each set is summarized by `g` (see [`GMode`]); the summaries of a family
//! at one layer are reduced by their mean and standard deviation, except H
//! which is used as is. Every point remembers where it came from so that
//! gradients on the feature vector can be pushed back onto the weights (the
//! activation statistics scaling a weight are treated as constants) or onto
//! the statistics themselves (H family).

mod aggregate;
mod conv;
mod layout;

pub use aggregate::{aggregate, feature_backward, FeatureGradient};
pub use conv::{conv_extract, Tensor4};
pub use layout::{Base, BlockSpec, Component, Family, FeatureLayout, GMode, Reduction, TopoFeatureVector};

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::autonet::{covariance_with_means, ActivationStats, DenseNet, ForwardTrace, Matrix};
use crate::error::{Error, Result};
use crate::persistence::{dedup_points, zero_dim_deaths, DeathRecord, Deduped, PointSet1D};
use crate::rng::{label_key, rng_from};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovVariant {
    /// One set per node: covariances with partner nodes from other layers.
    AllNodes,
    /// One set per output node: covariances of every node in a layer with it.
    PerOutputClass,
}

impl fmt::Display for CovVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CovVariant::AllNodes => "all-nodes",
            CovVariant::PerOutputClass => "per-output-class",
        })
    }
}

impl FromStr for CovVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-nodes" => Ok(CovVariant::AllNodes),
            "per-output-class" => Ok(CovVariant::PerOutputClass),
            other => Err(Error::InvalidInput(format!("unknown covariance variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    pub g_mode: GMode,
    /// Number of random `J × K` blocks per weight matrix.
    pub subset_count: usize,
    /// Nodes per side of a random block (clipped to the layer width).
    pub subset_size: usize,
    pub cov_variant: CovVariant,
    /// Partner nodes per covariance set in the all-nodes variant.
    pub cov_cap: usize,
    pub seed: u64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            g_mode: GMode::Both,
            subset_count: 10,
            subset_size: 10,
            cov_variant: CovVariant::AllNodes,
            cov_cap: 50,
            seed: 0,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.subset_count == 0 || self.subset_size == 0 {
            return Err(Error::Config("random subset count and size must be >= 1".into()));
        }
        if self.cov_cap < 2 {
            return Err(Error::Config(format!(
                "covariance cap must be >= 2, got {}",
                self.cov_cap
            )));
        }
        Ok(())
    }

    /// Settings that change feature semantics; part of the layout hash.
    pub fn layout_tag(&self) -> String {
        match self.cov_variant {
            CovVariant::AllNodes => format!(
                "subsets={}x{} cov=all-nodes:{}",
                self.subset_count, self.subset_size, self.cov_cap
            ),
            CovVariant::PerOutputClass => {
                format!(
                    "subsets={}x{} cov=per-output-class",
                    self.subset_count, self.subset_size
                )
            }
        }
    }

    pub fn layout_for(&self, widths: &[usize], g_mode: GMode) -> FeatureLayout {
        FeatureLayout::dense(widths, g_mode, &self.layout_tag())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StatKind {
    Mu,
    Sigma,
}

/// Where a point came from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Provenance {
    /// A function of `w = W_layer[row, col]` alone (`w·s` or `|w·s|` with
    /// `s` a frozen statistic); `slope` is its derivative in `w`.
    Weight {
        layer: usize,
        row: usize,
        col: usize,
        slope: f64,
    },
    /// An activation statistic of node `node` in activation layer `layer`.
    Stat { layer: usize, node: usize, kind: StatKind },
    /// No gradient path.
    Constant,
}

/// One point set with per-point provenance and its deduplicated form.
#[derive(Clone, Debug, PartialEq)]
pub struct TaggedSet {
    pub points: Vec<f64>,
    pub provenance: Vec<Provenance>,
    dedup: Option<(Deduped, DeathRecord)>,
}

impl TaggedSet {
    pub fn new(points: Vec<f64>, provenance: Vec<Provenance>) -> Result<Self> {
        if points.len() != provenance.len() {
            return Err(Error::Shape("every point needs a provenance record".into()));
        }
        PointSet1D::new(points.clone())?;
        Ok(Self {
            points,
            provenance,
            dedup: None,
        })
    }

    fn weight_point(w: f64, layer: usize, row: usize, col: usize, scale: f64, abs: bool) -> (f64, Provenance) {
        let v = w * scale;
        let (point, slope) = if abs {
            // derivative of |w·s| is sign(w·s)·s, taken as 0 at the kink
            let sign = if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            };
            (v.abs(), sign * scale)
        } else {
            (v, scale)
        };
        (point, Provenance::Weight { layer, row, col, slope })
    }

    fn from_pairs(pairs: Vec<(f64, Provenance)>) -> Result<Self> {
        let (points, provenance) = pairs.into_iter().unzip();
        Self::new(points, provenance)
    }

    /// Deduplicated points with their persistence record; available once
    /// the set is part of a [`PointSetBundle`].
    pub fn deduped(&self) -> Option<&(Deduped, DeathRecord)> {
        self.dedup.as_ref()
    }

    fn finish(&mut self, seed: u64, keys: &[u64]) {
        let set = PointSet1D::new(self.points.clone()).expect("validated at construction");
        let deduped = dedup_points(&set, &mut rng_from(seed, keys));
        let record = zero_dim_deaths(&deduped.set);
        self.dedup = Some((deduped, record));
    }
}

/// Point sets of all families for one network and data set.
#[derive(Clone, Debug)]
pub struct PointSetBundle {
    widths: Vec<usize>,
    config: ExtractionConfig,
    /// Sets keyed by the layout's block order.
    blocks: Vec<(Family, usize, Vec<TaggedSet>)>,
    n_samples: usize,
}

/// Outgoing and incoming node sets of one weight matrix.
#[derive(Clone, Debug)]
pub struct NodeSets {
    pub a: Vec<TaggedSet>,
    pub i: Vec<TaggedSet>,
    pub a_prime: Vec<TaggedSet>,
    pub i_prime: Vec<TaggedSet>,
}

/// Random block sets of one weight matrix and the H sets of the activation
/// layer it produces.
#[derive(Clone, Debug)]
pub struct LayerSets {
    pub a_double: Vec<TaggedSet>,
    pub i_double: Vec<TaggedSet>,
    pub h_mu: TaggedSet,
    pub h_sigma: TaggedSet,
    /// The `(J_l, K_l)` index sets used for the random blocks.
    pub subsets: Vec<(Vec<usize>, Vec<usize>)>,
}

fn check_stats(net: &DenseNet, stats: &ActivationStats) -> Result<()> {
    if stats.n_layers() != net.depth() + 1 || (0..stats.n_layers()).any(|l| stats.width(l) != net.widths()[l]) {
        return Err(Error::Shape("activation statistics do not match the network".into()));
    }
    Ok(())
}

fn check_weight_layer(net: &DenseNet, layer: usize) -> Result<()> {
    if layer >= net.depth() {
        return Err(Error::InvalidInput(format!(
            "weight layer {layer} out of range (network has {})",
            net.depth()
        )));
    }
    Ok(())
}

/// `A`, `I`, `A1`, `I1` sets of weight matrix `layer`.
pub fn build_node_sets(net: &DenseNet, stats: &ActivationStats, layer: usize) -> Result<NodeSets> {
    check_weight_layer(net, layer)?;
    check_stats(net, stats)?;
    let w = &net.layers()[layer].weights;
    let (rows, cols) = w.shape();
    let mu = &stats.mu[layer];
    let sigma = &stats.sigma[layer];
    let outgoing = |abs: bool, scale: &[f64]| -> Result<Vec<TaggedSet>> {
        (0..rows)
            .map(|j| {
                TaggedSet::from_pairs(
                    (0..cols)
                        .map(|k| TaggedSet::weight_point(w[(j, k)], layer, j, k, scale[j], abs))
                        .collect(),
                )
            })
            .collect()
    };
    let incoming = |abs: bool, scale: &[f64]| -> Result<Vec<TaggedSet>> {
        (0..cols)
            .map(|j| {
                TaggedSet::from_pairs(
                    (0..rows)
                        .map(|k| TaggedSet::weight_point(w[(k, j)], layer, k, j, scale[k], abs))
                        .collect(),
                )
            })
            .collect()
    };
    Ok(NodeSets {
        a: outgoing(false, mu)?,
        i: outgoing(true, sigma)?,
        a_prime: incoming(false, mu)?,
        i_prime: incoming(true, sigma)?,
    })
}

/// Random `J × K` blocks of weight matrix `layer` (`A2`, `I2`) plus the
/// `H_mu`/`H_sigma` sets of activation layer `layer + 1`.
///
/// The index sets are drawn from `config.seed`, so repeated calls agree.
pub fn build_layer_sets(
    net: &DenseNet,
    stats: &ActivationStats,
    layer: usize,
    config: &ExtractionConfig,
) -> Result<LayerSets> {
    check_weight_layer(net, layer)?;
    check_stats(net, stats)?;
    config.validate()?;
    let w = &net.layers()[layer].weights;
    let (rows, cols) = w.shape();
    let mu = &stats.mu[layer];
    let sigma = &stats.sigma[layer];
    let mut subsets = Vec::with_capacity(config.subset_count);
    let mut a_double = Vec::with_capacity(config.subset_count);
    let mut i_double = Vec::with_capacity(config.subset_count);
    for l in 0..config.subset_count {
        let mut rng = rng_from(config.seed, &[label_key("subsets"), layer as u64, l as u64]);
        let mut js = sample(&mut rng, rows, config.subset_size.min(rows)).into_vec();
        let mut ks = sample(&mut rng, cols, config.subset_size.min(cols)).into_vec();
        js.sort_unstable();
        ks.sort_unstable();
        let mut pa = Vec::with_capacity(js.len() * ks.len());
        let mut pi = Vec::with_capacity(js.len() * ks.len());
        for &j in &js {
            for &k in &ks {
                pa.push(TaggedSet::weight_point(w[(j, k)], layer, j, k, mu[j], false));
                pi.push(TaggedSet::weight_point(w[(j, k)], layer, j, k, sigma[j], true));
            }
        }
        a_double.push(TaggedSet::from_pairs(pa)?);
        i_double.push(TaggedSet::from_pairs(pi)?);
        subsets.push((js, ks));
    }
    let act = layer + 1;
    let stat_set = |values: &[f64], kind: StatKind| {
        TaggedSet::new(
            values.to_vec(),
            (0..values.len())
                .map(|node| Provenance::Stat { layer: act, node, kind })
                .collect(),
        )
    };
    Ok(LayerSets {
        a_double,
        i_double,
        h_mu: stat_set(&stats.mu[act], StatKind::Mu)?,
        h_sigma: stat_set(&stats.sigma[act], StatKind::Sigma)?,
        subsets,
    })
}

/// Covariance sets of activation layer `layer` (1-based; 0 is the input).
pub fn build_cov_sets(
    net: &DenseNet,
    stats: &ActivationStats,
    layer: usize,
    config: &ExtractionConfig,
) -> Result<Vec<TaggedSet>> {
    check_stats(net, stats)?;
    config.validate()?;
    let depth = net.depth();
    if layer == 0 || layer > depth {
        return Err(Error::InvalidInput(format!(
            "activation layer {layer} out of range 1..={depth}"
        )));
    }
    if stats.n_samples() < 2 {
        return Err(Error::InvalidInput("covariance sets need at least two samples".into()));
    }
    let cov = |a: (usize, usize), b: (usize, usize)| {
        covariance_with_means(
            &stats.activations[a.0][a.1],
            stats.mu[a.0][a.1],
            &stats.activations[b.0][b.1],
            stats.mu[b.0][b.1],
        )
    };
    let constant = |values: Vec<f64>| {
        let n = values.len();
        TaggedSet::new(values, vec![Provenance::Constant; n])
    };
    match config.cov_variant {
        CovVariant::AllNodes => {
            let pool: Vec<(usize, usize)> = (1..=depth)
                .filter(|&l| l != layer)
                .flat_map(|l| (0..net.widths()[l]).map(move |k| (l, k)))
                .collect();
            if pool.is_empty() {
                return Err(Error::InvalidInput(
                    "all-nodes covariance needs at least two non-input layers".into(),
                ));
            }
            (0..net.widths()[layer])
                .map(|j| {
                    let partners: Vec<(usize, usize)> = if pool.len() > config.cov_cap {
                        let mut rng = rng_from(config.seed, &[label_key("cov"), layer as u64, j as u64]);
                        let mut idx = sample(&mut rng, pool.len(), config.cov_cap).into_vec();
                        idx.sort_unstable();
                        idx.into_iter().map(|i| pool[i]).collect()
                    } else {
                        pool.clone()
                    };
                    constant(partners.into_iter().map(|p| cov((layer, j), p)).collect())
                })
                .collect()
        }
        CovVariant::PerOutputClass => (0..net.output_width())
            .map(|o| constant((0..net.widths()[layer]).map(|j| cov((layer, j), (depth, o))).collect()))
            .collect(),
    }
}

impl PointSetBundle {
    /// Builds every family for `net` given precomputed activation statistics.
    pub fn build(net: &DenseNet, stats: &ActivationStats, config: &ExtractionConfig) -> Result<Self> {
        config.validate()?;
        check_stats(net, stats)?;
        let depth = net.depth();
        let mut node_sets = Vec::with_capacity(depth);
        let mut layer_sets = Vec::with_capacity(depth);
        for layer in 0..depth {
            node_sets.push(build_node_sets(net, stats, layer)?);
            layer_sets.push(build_layer_sets(net, stats, layer, config)?);
        }
        let mut cov_sets = Vec::with_capacity(depth);
        for layer in 1..=depth {
            cov_sets.push(build_cov_sets(net, stats, layer, config)?);
        }

        let layout = config.layout_for(net.widths(), GMode::Ph);
        let mut blocks = Vec::with_capacity(layout.blocks().len());
        for spec in layout.blocks() {
            let (fam, l) = (spec.family, spec.layer);
            let sets = match fam {
                Family::A => node_sets[l].a.clone(),
                Family::I => node_sets[l].i.clone(),
                Family::APrime => node_sets[l].a_prime.clone(),
                Family::IPrime => node_sets[l].i_prime.clone(),
                Family::ADouble => layer_sets[l].a_double.clone(),
                Family::IDouble => layer_sets[l].i_double.clone(),
                Family::C => cov_sets[l - 1].clone(),
                Family::HMu => vec![layer_sets[l - 1].h_mu.clone()],
                Family::HSigma => vec![layer_sets[l - 1].h_sigma.clone()],
            };
            blocks.push((fam, l, sets));
        }
        for (b, (fam, l, sets)) in blocks.iter_mut().enumerate() {
            for (s, set) in sets.iter_mut().enumerate() {
                set.finish(
                    config.seed,
                    &[label_key("dedup"), *fam as u64, *l as u64, b as u64, s as u64],
                );
            }
        }
        Ok(Self {
            widths: net.widths().to_vec(),
            config: config.clone(),
            blocks,
            n_samples: stats.n_samples(),
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn config(&self) -> &ExtractionConfig {
        &self.config
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Sets of one family at one layer.
    pub fn sets(&self, family: Family, layer: usize) -> Option<&[TaggedSet]> {
        self.blocks
            .iter()
            .find(|(f, l, _)| *f == family && *l == layer)
            .map(|(_, _, s)| s.as_slice())
    }

    pub(crate) fn blocks(&self) -> &[(Family, usize, Vec<TaggedSet>)] {
        &self.blocks
    }

    pub fn layout(&self, g_mode: GMode) -> FeatureLayout {
        self.config.layout_for(&self.widths, g_mode)
    }
}

/// Features of `net` on inputs `x`, together with the bundle and trace
/// needed for backpropagation.
pub struct Characterization {
    pub features: TopoFeatureVector,
    pub bundle: PointSetBundle,
    pub trace: ForwardTrace,
    pub stats: ActivationStats,
}

pub fn characterize_full(net: &DenseNet, x: &Matrix, config: &ExtractionConfig) -> Result<Characterization> {
    let trace = net.trace(x)?;
    let stats = ActivationStats::from_trace(&trace);
    let bundle = PointSetBundle::build(net, &stats, config)?;
    let layout = Arc::new(bundle.layout(config.g_mode));
    let features = aggregate(&bundle, &layout)?;
    Ok(Characterization {
        features,
        bundle,
        trace,
        stats,
    })
}

/// Topological feature vector of `net` fed `x`.
pub fn characterize(net: &DenseNet, x: &Matrix, config: &ExtractionConfig) -> Result<TopoFeatureVector> {
    Ok(characterize_full(net, x, config)?.features)
}

/// Features computed from supplied statistics (for example frozen ones).
pub fn characterize_with_stats(
    net: &DenseNet,
    stats: &ActivationStats,
    config: &ExtractionConfig,
) -> Result<TopoFeatureVector> {
    let bundle = PointSetBundle::build(net, stats, config)?;
    aggregate(&bundle, &Arc::new(bundle.layout(config.g_mode)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autonet::{init_net, Dense};

    fn fixture() -> (DenseNet, ActivationStats) {
        let net = init_net(&[2, 6, 5, 2], 4).unwrap();
        let x = Matrix::from_rows(
            &(0..12)
                .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.91).cos()])
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let (_, stats) = net.forward(&x).unwrap();
        (net, stats)
    }

    #[test]
    fn node_sets_scale_weights_by_source_statistics() {
        let w = Matrix::from_rows(&[vec![2.0, -1.0], vec![0.5, 4.0]]).unwrap();
        let net = DenseNet::from_layers(
            vec![
                Dense {
                    weights: w,
                    bias: vec![0.0; 2],
                },
                Dense {
                    weights: Matrix::identity(2),
                    bias: vec![0.0; 2],
                },
            ],
            0,
        )
        .unwrap();
        // inputs: node 0 has mean 3 and deviation 0; node 1 has mean 1, deviation 1
        let x = Matrix::from_rows(&[vec![3.0, 0.0], vec![3.0, 2.0]]).unwrap();
        let (_, stats) = net.forward(&x).unwrap();
        let sets = build_node_sets(&net, &stats, 0).unwrap();
        assert_eq!(sets.a[0].points, vec![6.0, -3.0]);
        assert_eq!(sets.i[0].points, vec![0.0, 0.0]);
        assert_eq!(sets.i[1].points, vec![0.5, 4.0]);
        assert_eq!(sets.a_prime[1].points, vec![-3.0, 4.0]);
        assert_eq!(sets.i_prime[0].points, vec![0.0, 0.5]);
        assert!(build_node_sets(&net, &stats, 2).is_err());
    }

    #[test]
    fn node_set_shapes() {
        let (net, stats) = fixture();
        let sets = build_node_sets(&net, &stats, 1).unwrap();
        assert_eq!(sets.a.len(), 6);
        assert!(sets.a.iter().all(|s| s.points.len() == 5));
        assert_eq!(sets.a_prime.len(), 5);
        assert!(sets.a_prime.iter().all(|s| s.points.len() == 6));
    }

    #[test]
    fn layer_sets_are_seeded_and_clipped() {
        let net = init_net(&[2, 25, 25, 2], 1).unwrap();
        let x = Matrix::from_rows(&[vec![0.1, 0.2], vec![-0.4, 0.9], vec![1.0, -1.0]]).unwrap();
        let (_, stats) = net.forward(&x).unwrap();
        let cfg = ExtractionConfig::default();
        let a = build_layer_sets(&net, &stats, 1, &cfg).unwrap();
        assert_eq!(a.a_double.len(), 10);
        assert!(a.a_double.iter().all(|s| s.points.len() == 100));
        let b = build_layer_sets(&net, &stats, 1, &cfg).unwrap();
        assert_eq!(a.subsets, b.subsets);
        let first = build_layer_sets(&net, &stats, 0, &cfg).unwrap();
        assert!(first.a_double.iter().all(|s| s.points.len() == 2 * 10));
    }

    #[test]
    fn constant_activations_give_zero_sigma_sets() {
        let net = init_net(&[2, 4, 3, 2], 2).unwrap();
        let x = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let (_, stats) = net.forward(&x).unwrap();
        let cfg = ExtractionConfig::default();
        let ls = build_layer_sets(&net, &stats, 0, &cfg).unwrap();
        assert!(ls.h_sigma.points.iter().all(|&v| v == 0.0));
        let cov = build_cov_sets(&net, &stats, 1, &cfg).unwrap();
        assert!(cov.iter().all(|s| s.points.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn cov_variants() {
        let (net, stats) = fixture();
        let capped = ExtractionConfig {
            cov_cap: 2,
            ..ExtractionConfig::default()
        };
        let sets = build_cov_sets(&net, &stats, 1, &capped).unwrap();
        assert_eq!(sets.len(), 6);
        assert!(sets.iter().all(|s| s.points.len() == 2));

        let per_class = ExtractionConfig {
            cov_variant: CovVariant::PerOutputClass,
            ..ExtractionConfig::default()
        };
        for layer in 1..=3 {
            let sets = build_cov_sets(&net, &stats, layer, &per_class).unwrap();
            assert_eq!(sets.len(), 2);
            assert_eq!(sets[0].points.len(), net.widths()[layer]);
        }
        assert!(build_cov_sets(&net, &stats, 0, &per_class).is_err());
        let expected = stats.covariance((2, 3), (3, 1)).unwrap();
        let sets = build_cov_sets(&net, &stats, 2, &per_class).unwrap();
        assert!((sets[1].points[3] - expected).abs() < 1e-15);
    }

    #[test]
    fn uncapped_pool_uses_every_other_layer_node() {
        let (net, stats) = fixture();
        let sets = build_cov_sets(&net, &stats, 1, &ExtractionConfig::default()).unwrap();
        assert!(sets.iter().all(|s| s.points.len() == 5 + 2));
    }

    #[test]
    fn bundle_covers_layout_blocks() {
        let (net, stats) = fixture();
        let cfg = ExtractionConfig::default();
        let bundle = PointSetBundle::build(&net, &stats, &cfg).unwrap();
        let layout = bundle.layout(GMode::Both);
        assert_eq!(bundle.blocks().len(), layout.blocks().len());
        for set in bundle.blocks().iter().flat_map(|b| &b.2) {
            let (d, r) = set.deduped().unwrap();
            assert_eq!(r.len() + 1, d.set.len());
        }
    }
}
