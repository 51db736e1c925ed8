use std::sync::Arc;

use super::{FeatureLayout, GMode, PointSetBundle, Provenance, Reduction, StatKind, TaggedSet, TopoFeatureVector};
use crate::autonet::{DenseNet, ForwardTrace, Gradients, Matrix};
use crate::error::{Error, Result};
use crate::persistence::{stats_backward, TopoStats};

fn summarize(set: &TaggedSet, g_mode: GMode) -> Vec<f64> {
    let mut out = Vec::with_capacity(g_mode.width());
    for &base in g_mode.bases() {
        let stats = match base {
            super::Base::Ph => {
                let (_, record) = set.deduped().expect("bundle sets are finished");
                TopoStats::of(&record.deaths)
            }
            super::Base::Noph => TopoStats::of(&set.points),
        };
        out.extend_from_slice(&stats.to_array());
    }
    out
}

fn check_layout(bundle: &PointSetBundle, layout: &FeatureLayout) -> Result<()> {
    let expected = bundle.layout(layout.g_mode());
    if expected.hash() != layout.hash() {
        return Err(Error::LayoutMismatch {
            expected: expected.hash().to_string(),
            found: layout.hash().to_string(),
        });
    }
    Ok(())
}

/// Summarizes every set with `g` and reduces each family with its mean and
/// standard deviation across sets (H blocks are used directly).
pub fn aggregate(bundle: &PointSetBundle, layout: &Arc<FeatureLayout>) -> Result<TopoFeatureVector> {
    check_layout(bundle, layout)?;
    let g_mode = layout.g_mode();
    let q = g_mode.width();
    let mut values = Vec::with_capacity(layout.len());
    for (spec, (family, layer, sets)) in layout.blocks().iter().zip(bundle.blocks()) {
        debug_assert_eq!((spec.family, spec.layer), (*family, *layer));
        if sets.is_empty() {
            return Err(Error::Empty(format!(
                "family {} at layer {layer} has no sets",
                family.as_str()
            )));
        }
        let summaries: Vec<Vec<f64>> = sets.iter().map(|s| summarize(s, g_mode)).collect();
        if family.is_h() {
            values.extend_from_slice(&summaries[0]);
            continue;
        }
        let (mean, std) = column_moments(&summaries, q);
        values.extend(mean);
        values.extend(std);
    }
    TopoFeatureVector::new(values, Arc::clone(layout))
}

/// Gradient of a scalar function of the feature vector with respect to the
/// network weights (activation statistics held fixed) and with respect to the
/// activation statistics that enter the H family directly.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGradient {
    pub weights: Vec<Matrix>,
    /// `mu[layer][node]`, activation-layer indexed.
    pub mu: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
}

impl FeatureGradient {
    fn zeros(widths: &[usize]) -> Self {
        Self {
            weights: widths.windows(2).map(|w| Matrix::zeros(w[0], w[1])).collect(),
            mu: widths.iter().map(|&w| vec![0.0; w]).collect(),
            sigma: widths.iter().map(|&w| vec![0.0; w]).collect(),
        }
    }

    pub fn has_stat_terms(&self) -> bool {
        self.mu.iter().chain(&self.sigma).flatten().any(|&v| v != 0.0)
    }

    /// Converts to parameter gradients.
    ///
    /// Weight terms map one-to-one. When `trace` is given, the statistic
    /// terms are additionally backpropagated through the activations that
    /// produced them (the trace must be the one the bundle was built from);
    /// otherwise they are dropped.
    pub fn to_parameter_gradients(&self, net: &DenseNet, trace: Option<&ForwardTrace>) -> Result<Gradients> {
        if self.weights.len() != net.depth() {
            return Err(Error::Shape("feature gradient depth differs from the network".into()));
        }
        let mut grads = match trace {
            Some(trace) if self.has_stat_terms() => {
                let n = trace.activations[0].rows() as f64;
                let mut act: Vec<Option<Matrix>> = vec![None; net.depth() + 1];
                for (layer, slot) in act.iter_mut().enumerate().skip(1) {
                    let (dmu, dsig) = (&self.mu[layer], &self.sigma[layer]);
                    if dmu.iter().chain(dsig).all(|&v| v == 0.0) {
                        continue;
                    }
                    let h = &trace.activations[layer];
                    let mut g = Matrix::zeros(h.rows(), h.cols());
                    for j in 0..h.cols() {
                        let col = h.column(j);
                        let (mean, std) = crate::autonet::mean_std(&col);
                        for (s, &v) in col.iter().enumerate() {
                            let mut d = dmu[j] / n;
                            if std > 0.0 {
                                d += dsig[j] * (v - mean) / (n * std);
                            }
                            g[(s, j)] = d;
                        }
                    }
                    *slot = Some(g);
                }
                net.backward_from_trace(trace, None, Some(&act))?
            }
            _ => Gradients::zeros_like(net),
        };
        for (g, w) in grads.weights.iter_mut().zip(&self.weights) {
            g.add_assign(w)?;
        }
        Ok(grads)
    }
}

/// Chain rule from a gradient on the feature vector back to point positions
/// and from there to weights and activation statistics.
pub fn feature_backward(bundle: &PointSetBundle, layout: &FeatureLayout, upstream: &[f64]) -> Result<FeatureGradient> {
    check_layout(bundle, layout)?;
    if upstream.len() != layout.len() {
        return Err(Error::LayoutMismatch {
            expected: format!("{} components", layout.len()),
            found: format!("{} upstream values", upstream.len()),
        });
    }
    let g_mode = layout.g_mode();
    let q = g_mode.width();
    let mut out = FeatureGradient::zeros(bundle.widths());
    for (spec, (family, _, sets)) in layout.blocks().iter().zip(bundle.blocks()) {
        let up = &upstream[spec.offset..spec.offset + spec.len];
        if up.iter().all(|&v| v == 0.0) {
            continue;
        }
        let per_set: Vec<Vec<f64>> = if family.is_h() {
            vec![up.to_vec()]
        } else {
            debug_assert_eq!(layout.components()[spec.offset].reduction, Reduction::Mean);
            let summaries: Vec<Vec<f64>> = sets.iter().map(|s| summarize(s, g_mode)).collect();
            let n = summaries.len() as f64;
            let (up_mean, up_std) = up.split_at(q);
            let (mean, std) = column_moments(&summaries, q);
            summaries
                .iter()
                .map(|s| {
                    (0..q)
                        .map(|c| {
                            let mut d = up_mean[c] / n;
                            if std[c] > 0.0 {
                                d += up_std[c] * (s[c] - mean[c]) / (n * std[c]);
                            }
                            d
                        })
                        .collect()
                })
                .collect()
        };
        for (set, g_up) in sets.iter().zip(per_set) {
            let point_grad = set_backward(set, g_mode, &g_up)?;
            route(&mut out, set, &point_grad);
        }
    }
    Ok(out)
}

/// Per-column mean and population std across sets; constant columns get an
/// exact zero std.
pub(super) fn column_moments(summaries: &[Vec<f64>], q: usize) -> (Vec<f64>, Vec<f64>) {
    let n = summaries.len() as f64;
    let mean: Vec<f64> = (0..q)
        .map(|c| summaries.iter().map(|s| s[c]).sum::<f64>() / n)
        .collect();
    let std = (0..q)
        .map(|c| {
            if summaries.iter().all(|s| s[c] == summaries[0][c]) {
                0.0
            } else {
                (summaries.iter().map(|s| (s[c] - mean[c]).powi(2)).sum::<f64>() / n).sqrt()
            }
        })
        .collect();
    (mean, std)
}

fn set_backward(set: &TaggedSet, g_mode: GMode, upstream: &[f64]) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; set.points.len()];
    for (chunk, &base) in upstream.chunks(TopoStats::LEN).zip(g_mode.bases()) {
        let up = TopoStats::from_slice(chunk);
        if up == TopoStats::default() {
            continue;
        }
        match base {
            super::Base::Ph => {
                let (deduped, record) = set.deduped().expect("bundle sets are finished");
                let g = stats_backward(&deduped.set, record, &up)?;
                for (&orig, gv) in deduped.origin.iter().zip(g) {
                    grad[orig] += gv;
                }
            }
            super::Base::Noph => {
                for (g, gv) in grad.iter_mut().zip(TopoStats::backward(&set.points, &up)) {
                    *g += gv;
                }
            }
        }
    }
    Ok(grad)
}

fn route(out: &mut FeatureGradient, set: &TaggedSet, point_grad: &[f64]) {
    for (prov, &g) in set.provenance.iter().zip(point_grad) {
        if g == 0.0 {
            continue;
        }
        match *prov {
            Provenance::Weight { layer, row, col, slope } => out.weights[layer][(row, col)] += g * slope,
            Provenance::Stat { layer, node, kind } => match kind {
                StatKind::Mu => out.mu[layer][node] += g,
                StatKind::Sigma => out.sigma[layer][node] += g,
            },
            Provenance::Constant => {}
        }
    }
}
