//! Forward-only characterization of one convolutional layer.

use std::sync::Arc;

use super::{ExtractionConfig, FeatureLayout, GMode, TopoFeatureVector};
use crate::autonet::{covariance_with_means, mean_std};
use crate::error::{Error, Result};
use crate::persistence::{dedup_points, zero_dim_deaths, PointSet1D, TopoStats};
use crate::rng::{label_key, rng_from};

/// Dense 4-axis tensor in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "tensor of shape {shape:?} needs {} values, got {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        if shape.contains(&0) {
            return Err(Error::Shape(format!("tensor shape {shape:?} has an empty axis")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor entries".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: [usize; 4], f: impl Fn([usize; 4]) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(shape.iter().product());
        for a in 0..shape[0] {
            for b in 0..shape[1] {
                for c in 0..shape[2] {
                    for d in 0..shape[3] {
                        data.push(f([a, b, c, d]));
                    }
                }
            }
        }
        Self::new(shape, data)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn get(&self, i: [usize; 4]) -> f64 {
        let [_, b, c, d] = self.shape;
        self.data[((i[0] * b + i[1]) * c + i[2]) * d + i[3]]
    }
}

fn summarize(points: Vec<f64>, g_mode: GMode, seed: u64, keys: &[u64]) -> Result<Vec<f64>> {
    let set = PointSet1D::new(points)?;
    let mut out = Vec::with_capacity(g_mode.width());
    for base in g_mode.bases() {
        let stats = match base {
            super::Base::Ph => {
                let deduped = dedup_points(&set, &mut rng_from(seed, keys));
                TopoStats::of(&zero_dim_deaths(&deduped.set).deaths)
            }
            super::Base::Noph => TopoStats::of(set.values()),
        };
        out.extend_from_slice(&stats.to_array());
    }
    Ok(out)
}

fn mean_and_std(summaries: &[Vec<f64>]) -> Vec<f64> {
    let (mean, std) = super::aggregate::column_moments(summaries, summaries[0].len());
    mean.into_iter().chain(std).collect()
}

/// Per filter element `(c, a, b)`: mean and deviation of every input value
/// that element multiplies across samples and valid window positions.
pub fn window_stats(activations: &Tensor4, k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let [n, c, h, w] = activations.shape();
    if k == 0 || k > h || k > w {
        return Err(Error::InvalidInput(format!(
            "kernel {k} does not fit a {h}x{w} activation map"
        )));
    }
    let (rh, rw) = (h - k + 1, w - k + 1);
    let mut mu = Vec::with_capacity(c * k * k);
    let mut sigma = Vec::with_capacity(c * k * k);
    let mut buf = Vec::with_capacity(n * rh * rw);
    for ch in 0..c {
        for a in 0..k {
            for b in 0..k {
                buf.clear();
                for s in 0..n {
                    for l in a..a + rh {
                        for m in b..b + rw {
                            buf.push(activations.get([s, ch, l, m]));
                        }
                    }
                }
                let (m, sd) = mean_std(&buf);
                mu.push(m);
                sigma.push(sd);
            }
        }
    }
    Ok((mu, sigma))
}

/// Features of a convolutional layer with filter bank `weights`
/// `(out, in, k, k)` fed `activations` `(samples, in, height, width)`.
///
/// `partners` are activation vectors (one value per sample) of other nodes
/// in the network; each channel's mean-pooled activation is compared with
/// every partner by covariance.
pub fn conv_extract(
    weights: &Tensor4,
    activations: &Tensor4,
    partners: &[Vec<f64>],
    config: &ExtractionConfig,
) -> Result<TopoFeatureVector> {
    config.validate()?;
    let [out_c, in_c, k, k2] = weights.shape();
    let [n, c, h, w] = activations.shape();
    if k != k2 {
        return Err(Error::Shape(format!("filters must be square, got {k}x{k2}")));
    }
    if in_c != c {
        return Err(Error::Shape(format!(
            "filters expect {in_c} channels, activations have {c}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidInput("covariance sets need at least two samples".into()));
    }
    if partners.is_empty() {
        return Err(Error::InvalidInput(
            "at least one covariance partner is required".into(),
        ));
    }
    if let Some(p) = partners.iter().find(|p| p.len() != n) {
        return Err(Error::Shape(format!(
            "partner has {} samples, activations have {n}",
            p.len()
        )));
    }
    let (mu, sigma) = window_stats(activations, k)?;
    let g_mode = config.g_mode;
    let seed = config.seed;

    let mut a_sets = Vec::with_capacity(out_c);
    let mut i_sets = Vec::with_capacity(out_c);
    for o in 0..out_c {
        let mut pa = Vec::with_capacity(in_c * k * k);
        let mut pi = Vec::with_capacity(in_c * k * k);
        for ch in 0..in_c {
            for a in 0..k {
                for b in 0..k {
                    let wv = weights.get([o, ch, a, b]);
                    let e = (ch * k + a) * k + b;
                    pa.push(wv * mu[e]);
                    pi.push((wv * sigma[e]).abs());
                }
            }
        }
        a_sets.push(summarize(pa, g_mode, seed, &[label_key("conv-a"), o as u64])?);
        i_sets.push(summarize(pi, g_mode, seed, &[label_key("conv-i"), o as u64])?);
    }

    let pooled: Vec<Vec<f64>> = (0..c)
        .map(|ch| {
            (0..n)
                .map(|s| {
                    let mut acc = 0.0;
                    for l in 0..h {
                        for m in 0..w {
                            acc += activations.get([s, ch, l, m]);
                        }
                    }
                    acc / (h * w) as f64
                })
                .collect()
        })
        .collect();
    let partner_means: Vec<f64> = partners.iter().map(|p| mean_std(p).0).collect();
    let mut c_sets = Vec::with_capacity(c);
    let mut h_mu = Vec::with_capacity(c);
    let mut h_sigma = Vec::with_capacity(c);
    for (ch, v) in pooled.iter().enumerate() {
        let (m, sd) = mean_std(v);
        h_mu.push(m);
        h_sigma.push(sd);
        let cov = partners
            .iter()
            .zip(&partner_means)
            .map(|(p, &pm)| covariance_with_means(v, m, p, pm))
            .collect();
        c_sets.push(summarize(cov, g_mode, seed, &[label_key("conv-c"), ch as u64])?);
    }

    let mut values = Vec::new();
    values.extend(mean_and_std(&a_sets));
    values.extend(mean_and_std(&i_sets));
    values.extend(mean_and_std(&c_sets));
    values.extend(summarize(h_mu, g_mode, seed, &[label_key("conv-hmu")])?);
    values.extend(summarize(h_sigma, g_mode, seed, &[label_key("conv-hsigma")])?);
    let layout = Arc::new(FeatureLayout::conv(g_mode, &format!("k={k} in={in_c} out={out_c}")));
    TopoFeatureVector::new(values, layout)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn partners(n: usize) -> Vec<Vec<f64>> {
        (0..3)
            .map(|p| (0..n).map(|s| ((s * 3 + p) as f64).sin()).collect())
            .collect()
    }

    #[test]
    fn window_stats_shape() {
        let act = Tensor4::from_fn([2, 3, 8, 8], |[s, c, l, m]| (s + c * l) as f64 - m as f64 * 0.5).unwrap();
        let (mu, sigma) = window_stats(&act, 3).unwrap();
        assert_eq!(mu.len(), 3 * 3 * 3);
        assert_eq!(sigma.len(), 27);
    }

    #[test]
    fn window_stats_by_hand() {
        // one sample, one channel, 3x3 map holding 0..9; kernel 2 element (0, 0)
        // sees rows 0..2 and cols 0..2: {0, 1, 3, 4}
        let act = Tensor4::from_fn([1, 1, 3, 3], |[_, _, l, m]| (l * 3 + m) as f64).unwrap();
        let (mu, _) = window_stats(&act, 2).unwrap();
        assert_eq!(mu[0], 2.0);
        assert_eq!(mu[3], 6.0);
    }

    #[test]
    fn constant_activations_zero_sigma_sets() {
        let act = Tensor4::from_fn([4, 2, 5, 5], |_| 0.7).unwrap();
        let wts = Tensor4::from_fn([3, 2, 3, 3], |[o, c, a, b]| {
            (o + c) as f64 * 0.1 - (a * b) as f64 * 0.05
        })
        .unwrap();
        let cfg = ExtractionConfig {
            g_mode: GMode::Noph,
            ..ExtractionConfig::default()
        };
        let t = conv_extract(&wts, &act, &partners(4), &cfg).unwrap();
        for (comp, v) in t.layout.components().iter().zip(&t.values) {
            if comp.family == super::super::Family::I || comp.family == super::super::Family::HSigma {
                assert_eq!(*v, 0.0, "{}", comp.name);
            }
        }
        let (_, sigma) = window_stats(&act, 3).unwrap();
        assert!(sigma.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn layout_and_errors() {
        let act = Tensor4::from_fn([2, 3, 8, 8], |[s, c, l, m]| ((s + 2 * c + l * m) as f64).cos()).unwrap();
        let wts = Tensor4::from_fn([4, 3, 3, 3], |[o, c, a, b]| ((o * 27 + c * 9 + a * 3 + b) as f64).sin()).unwrap();
        let cfg = ExtractionConfig::default();
        let t = conv_extract(&wts, &act, &partners(2), &cfg).unwrap();
        assert_eq!(t.len(), 3 * 16 + 2 * 8);
        assert_eq!(t, conv_extract(&wts, &act, &partners(2), &cfg).unwrap());

        let big = Tensor4::from_fn([4, 3, 9, 9], |_| 1.0).unwrap();
        assert!(conv_extract(&big, &act, &partners(2), &cfg).is_err());
        assert!(conv_extract(&wts, &act, &[], &cfg).is_err());
        assert!(conv_extract(&wts, &act, &partners(3), &cfg).is_err());
    }
}
