//! Zero-dimensional persistent homology of point sets on the real line.
//!
//! For a finite set `S ⊂ ℝ` under the weak-alpha filtration every point is
//! born at threshold 0 and two components merge exactly when the threshold
//! reaches the gap between sort-adjacent points. The finite deaths are
//! therefore the adjacent differences of the sorted values, and each death is
//! created by one identifiable pair of points. That pair is what gradients are
//! routed through: the derivative of a death with respect to the larger point
//! is `+1`, with respect to the smaller point `-1`.
//!
//! The surviving (essential) component is never reported.

use rand::Rng;

use crate::error::{Error, Result};

/// A finite, non-empty multiset of real scalars in caller order.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet1D {
    values: Vec<f64>,
}

impl PointSet1D {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("point set must contain at least one value".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("point set value {bad}")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Indices of the values in ascending order, ties broken by index.
    fn sorted_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        order.sort_by(|&a, &b| self.values[a].total_cmp(&self.values[b]).then(a.cmp(&b)));
        order
    }
}

/// A deduplicated point set together with the index each survivor had in the
/// set it was drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct Deduped {
    pub set: PointSet1D,
    pub origin: Vec<usize>,
}

/// Keeps one randomly chosen representative of every group of equal values.
///
/// Equality is exact numeric equality (`0.0 == -0.0`); nearby values are
/// legitimate small gaps and are kept. Survivors keep their original relative
/// order.
pub fn dedup_points<R: Rng + ?Sized>(set: &PointSet1D, rng: &mut R) -> Deduped {
    let values = set.values();
    let order = set.sorted_order();
    let mut keep = Vec::with_capacity(values.len());
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let pick = if end - start == 1 {
            start
        } else {
            start + rng.random_range(0..end - start)
        };
        keep.push(order[pick]);
        start = end;
    }
    keep.sort_unstable();
    let survivors = keep.iter().map(|&i| values[i]).collect();
    Deduped {
        set: PointSet1D { values: survivors },
        origin: keep,
    }
}

/// Finite 0-dimensional deaths and the point pair that created each one.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DeathRecord {
    /// Deaths in ascending order of the pair's position along the line.
    pub deaths: Vec<f64>,
    /// `(smaller, larger)` indices into the originating point set.
    pub pairs: Vec<(usize, usize)>,
}

impl DeathRecord {
    pub fn len(&self) -> usize {
        self.deaths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deaths.is_empty()
    }
}

pub fn zero_dim_deaths(set: &PointSet1D) -> DeathRecord {
    let values = set.values();
    let order = set.sorted_order();
    let mut record = DeathRecord {
        deaths: Vec::with_capacity(order.len().saturating_sub(1)),
        pairs: Vec::with_capacity(order.len().saturating_sub(1)),
    };
    for w in order.windows(2) {
        record.deaths.push(values[w[1]] - values[w[0]]);
        record.pairs.push((w[0], w[1]));
    }
    record
}

/// Minimum, maximum, mean and population standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TopoStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

impl TopoStats {
    pub const LEN: usize = 4;
    pub const NAMES: [&'static str; 4] = ["min", "max", "mean", "std"];

    /// Statistics of `values`; all zero for an empty slice.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &v in values {
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        if min == max {
            return Self {
                min,
                max,
                mean: min,
                std: 0.0,
            };
        }
        let mean = sum / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            min,
            max,
            mean: mean.clamp(min, max),
            std: var.sqrt(),
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.min, self.max, self.mean, self.std]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            min: v[0],
            max: v[1],
            mean: v[2],
            std: v[3],
        }
    }

    /// Pulls a gradient on the statistics back onto `values`.
    ///
    /// Min and max route to the first index attaining them; a zero standard
    /// deviation contributes nothing.
    pub fn backward(values: &[f64], upstream: &TopoStats) -> Vec<f64> {
        let mut grad = vec![0.0; values.len()];
        if values.is_empty() {
            return grad;
        }
        let stats = Self::of(values);
        let n = values.len() as f64;
        let argmin = first_index_of(values, stats.min);
        let argmax = first_index_of(values, stats.max);
        grad[argmin] += upstream.min;
        grad[argmax] += upstream.max;
        for (i, g) in grad.iter_mut().enumerate() {
            *g += upstream.mean / n;
            if stats.std > 0.0 {
                *g += upstream.std * (values[i] - stats.mean) / (n * stats.std);
            }
        }
        grad
    }
}

fn first_index_of(values: &[f64], target: f64) -> usize {
    values.iter().position(|&v| v == target).unwrap_or(0)
}

/// Statistics of the persistence deaths of `set`.
pub fn g_ph(set: &PointSet1D) -> TopoStats {
    TopoStats::of(&zero_dim_deaths(set).deaths)
}

/// Statistics of the raw values of `set`.
pub fn g_noph(set: &PointSet1D) -> TopoStats {
    TopoStats::of(set.values())
}

/// `[g_ph | g_noph]`, always eight components.
pub fn g_both(set: &PointSet1D) -> [f64; 8] {
    let ph = g_ph(set).to_array();
    let raw = g_noph(set).to_array();
    let mut out = [0.0; 8];
    out[..4].copy_from_slice(&ph);
    out[4..].copy_from_slice(&raw);
    out
}

/// Gradient of the death statistics of `set` with respect to its values.
pub fn stats_backward(set: &PointSet1D, record: &DeathRecord, upstream: &TopoStats) -> Result<Vec<f64>> {
    let n = set.len();
    if record.deaths.len() != record.pairs.len() || record.deaths.len() + 1 != n {
        return Err(Error::Shape(format!(
            "death record with {} deaths / {} pairs does not belong to a set of {n} points",
            record.deaths.len(),
            record.pairs.len()
        )));
    }
    let death_grad = TopoStats::backward(&record.deaths, upstream);
    let mut grad = vec![0.0; n];
    for (&(lo, hi), g) in record.pairs.iter().zip(death_grad) {
        if lo >= n || hi >= n {
            return Err(Error::Shape(format!("pair ({lo}, {hi}) out of range for {n} points")));
        }
        grad[hi] += g;
        grad[lo] -= g;
    }
    Ok(grad)
}
