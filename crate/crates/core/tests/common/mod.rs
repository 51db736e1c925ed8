#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nettopo::autonet::{cross_entropy, DenseNet, Matrix};
use nettopo::synthdata::{generate, Generator, TaskSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Single-linkage merge distances from a union-find over every pairwise
/// edge, ascending. Independent of sorting the points themselves.
pub fn single_linkage_deaths(points: &[f64]) -> Vec<f64> {
    let n = points.len();
    let mut edges = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            edges.push(((points[i] - points[j]).abs(), i, j));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut deaths = Vec::with_capacity(n.saturating_sub(1));
    for (d, i, j) in edges {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a] = b;
            deaths.push(d);
        }
    }
    deaths
}

/// Distinct values in `[-scale, scale]`.
pub fn distinct_set(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(n);
    while out.len() < n {
        let v = rng.random_range(-scale..scale);
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

/// Shuffled points whose sorted adjacent gaps are pairwise at least
/// `min_sep` apart and at least `min_sep` themselves.
pub fn separated_gap_set(rng: &mut impl Rng, n: usize, min_sep: f64) -> Vec<f64> {
    let mut gaps: Vec<f64> = Vec::with_capacity(n.saturating_sub(1));
    while gaps.len() + 1 < n {
        let g = rng.random_range(min_sep..1.0);
        if gaps.iter().all(|h| (h - g).abs() >= min_sep) {
            gaps.push(g);
        }
    }
    let mut pts = vec![rng.random_range(-1.0..1.0)];
    for g in gaps {
        let last = *pts.last().unwrap();
        pts.push(last + g);
    }
    for i in (1..pts.len()).rev() {
        pts.swap(i, rng.random_range(0..=i));
    }
    pts
}

pub fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn loss(net: &DenseNet, x: &Matrix, labels: &[usize]) -> f64 {
    let (logits, _) = net.forward(x).unwrap();
    cross_entropy(&logits, labels).unwrap().0
}

/// First `n` training points of a generated task.
pub fn batch(generator: Generator, n: usize, seed: u64) -> (Matrix, Vec<usize>) {
    let mut spec = TaskSpec::new(generator, seed);
    spec.samples_per_split = n.max(8);
    let data = generate(&spec).unwrap();
    let idx: Vec<usize> = (0..n).collect();
    let split = data.train.select(&idx);
    (split.matrix(), split.labels.clone())
}

/// Least squares with an intercept via normal equations solved by Gaussian
/// elimination with partial pivoting. Returns `(intercept, coef)`.
#[allow(clippy::needless_range_loop)]
pub fn least_squares(x: &Matrix, y: &[f64]) -> (f64, Vec<f64>) {
    let (n, d) = x.shape();
    let p = d + 1;
    let row = |i: usize| -> Vec<f64> {
        let mut r = vec![1.0];
        r.extend_from_slice(x.row(i));
        r
    };
    let mut a = vec![vec![0.0; p + 1]; p];
    for i in 0..n {
        let r = row(i);
        for j in 0..p {
            for k in 0..p {
                a[j][k] += r[j] * r[k];
            }
            a[j][p] += r[j] * y[i];
        }
    }
    for col in 0..p {
        let piv = (col..p)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        for r in 0..p {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=p {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let beta: Vec<f64> = (0..p).map(|j| a[j][p] / a[j][j]).collect();
    (beta[0], beta[1..].to_vec())
}
