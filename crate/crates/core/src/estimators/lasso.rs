use serde::{Deserialize, Serialize};

use crate::autonet::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    pub alpha: f64,
    /// Stop once no coefficient moves more than this in a sweep.
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            tolerance: 1e-6,
            max_sweeps: 10_000,
        }
    }
}

/// Linear model minimizing `(1/2n)·RSS + alpha·|beta|_1` over internally
/// standardized columns with an unpenalized intercept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LassoModel {
    /// Coefficients on the original column scale.
    pub coef: Vec<f64>,
    pub intercept: f64,
    pub alpha: f64,
    /// Column means and population deviations used for the internal
    /// standardization (deviation 0 marks a constant, unused column).
    pub col_mean: Vec<f64>,
    pub col_scale: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    /// Objective before the first sweep and after every sweep.
    #[serde(skip)]
    pub objective_trace: Vec<f64>,
}

impl LassoModel {
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.coef.len() {
            return Err(Error::Shape(format!(
                "row of length {} for a model with {} coefficients",
                row.len(),
                self.coef.len()
            )));
        }
        Ok(self.intercept + row.iter().zip(&self.coef).map(|(x, b)| x * b).sum::<f64>())
    }

    /// Coefficients in standardized units.
    pub fn standardized_coef(&self) -> Vec<f64> {
        self.coef.iter().zip(&self.col_scale).map(|(b, s)| b * s).collect()
    }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

struct Prepared {
    n: usize,
    /// Standardized columns, column-major.
    z: Vec<Vec<f64>>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    y_mean: f64,
    y_centered: Vec<f64>,
}

fn prepare(x: &Matrix, y: &[f64]) -> Result<Prepared> {
    let (n, d) = x.shape();
    if n == 0 {
        return Err(Error::Empty("LASSO needs at least one sample".into()));
    }
    if y.len() != n {
        return Err(Error::Shape(format!("{n} rows but {} targets", y.len())));
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("LASSO inputs".into()));
    }
    let nf = n as f64;
    let mut z = Vec::with_capacity(d);
    let mut mean = Vec::with_capacity(d);
    let mut scale = Vec::with_capacity(d);
    for j in 0..d {
        let col = x.column(j);
        let m = col.iter().sum::<f64>() / nf;
        let constant = col.iter().all(|&v| v == col[0]);
        let s = if constant {
            0.0
        } else {
            (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / nf).sqrt()
        };
        z.push(if s > 0.0 {
            col.iter().map(|v| (v - m) / s).collect()
        } else {
            vec![0.0; n]
        });
        mean.push(m);
        scale.push(s);
    }
    let y_mean = y.iter().sum::<f64>() / nf;
    Ok(Prepared {
        n,
        z,
        mean,
        scale,
        y_mean,
        y_centered: y.iter().map(|v| v - y_mean).collect(),
    })
}

/// Smallest `alpha` for which every coefficient is exactly zero.
pub fn lasso_alpha_max(x: &Matrix, y: &[f64]) -> Result<f64> {
    let p = prepare(x, y)?;
    let nf = p.n as f64;
    Ok(p.z
        .iter()
        .map(|col| (col.iter().zip(&p.y_centered).map(|(a, b)| a * b).sum::<f64>() / nf).abs())
        .fold(0.0, f64::max))
}

pub fn lasso_fit(x: &Matrix, y: &[f64], alpha: f64) -> Result<LassoModel> {
    lasso_fit_with(
        x,
        y,
        &LassoConfig {
            alpha,
            ..LassoConfig::default()
        },
    )
}

/// Cyclic coordinate descent with soft-thresholding.
pub fn lasso_fit_with(x: &Matrix, y: &[f64], config: &LassoConfig) -> Result<LassoModel> {
    if config.alpha < 0.0 || !config.alpha.is_finite() {
        return Err(Error::InvalidInput(format!("alpha must be >= 0, got {}", config.alpha)));
    }
    let p = prepare(x, y)?;
    let nf = p.n as f64;
    let d = p.z.len();
    let alpha = config.alpha;
    let col_sq: Vec<f64> = p.z.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>() / nf).collect();
    let mut beta = vec![0.0; d];
    let mut resid = p.y_centered.clone();
    let objective = |resid: &[f64], beta: &[f64]| {
        resid.iter().map(|r| r * r).sum::<f64>() / (2.0 * nf) + alpha * beta.iter().map(|b| b.abs()).sum::<f64>()
    };
    let mut trace = vec![objective(&resid, &beta)];
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < config.max_sweeps {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for j in 0..d {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = &p.z[j];
            let rho = col.iter().zip(&resid).map(|(a, b)| a * b).sum::<f64>() / nf + col_sq[j] * beta[j];
            let new = soft_threshold(rho, alpha) / col_sq[j];
            let delta = new - beta[j];
            if delta != 0.0 {
                resid.iter_mut().zip(col).for_each(|(r, z)| *r -= z * delta);
                beta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        let obj = objective(&resid, &beta);
        let prev = *trace.last().expect("seeded with the starting objective");
        debug_assert!(
            obj <= prev + 1e-12 * prev.abs().max(1.0),
            "objective rose from {prev} to {obj} in sweep {sweeps}"
        );
        trace.push(obj);
        if max_change < config.tolerance {
            converged = true;
            break;
        }
    }
    let coef: Vec<f64> = beta
        .iter()
        .zip(&p.scale)
        .map(|(b, s)| if *s > 0.0 { b / s } else { 0.0 })
        .collect();
    let intercept = p.y_mean - coef.iter().zip(&p.mean).map(|(c, m)| c * m).sum::<f64>();
    Ok(LassoModel {
        coef,
        intercept,
        alpha,
        col_mean: p.mean,
        col_scale: p.scale,
        sweeps,
        converged,
        objective_trace: trace,
    })
}
