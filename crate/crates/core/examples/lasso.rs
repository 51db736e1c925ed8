//! Sparse recovery with cyclic coordinate descent.

use nettopo::autonet::Matrix;
use nettopo::estimators::{lasso_alpha_max, lasso_fit};
use nettopo::rng::rng_from;
use rand::Rng;

fn main() -> nettopo::Result<()> {
    let mut rng = rng_from(11, &[]);
    let (n, d) = (80, 10);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let truth = [3.0, 0.0, 0.0, -2.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.0];
    let y: Vec<f64> = rows
        .iter()
        .map(|r| 1.0 + r.iter().zip(truth).map(|(a, b)| a * b).sum::<f64>() + rng.random_range(-0.05..0.05))
        .collect();
    let x = Matrix::from_rows(&rows)?;
    let top = lasso_alpha_max(&x, &y)?;
    for alpha in [0.0, 0.01, 0.1, top] {
        let m = lasso_fit(&x, &y, alpha)?;
        let coef: Vec<String> = m.coef.iter().map(|c| format!("{c:+.2}")).collect();
        println!(
            "alpha {alpha:<8.4} sweeps {:<4} intercept {:+.3} coef [{}]",
            m.sweeps,
            m.intercept,
            coef.join(" ")
        );
    }
    Ok(())
}
