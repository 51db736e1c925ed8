//! Forward-only features of a convolutional block.

use nettopo::topofeat::{conv_extract, ExtractionConfig, GMode, Tensor4};

fn main() -> nettopo::Result<()> {
    let weights = Tensor4::from_fn([8, 3, 3, 3], |[o, i, a, b]| ((o * 31 + i * 7 + a * 3 + b) as f64).sin())?;
    let acts = Tensor4::from_fn([16, 3, 6, 6], |[s, c, y, x]| {
        ((s + 1) as f64 * 0.1 + (c * 36 + y * 6 + x) as f64 * 0.01)
            .cos()
            .max(0.0)
    })?;
    let partners: Vec<Vec<f64>> = (0..4)
        .map(|p| (0..16).map(|s| ((s * (p + 2)) as f64).sin()).collect())
        .collect();
    for g_mode in GMode::ALL {
        let config = ExtractionConfig {
            g_mode,
            ..Default::default()
        };
        let t = conv_extract(&weights, &acts, &partners, &config)?;
        println!("{g_mode:<5} {} features, layout {}", t.len(), t.layout.hash());
    }
    Ok(())
}
