//! Topological feature vector of a network before and after training.

use nettopo::autonet::{accuracy, init_net, train, TrainConfig};
use nettopo::synthdata::{generate, Generator, TaskSpec};
use nettopo::topofeat::{characterize, ExtractionConfig, GMode};

fn main() -> nettopo::Result<()> {
    let data = generate(&TaskSpec::new(Generator::Moons, 0))?;
    let (x, y) = (data.train.matrix(), &data.train.labels);
    let mut net = init_net(&[2, 25, 25, 25, 25, 25, 2], 3)?;
    let config = ExtractionConfig {
        g_mode: GMode::Ph,
        ..Default::default()
    };

    let before = characterize(&net, &x, &config)?;
    train(&mut net, &x, y, &TrainConfig::default())?;
    let after = characterize(&net, &x, &config)?;
    println!(
        "layout {} with {} components; train accuracy {:.3}",
        after.layout.hash(),
        after.len(),
        accuracy(&net, &x, y)?
    );
    println!("{:<28} {:>12} {:>12}", "component", "untrained", "trained");
    for (i, c) in after.layout.components().iter().enumerate().step_by(24) {
        println!("{:<28} {:>12.5} {:>12.5}", c.name, before.values[i], after.values[i]);
    }
    Ok(())
}
