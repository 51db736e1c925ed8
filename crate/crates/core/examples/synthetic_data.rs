//! The task roster: five generators under six augmentations, written as CSV.

use nettopo::synthdata::{full_roster, generate, subsample, write_csv};

fn main() -> nettopo::Result<()> {
    let dir = std::env::temp_dir().join("nettopo-synthetic");
    std::fs::create_dir_all(&dir).map_err(|e| nettopo::Error::InvalidInput(e.to_string()))?;
    for spec in full_roster(200, 0) {
        let data = generate(&spec)?;
        let small = subsample(&data, spec.generator.small_data_per_class(), 1)?;
        let path = dir.join(format!("{}.csv", spec.id()));
        write_csv(&data, &path)?;
        println!(
            "{:<16} train {} test {} small-data train {}",
            spec.id(),
            data.train.len(),
            data.test.len(),
            small.train.len()
        );
    }
    println!("csv files in {}", dir.display());
    Ok(())
}
