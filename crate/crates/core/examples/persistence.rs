//! Deaths, summary statistics and their gradient for a small point set.

use nettopo::persistence::{dedup_points, g_both, stats_backward, zero_dim_deaths, PointSet1D, TopoStats};
use nettopo::rng::rng_from;

fn main() -> nettopo::Result<()> {
    let raw = PointSet1D::new(vec![3.0, 0.0, 1.0, 1.0, 10.0])?;
    let dedup = dedup_points(&raw, &mut rng_from(7, &[]));
    println!("survivors {:?} from indices {:?}", dedup.set.values(), dedup.origin);

    let record = zero_dim_deaths(&dedup.set);
    println!("deaths {:?} created by pairs {:?}", record.deaths, record.pairs);
    println!("g_both = {:?}", g_both(&dedup.set));

    let upstream = TopoStats {
        min: 0.0,
        max: 1.0,
        mean: 0.0,
        std: 0.0,
    };
    let grad = stats_backward(&dedup.set, &record, &upstream)?;
    println!("d(max death)/d(points) = {grad:?}");
    Ok(())
}
