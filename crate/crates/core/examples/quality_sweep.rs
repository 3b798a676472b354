//! Expected frame misses against base-layer width, exact and sampled.

use vredge::catalog::TileGrid;
use vredge::quality::{adapt_x0, sweep_misses};

fn main() -> vredge::Result<()> {
    let grid = TileGrid::equirect_default();
    let x0s: Vec<usize> = (35..=68).step_by(3).collect();
    let rows = sweep_misses(0.05, 0.3, &x0s, &grid, 121, 20_000, 9)?;
    println!("  x0  F  exact    sampled");
    for r in &rows {
        println!("{:>4} {:>2}  {:>7.3}  {:>7.3} +- {:.3}", r.x0, r.max_tier, r.mean_misses, r.mc_mean, r.mc_sd);
    }
    let next = adapt_x0(49, 0.08, 0.05, (35, 68));
    println!("miss rate 0.08 over a 0.05 target moves x0 from 49 to {next}");
    Ok(())
}
