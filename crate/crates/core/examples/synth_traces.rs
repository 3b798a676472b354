//! Synthetic head-movement traces and how well simple predictors follow them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vredge::catalog::{Tile, TileGrid};
use vredge::dynamics::{prediction_accuracy, synth_trajectory, LearnedMarkov, Persistence, SegmentClock, Velocity};

fn main() -> vredge::Result<()> {
    let grid = TileGrid::equirect_default();
    let clock = SegmentClock::new(30, 4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut walk = |n: usize| -> vredge::Result<Vec<Vec<Tile>>> {
        (0..n)
            .map(|_| {
                let t = synth_trajectory(&grid, 0.05, 120, &clock, Tile::new(6, 12), &mut rng)?;
                Ok(t.into_iter().map(|v| v.tile).collect())
            })
            .collect()
    };
    let train = walk(20)?;
    let test = walk(10)?;
    let markov = LearnedMarkov::fit(&grid, train.iter().map(|t| t.as_slice()));
    for horizon in [1, 5, 15] {
        println!(
            "horizon {horizon:>2}: persistence {:.3}  velocity {:.3}  markov {:.3}",
            prediction_accuracy(&Persistence, &test, 4, horizon, &grid),
            prediction_accuracy(&Velocity, &test, 4, horizon, &grid),
            prediction_accuracy(&markov, &test, 4, horizon, &grid),
        );
    }
    Ok(())
}
