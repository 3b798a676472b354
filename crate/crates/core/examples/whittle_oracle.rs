//! Exact Whittle indices and an indexability check on a random download MDP.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vredge::scheduler::{exact_whittle, indexability_sweep, ToyMdp};

fn main() -> vredge::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mdp = ToyMdp::random_download(&mut rng, 3, 2, 2)?;
    let index = exact_whittle(&mdp, 0.95)?;
    for (s, w) in index.iter().enumerate() {
        println!("state {s:>2}: index {w:>8.4}");
    }
    let sweep = indexability_sweep(&mdp, 0.95, 200)?;
    println!(
        "{} subsidies, {} violations, passive set spans the states: {}",
        sweep.subsidies, sweep.violations, sweep.spans_state_space
    );
    Ok(())
}
