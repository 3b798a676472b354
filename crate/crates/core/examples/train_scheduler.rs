//! Learns an index network on a toy arm and ranks it against the exact index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vredge::scheduler::{exact_whittle, learn_toy_index, Optimizer, SchedulerHyperparams, ToyMdp};
use vredge::stats::spearman;

fn main() -> vredge::Result<()> {
    // one-hot toy states need Adam and a discounted target to settle
    let hyper = SchedulerHyperparams {
        optimizer: Optimizer::Adam,
        lr_q: 3e-3,
        lr_w: 1e-4,
        discount_target: true,
        ..SchedulerHyperparams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mdp = ToyMdp::random_download(&mut rng, 3, 3, 2)?;
    let exact = exact_whittle(&mdp, hyper.discount)?;
    let (_, learned) = learn_toy_index(&mdp, &hyper, 50_000, &mut rng)?;
    for (s, (e, l)) in exact.iter().zip(&learned).enumerate() {
        println!("state {s:>2}: exact {e:>8.4}  learned {l:>8.4}");
    }
    println!("rank correlation {:.3}", spearman(&exact, &learned));
    Ok(())
}
