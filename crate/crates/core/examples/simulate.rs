//! End-to-end run on the small configuration with a baseline scheduler.

use std::path::Path;

use vredge::scheduler::Policy;
use vredge::sim::{run, SimConfig};

fn main() -> vredge::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/small.conf");
    let mut config = SimConfig::parse(&std::fs::read_to_string(path)?)?;
    for policy in [Policy::UrgentFirst, Policy::RoundRobin, Policy::Random] {
        config.policy = policy;
        let out = run(&config, false)?;
        let m = &out.test.metrics;
        println!(
            "{policy}: hit {:.4}  final moving average {:.4}  waiting {:.2} slots  obsolete {}",
            m.hit_probability, m.final_moving_average, m.waiting_slots, m.obsolete_requests
        );
    }
    Ok(())
}
