//! Splits one cache budget across per-segment subsets with the ADMM loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vredge::catalog::{CatalogSpec, PopularityModel, QualityConfig, TileGrid};
use vredge::delay::{ChannelModel, DelayParams};
use vredge::partition::{allocate, subsets_by_segment, AdmmParams};
use vredge::placement::PlacementInstance;

fn main() -> vredge::Result<()> {
    let spec = CatalogSpec {
        grid: TileGrid::new(6, 12, 3, 3)?,
        segments: 4,
        quality: QualityConfig::new(16, 12),
        popularity: PopularityModel::Hotspot { spread: 2.0, segment_skew: 0.9 },
        ..CatalogSpec::default()
    };
    let catalog = spec.build(&mut ChaCha8Rng::seed_from_u64(11))?;
    let total: f64 = catalog.svcs().map(|f| catalog.svc_size(f)).sum();
    let capacity = 0.04 * total;
    let base = PlacementInstance::new(&catalog, DelayParams::default(), ChannelModel::default(), capacity);
    let subsets = subsets_by_segment(&catalog, 1);

    let alloc = allocate(&base, &subsets, capacity, &AdmmParams::default(), &mut ChaCha8Rng::seed_from_u64(1))?;
    println!("{} iterations, converged: {}", alloc.iterations, alloc.converged);
    for (i, s) in subsets.iter().enumerate() {
        println!(
            "subset {i}: mass {:.3}  share {:.3}  satisfaction {:.4}",
            s.popularity_mass,
            alloc.sizes[i] / capacity,
            alloc.satisfaction[i]
        );
    }
    println!("total satisfaction {:.4}", alloc.total);
    Ok(())
}
