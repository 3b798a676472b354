//! Greedy MVC/SVC placement on a small catalog, compared with single-kind fills.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vredge::catalog::{Catalog, CatalogSpec, QualityConfig, TileGrid};
use vredge::delay::{ChannelModel, DelayParams};
use vredge::placement::{mvc_only_fill, place, svc_only_fill, PlacementInstance};

fn main() -> vredge::Result<()> {
    let spec = CatalogSpec {
        grid: TileGrid::new(6, 12, 3, 3)?,
        segments: 3,
        quality: QualityConfig::new(16, 12),
        ..CatalogSpec::default()
    };
    let catalog = spec.build(&mut ChaCha8Rng::seed_from_u64(5))?;
    let total: f64 = catalog.svcs().map(|f| catalog.svc_size(f)).sum();

    for chi in [4e-8, 1e-6] {
        let params = DelayParams { chi, ..DelayParams::default() };
        println!("stitching cost {chi:e} s/bit");
        table(&catalog, params, total);
    }
    Ok(())
}

fn table(catalog: &Catalog, params: DelayParams, total: f64) {
    println!("capacity_share  proposed  mvc_only  svc_only  cached_svcs  cached_mvcs");
    for share in [0.02, 0.05, 0.1, 0.2] {
        let inst = PlacementInstance::new(catalog, params, ChannelModel::default(), share * total);
        let r = place(&inst);
        println!(
            "{share:>14.2}  {:>8.4}  {:>8.4}  {:>8.4}  {:>11}  {:>11}",
            r.objective,
            inst.objective(&mvc_only_fill(&inst)) + 0.0,
            inst.objective(&svc_only_fill(&inst)),
            r.cache.svcs.len(),
            r.cache.mvcs.len(),
        );
    }
}
