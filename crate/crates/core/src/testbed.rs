//! Small random instances for experiments and cross-checks.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::catalog::{Catalog, CatalogSpec, PopularityModel, QualityConfig, TileGrid, KBIT};
use crate::delay::{ChannelModel, DelayParams};
use crate::error::Result;

/// A catalog with delay settings and a cache capacity.
#[derive(Clone, Debug)]
pub struct TinyInstance {
    pub catalog: Catalog,
    pub params: DelayParams,
    pub channel: ChannelModel,
    pub capacity: f64,
}

/// Grid shapes `(rows, cols, segments)` with at most `max_svcs` SVCs in total.
pub fn tiny_shapes(max_svcs: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for rows in 1..=4 {
        for cols in 2..=6 {
            for segments in 1..=3 {
                let n = rows * cols * segments;
                if n <= max_svcs && rows * cols >= 3 {
                    out.push((rows, cols, segments));
                }
            }
        }
    }
    out
}

/// Random popularity over `n` viewpoints, flat Dirichlet.
pub fn random_popularity<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut p: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// How random tiny instances are drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TinyConfig {
    pub max_svcs: usize,
    /// Relative spread of SVC sizes. `None` keeps the per-MVC spread of the
    /// default catalog, which makes SVCs of few MVCs very uneven.
    pub svc_size_cv: Option<f64>,
}

impl TinyConfig {
    /// SVC sizes as dispersed as in the full-scale catalog (40 MVCs of
    /// 30 +- 10 Kbit each).
    pub fn full_scale_sizes(max_svcs: usize) -> Self {
        TinyConfig {
            max_svcs,
            svc_size_cv: Some(1.0 / (3.0 * 40f64.sqrt())),
        }
    }
}

/// A random placement instance with at most `max_svcs` SVCs and per-MVC sizes
/// drawn as in the default catalog.
pub fn tiny_placement<R: Rng + ?Sized>(rng: &mut R, max_svcs: usize) -> Result<TinyInstance> {
    tiny_instance(
        rng,
        TinyConfig {
            max_svcs,
            svc_size_cv: None,
        },
    )
}

/// A random placement instance.
///
/// Stitching cost is drawn so that the deadline sits inside the spread of
/// group-route delays, making the choice between MVCs and SVCs matter. The
/// capacity always admits at least the smallest MVC group.
pub fn tiny_instance<R: Rng + ?Sized>(rng: &mut R, config: TinyConfig) -> Result<TinyInstance> {
    let max_svcs = config.max_svcs;
    let shapes = tiny_shapes(max_svcs);
    let &(rows, cols, segments) = shapes.choose(rng).expect("no tiny shapes");
    let fov_cols = if cols >= 4 && rng.gen_bool(0.25) { 2 } else { 1 };
    let grid = TileGrid::new(rows, cols, 1, fov_cols)?;
    let fov = grid.fov_size();
    let x0 = rng.gen_range(fov..=(fov + 3).min(grid.tile_count()));
    let x_total = x0 + rng.gen_range(0..=x0.min(2));
    let size_sd = match config.svc_size_cv {
        None => 10.0 * KBIT,
        Some(cv) => cv * (x_total as f64).sqrt() * 30.0 * KBIT,
    };
    let spec = CatalogSpec {
        grid,
        segments,
        quality: QualityConfig::new(x_total, x0),
        size_sd,
        popularity: PopularityModel::Explicit(random_popularity(rng, grid.tile_count() * segments)),
        ..CatalogSpec::default()
    };
    let catalog = spec.build(rng)?;
    let member = x_total as f64 * 30.0 * KBIT;
    let deadline = 0.085;
    let params = DelayParams {
        chi: rng.gen_range(0.5..1.4) * deadline / member,
        deadline,
        ..DelayParams::default()
    };
    let total: f64 = catalog.svcs().map(|f| catalog.svc_size(f)).sum();
    let smallest = catalog
        .svcs()
        .map(|f| catalog.member_size(f))
        .fold(f64::INFINITY, f64::min);
    let capacity = smallest + rng.gen_range(0.0..0.6) * (total - smallest);
    Ok(TinyInstance {
        catalog,
        params,
        channel: ChannelModel::default(),
        capacity,
    })
}
