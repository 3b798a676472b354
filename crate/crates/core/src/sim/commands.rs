//! Entry points behind the command-line tool. Each writes its CSV outputs and
//! a `run.meta` into a directory and returns the paths it wrote.

use std::path::{Path, PathBuf};

use crate::catalog::Catalog;
use crate::delay::CacheSolution;
use crate::error::Result;
use crate::partition::{allocate, subsets_by_segment, write_allocation_csv};
use crate::placement::{place, PlacementInstance};
use crate::scheduler::{save_checkpoint, CheckpointHeader};
use crate::stats::spearman;

use super::sweep::{run_sweep, timestamp, write_meta, write_outputs};
use super::{rng_stream, run, train, write_records_csv, SimConfig, World};

/// Slots per epoch implied by a moving-average window of 1000 epochs covering
/// about 8000 slots. Reported next to the derived value, which is usually
/// much smaller.
pub const WINDOW_IMPLIED_EPOCH_SLOTS: usize = 8;

fn csv_path(dir: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    Ok(dir.join(format!("{name}_{}.csv", timestamp())))
}

/// Writes `kind,segment,tile_row,tile_col,layer,bits`, one row per cached item.
/// SVC rows have an empty layer.
pub fn write_cache_csv<W: std::io::Write>(out: W, catalog: &Catalog, cache: &CacheSolution) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["kind", "segment", "tile_row", "tile_col", "layer", "bits"])?;
    for t in &cache.mvcs {
        w.write_record([
            "mvc".to_string(),
            t.segment.to_string(),
            t.tile.row.to_string(),
            t.tile.col.to_string(),
            t.layer.index().to_string(),
            catalog.mvc_size(*t).to_string(),
        ])?;
    }
    for f in &cache.svcs {
        w.write_record([
            "svc".to_string(),
            f.segment.to_string(),
            f.center.row.to_string(),
            f.center.col.to_string(),
            String::new(),
            catalog.svc_size(*f).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn epoch_lines(world: &World) -> Vec<String> {
    vec![
        format!("mean_delay_s={}", world.mean_delay),
        format!("epoch_slots={}", world.epoch_slots),
        format!("epoch_slots_implied_by_window={WINDOW_IMPLIED_EPOCH_SLOTS}"),
    ]
}

/// Places the whole catalog into the configured capacity.
pub fn place_cmd(config: &SimConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let world = World::build(config)?;
    let inst = PlacementInstance::new(&world.catalog, config.delay, config.channel, config.capacity);
    let result = place(&inst);
    let path = csv_path(dir, "place")?;
    write_cache_csv(std::fs::File::create(&path)?, &world.catalog, &result.cache)?;
    let mut extra = vec![
        format!("objective={}", result.objective),
        format!("cache_bits={}", result.cache.weight(&world.catalog)),
        format!("cached_svcs={}", result.cache.svcs.len()),
        format!("cached_mvcs={}", result.cache.mvcs.len()),
    ];
    extra.extend(epoch_lines(&world));
    write_meta(dir, config, &extra)?;
    Ok(vec![path, dir.join("run.meta")])
}

/// Splits the capacity across segment subsets.
pub fn partition_cmd(config: &SimConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let world = World::build(config)?;
    let subsets = subsets_by_segment(&world.catalog, config.segments_per_subset);
    let base = PlacementInstance::new(&world.catalog, config.delay, config.channel, config.capacity);
    let mut rng = rng_stream(world.seed, 7);
    let alloc = allocate(&base, &subsets, config.capacity, &config.admm, &mut rng)?;
    let path = csv_path(dir, "partition")?;
    write_allocation_csv(std::fs::File::create(&path)?, &subsets, &alloc)?;
    let mass: Vec<f64> = subsets.iter().map(|s| s.popularity_mass).collect();
    let extra = vec![
        format!("total_satisfaction={}", alloc.total),
        format!("iterations={}", alloc.iterations),
        format!("converged={}", alloc.converged),
        format!("spearman_mass_size={}", spearman(&mass, &alloc.sizes)),
    ];
    write_meta(dir, config, &extra)?;
    Ok(vec![path, dir.join("run.meta")])
}

/// Runs the configured policy (training it first if needed) and writes the
/// per-slot records of the test profile.
pub fn simulate_cmd(config: &SimConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let out = run(config, true)?;
    let path = csv_path(dir, "simulate")?;
    write_records_csv(std::fs::File::create(&path)?, &out.test.records)?;
    let ma = csv_path(dir, "moving_average")?;
    let mut w = csv::Writer::from_path(&ma)?;
    w.write_record(["epoch", "hit_probability"])?;
    for (i, v) in out.test.metrics.moving_average.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush()?;
    let mut extra = epoch_lines(&out.world);
    extra.extend(out.test.metrics.summary().lines().map(String::from));
    write_meta(dir, config, &extra)?;
    Ok(vec![path, ma, dir.join("run.meta")])
}

/// Trains the index networks on the training profile and saves them as
/// `checkpoint.txt` and `checkpoint.bin`.
pub fn train_cmd(config: &SimConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let world = World::build(config)?;
    let (agents, out) = train(&world)?;
    std::fs::create_dir_all(dir)?;
    let stem = dir.join("checkpoint");
    let header = CheckpointHeader {
        features: world.feature_len(),
        hidden: world.hyper().hidden,
        agents: agents.len(),
        seed: world.seed,
        iteration: out.updates as u64,
    };
    save_checkpoint(&stem, &header, &agents)?;
    let mut extra = epoch_lines(&world);
    extra.push(format!("updates={}", out.updates));
    extra.push(format!("value_loss={}", out.losses.0));
    extra.push(format!("index_loss={}", out.losses.1));
    extra.push(format!("train_hit_probability={}", out.metrics.hit_probability));
    write_meta(dir, config, &extra)?;
    Ok(vec![stem.with_extension("txt"), stem.with_extension("bin"), dir.join("run.meta")])
}

/// Runs a named sweep.
pub fn sweep_cmd(name: &str, config: &SimConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let (table, extra) = run_sweep(name, config)?;
    let path = write_outputs(dir, &table, config, &extra)?;
    Ok(vec![path, dir.join("run.meta")])
}

/// Writes the synthetic training and test profiles as trace CSV.
pub fn synth_traces_cmd(config: &SimConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let world = World::build(config)?;
    let train = csv_path(dir, "traces_train")?;
    world.train.write_csv(std::fs::File::create(&train)?)?;
    let test = csv_path(dir, "traces_test")?;
    world.test.write_csv(std::fs::File::create(&test)?)?;
    write_meta(dir, config, &[])?;
    Ok(vec![train, test, dir.join("run.meta")])
}

