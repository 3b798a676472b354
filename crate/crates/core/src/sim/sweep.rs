//! Parameter sweeps: every point is placed afresh and replicated over seeds.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::delay::objective_l;
use crate::error::{Error, Result};
use crate::partition::{allocate, subsets_by_segment};
use crate::placement::{cache_size_search, default_omegas, mvc_only_fill, svc_only_fill, PlacementInstance};
use crate::scheduler::Policy;
use crate::stats::{mean_sd, spearman};

use super::{rng_stream, run_phase, train, Metrics, Phase, SimConfig, World};

/// A header plus rows of formatted cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Column `name` parsed as numbers.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        self.rows.iter().map(|r| r[i].parse().ok()).collect()
    }
}

/// Seed of replication `r`.
pub fn replication_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn replicate<T: Send>(config: &SimConfig, f: impl Fn(SimConfig) -> Result<T> + Sync) -> Result<Vec<T>> {
    let seed = config.require_seed()?;
    (0..config.replications)
        .into_par_iter()
        .map(|r| {
            let mut c = config.clone();
            c.seed = Some(replication_seed(seed, r));
            f(c)
        })
        .collect()
}

/// Test-profile metrics of `policy`, training the index networks if needed.
fn evaluate(world: &World, policy: Policy) -> Result<Metrics> {
    let mut agents = if policy == Policy::Whittle { Some(train(world)?.0) } else { None };
    Ok(run_phase(world, Phase::Test, policy, agents.as_mut(), false)?.metrics)
}

fn push_stats(row: &mut Vec<String>, xs: &[f64]) {
    let (m, s) = mean_sd(xs);
    row.push(m.to_string());
    row.push(s.to_string());
}

struct PlacementPoint {
    objectives: [f64; 4],
    metrics: Metrics,
}

fn placement_point(config: SimConfig) -> Result<PlacementPoint> {
    let world = World::build(&config)?;
    let inst = PlacementInstance::new(&world.catalog, config.delay, config.channel, config.capacity);
    let l = |c| objective_l(&world.catalog, c, &config.delay, &config.channel);
    let objectives = [
        world.placement_objective,
        l(&mvc_only_fill(&inst)),
        l(&svc_only_fill(&inst)),
        cache_size_search(&inst, &default_omegas()).best.objective,
    ];
    let metrics = evaluate(&world, config.sweep.policy)?;
    Ok(PlacementPoint { objectives, metrics })
}

const PLACEMENT_HEADER: [&str; 9] = [
    "l_place",
    "l_mvc_only",
    "l_svc_only",
    "l_size_search",
    "hit_mean",
    "hit_sd",
    "satisfaction_mean",
    "satisfaction_sd",
    "waiting_mean",
];

fn placement_sweep(name: &str, key: &str, config: &SimConfig, values: &[f64], set: impl Fn(&mut SimConfig, f64)) -> Result<Table> {
    let mut header = vec![key];
    header.extend(PLACEMENT_HEADER);
    let mut table = Table::new(name, &header);
    for &v in values {
        let mut c = config.clone();
        set(&mut c, v);
        let points = replicate(&c, placement_point)?;
        let mut row = vec![v.to_string()];
        for i in 0..4 {
            row.push(mean_sd(&points.iter().map(|p| p.objectives[i]).collect::<Vec<_>>()).0.to_string());
        }
        push_stats(&mut row, &points.iter().map(|p| p.metrics.hit_probability).collect::<Vec<_>>());
        push_stats(&mut row, &points.iter().map(|p| p.metrics.delay_satisfaction).collect::<Vec<_>>());
        row.push(mean_sd(&points.iter().map(|p| p.metrics.waiting_slots).collect::<Vec<_>>()).0.to_string());
        table.rows.push(row);
    }
    Ok(table)
}

/// Placement objectives of the proposed and benchmark caches, and simulated
/// hit probability, across stitching costs.
pub fn sweep_chi(config: &SimConfig, chi: &[f64]) -> Result<Table> {
    placement_sweep("chi", "chi", config, chi, |c, v| c.delay.chi = v)
}

/// As [`sweep_chi`] across probabilities of leaving the high-rate state.
pub fn sweep_channel(config: &SimConfig, p_high: &[f64]) -> Result<Table> {
    placement_sweep("channel", "p_high", config, p_high, |c, v| c.channel.p_to_low = v)
}

/// Cache partition across segment subsets: per popularity rank, the mean mass
/// and allocated size. Also returns the mean Spearman correlation between mass
/// and size over the replications.
pub fn sweep_popularity(config: &SimConfig) -> Result<(Table, f64)> {
    let per = replicate(config, |c| {
        let world = World::build(&c)?;
        let subsets = subsets_by_segment(&world.catalog, c.segments_per_subset);
        let base = PlacementInstance::new(&world.catalog, c.delay, c.channel, c.capacity);
        let mut rng = rng_stream(world.seed, 7);
        let alloc = allocate(&base, &subsets, c.capacity, &c.admm, &mut rng)?;
        let mass: Vec<f64> = subsets.iter().map(|s| s.popularity_mass).collect();
        let rho = spearman(&mass, &alloc.sizes);
        let mut order: Vec<usize> = (0..subsets.len()).collect();
        order.sort_by(|&a, &b| mass[b].total_cmp(&mass[a]));
        let ranked: Vec<(f64, f64, f64)> = order.iter().map(|&i| (mass[i], alloc.sizes[i], alloc.satisfaction[i])).collect();
        Ok((ranked, rho))
    })?;
    let mut table = Table::new("popularity", &["rank", "mass_mean", "size_mbit_mean", "size_mbit_sd", "satisfaction_mean"]);
    let groups = per.first().map_or(0, |p| p.0.len());
    for r in 0..groups {
        let col = |f: fn(&(f64, f64, f64)) -> f64| per.iter().map(|p| f(&p.0[r])).collect::<Vec<f64>>();
        let mut row = vec![(r + 1).to_string(), mean_sd(&col(|x| x.0)).0.to_string()];
        push_stats(&mut row, &col(|x| x.1 / 1e6));
        row.push(mean_sd(&col(|x| x.2)).0.to_string());
        table.rows.push(row);
    }
    let rho = mean_sd(&per.iter().map(|p| p.1).collect::<Vec<_>>()).0;
    Ok((table, rho))
}

/// Test-profile metrics of each policy on the same worlds.
pub fn compare_schedulers(config: &SimConfig, policies: &[Policy]) -> Result<Table> {
    if policies.is_empty() {
        return Err(Error::param("no policies to compare"));
    }
    let per = replicate(config, |c| {
        let world = World::build(&c)?;
        policies.iter().map(|p| evaluate(&world, *p)).collect::<Result<Vec<_>>>()
    })?;
    let mut table = Table::new(
        "schedulers",
        &[
            "policy",
            "hit_mean",
            "hit_sd",
            "final_ma_mean",
            "final_ma_sd",
            "miss_rate_mean",
            "waiting_mean",
            "satisfaction_mean",
        ],
    );
    for (i, p) in policies.iter().enumerate() {
        let col = |f: fn(&Metrics) -> f64| per.iter().map(|m| f(&m[i])).collect::<Vec<f64>>();
        let mut row = vec![p.to_string()];
        push_stats(&mut row, &col(|m| m.hit_probability));
        push_stats(&mut row, &col(|m| m.final_moving_average));
        row.push(mean_sd(&col(|m| m.frame_missing_rate)).0.to_string());
        row.push(mean_sd(&col(|m| m.waiting_slots)).0.to_string());
        row.push(mean_sd(&col(|m| m.delay_satisfaction)).0.to_string());
        table.rows.push(row);
    }
    Ok(table)
}

/// Simulated hit probability across fixed base-layer widths.
pub fn sweep_x0(config: &SimConfig, x0: &[usize]) -> Result<Table> {
    let mut table = Table::new("x0", &["x0", "hit_mean", "hit_sd", "miss_rate_mean", "satisfaction_mean"]);
    for &w in x0 {
        let mut c = config.clone();
        c.catalog.quality.x0 = w;
        let ms = replicate(&c, |c| {
            let world = World::build(&c)?;
            evaluate(&world, c.sweep.policy)
        })?;
        let mut row = vec![w.to_string()];
        push_stats(&mut row, &ms.iter().map(|m| m.hit_probability).collect::<Vec<_>>());
        row.push(mean_sd(&ms.iter().map(|m| m.frame_missing_rate).collect::<Vec<_>>()).0.to_string());
        row.push(mean_sd(&ms.iter().map(|m| m.delay_satisfaction).collect::<Vec<_>>()).0.to_string());
        table.rows.push(row);
    }
    Ok(table)
}

/// Names accepted by [`run_sweep`].
pub const SWEEPS: &[&str] = &["chi", "channel", "popularity", "schedulers", "x0"];

/// Runs a named sweep with the values from the config. Extra lines for the
/// run metadata are returned alongside the table.
pub fn run_sweep(name: &str, config: &SimConfig) -> Result<(Table, Vec<String>)> {
    let s = &config.sweep;
    match name {
        "chi" => Ok((sweep_chi(config, &s.chi)?, Vec::new())),
        "channel" => Ok((sweep_channel(config, &s.p_high)?, Vec::new())),
        "popularity" => {
            let (t, rho) = sweep_popularity(config)?;
            Ok((t, vec![format!("spearman_mass_size={rho}")]))
        }
        "schedulers" => Ok((compare_schedulers(config, &s.policies)?, Vec::new())),
        "x0" => Ok((sweep_x0(config, &s.x0)?, Vec::new())),
        other => Err(Error::param(format!("unknown sweep `{other}`, expected one of {}", SWEEPS.join(", ")))),
    }
}

/// Seconds since the Unix epoch, for output file names.
pub fn timestamp() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Writes `<name>_<timestamp>.csv` and a `run.meta` echo of the resolved
/// config (plus `extra` lines) into `dir`.
pub fn write_outputs(dir: &Path, table: &Table, config: &SimConfig, extra: &[String]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}_{}.csv", table.name, timestamp()));
    table.write_csv(std::fs::File::create(&path)?)?;
    write_meta(dir, config, extra)?;
    Ok(path)
}

/// Writes `run.meta`: the resolved config followed by `extra` lines.
pub fn write_meta(dir: &Path, config: &SimConfig, extra: &[String]) -> Result<()> {
    let mut meta = config.to_text();
    for line in extra {
        meta.push_str(line);
        meta.push('\n');
    }
    std::fs::write(dir.join("run.meta"), meta)?;
    Ok(())
}
