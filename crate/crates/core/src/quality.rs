//! Frame-miss model for the base-layer width, and the width controller.
//!
//! The viewpoint's distance from buffered coverage is tracked as a tier index
//! on concentric square rings around the covered center. Tiers above the
//! coverable maximum `F` count as frame misses.

use std::io::Write;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::catalog::TileGrid;
use crate::error::{Error, Result};

/// Tiles in ring `z` of a square ring geometry.
pub fn ring_size(z: usize) -> usize {
    if z == 0 {
        1
    } else {
        8 * z
    }
}

/// Coverable tier `F` and ring sizes `M(0..=F)` for `x0` base-layer tiles.
pub fn tier_geometry(x0: usize, grid: &TileGrid) -> Result<(usize, Vec<usize>)> {
    if x0 < 1 {
        return Err(Error::param("x0 must be at least 1"));
    }
    if x0 > grid.tile_count() {
        return Err(Error::param(format!("x0 = {x0} exceeds the {} tiles of the grid", grid.tile_count())));
    }
    let mut sizes = vec![1];
    let mut total = 1;
    loop {
        let next = ring_size(sizes.len());
        if total + next > x0 {
            break;
        }
        total += next;
        sizes.push(next);
    }
    Ok((sizes.len() - 1, sizes))
}

/// Movement chain over tiers.
#[derive(Clone, Debug, PartialEq)]
pub struct MovementChain {
    /// Probability of leaving a tile in one given direction per slot.
    pub move_prob: f64,
    /// Probability of landing on tiles renderable after downloading an SVC.
    pub reacquire_prob: f64,
    pub max_tier: usize,
    /// Explicit ring sizes; rings past the end use the square geometry.
    tier_sizes: Vec<usize>,
}

impl MovementChain {
    pub fn new(move_prob: f64, reacquire_prob: f64, max_tier: usize) -> Result<Self> {
        let sizes = (0..=max_tier).map(ring_size).collect();
        Self::with_tier_sizes(move_prob, reacquire_prob, max_tier, sizes)
    }

    pub fn with_tier_sizes(move_prob: f64, reacquire_prob: f64, max_tier: usize, tier_sizes: Vec<usize>) -> Result<Self> {
        if !(0.0..=0.25).contains(&move_prob) {
            return Err(Error::param(format!("move probability {move_prob} outside [0, 1/4]")));
        }
        if !(0.0..=1.0).contains(&reacquire_prob) {
            return Err(Error::param(format!("reacquire probability {reacquire_prob} outside [0, 1]")));
        }
        if tier_sizes.len() <= max_tier || tier_sizes.contains(&0) {
            return Err(Error::param("tier sizes must be positive and cover 0..=F"));
        }
        Ok(MovementChain {
            move_prob,
            reacquire_prob,
            max_tier,
            tier_sizes,
        })
    }

    /// Chain whose coverable tier follows from `x0` base tiles.
    pub fn for_x0(move_prob: f64, reacquire_prob: f64, x0: usize, grid: &TileGrid) -> Result<Self> {
        let (f, sizes) = tier_geometry(x0, grid)?;
        Self::with_tier_sizes(move_prob, reacquire_prob, f, sizes)
    }

    pub fn tier_size(&self, z: usize) -> usize {
        self.tier_sizes.get(z).copied().unwrap_or_else(|| ring_size(z))
    }

    /// `q_z = q M(z) / sum_{z' <= F} M(z')`.
    pub fn reacquire(&self, z: usize) -> f64 {
        let covered: usize = (0..=self.max_tier).map(|t| self.tier_size(t)).sum();
        self.reacquire_prob * self.tier_size(z) as f64 / covered as f64
    }
}

/// Outgoing probabilities of one tier.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionRow {
    /// `(target tier, probability)`, sorted by target.
    pub probs: Vec<(usize, f64)>,
    /// Terms that fell outside `[0, 1]` and were clamped.
    pub clamped: usize,
    /// Whether the row had to be rescaled to sum to one.
    pub renormalized: bool,
}

impl TransitionRow {
    pub fn prob(&self, to: usize) -> f64 {
        self.probs.iter().find(|(t, _)| *t == to).map_or(0.0, |(_, p)| *p)
    }
}

/// Transition probabilities out of tier `state`.
///
/// Terms outside `[0, 1]` are clamped and rows that do not sum to one are
/// rescaled; both are logged.
pub fn tier_transitions(chain: &MovementChain, state: usize) -> TransitionRow {
    let p = chain.move_prob;
    let q = |z: usize| chain.reacquire(z);
    let mut terms: Vec<(usize, f64)> = Vec::new();
    if state == 0 {
        let up = 4.0 * p * (1.0 - q(0));
        terms.push((1, up));
        terms.push((0, 1.0 - up));
    } else {
        let beta = state.min(chain.max_tier);
        let below: f64 = (0..beta).map(q).sum();
        let through = below + q(beta);
        terms.push((state + 1, p * (1.0 - through)));
        terms.push((state - 1, p * (1.0 - below + 4.0 * q(state - 1))));
        for z in 2..=beta {
            terms.push((z, 4.0 * p * q(z)));
        }
        terms.push((state, 1.0 - 2.0 * p * (1.0 + below) + p * q(state)));
    }
    let mut clamped = 0;
    for t in terms.iter_mut() {
        if !(0.0..=1.0).contains(&t.1) {
            debug!("tier {state} -> {} probability {} clamped", t.0, t.1);
            t.1 = t.1.clamp(0.0, 1.0);
            clamped += 1;
        }
    }
    terms.sort_by_key(|t| t.0);
    let mut probs: Vec<(usize, f64)> = Vec::new();
    for (to, pr) in terms {
        match probs.last_mut() {
            Some(last) if last.0 == to => last.1 += pr,
            _ => probs.push((to, pr)),
        }
    }
    let sum: f64 = probs.iter().map(|t| t.1).sum();
    let renormalized = (sum - 1.0).abs() > 1e-12;
    if renormalized {
        debug!("tier {state} row sums to {sum}, rescaled");
        probs.iter_mut().for_each(|t| t.1 /= sum);
    }
    TransitionRow {
        probs,
        clamped,
        renormalized,
    }
}

/// Distribution of frame misses over a window of slots.
#[derive(Clone, Debug, PartialEq)]
pub struct MissStats {
    pub mean_misses: f64,
    pub horizon_slots: usize,
    /// Probability of each miss count `0..=horizon`.
    pub distribution: Vec<f64>,
}

fn rows_up_to(chain: &MovementChain, max_state: usize) -> Vec<TransitionRow> {
    (0..=max_state).map(|s| tier_transitions(chain, s)).collect()
}

/// Exact miss-count distribution over `horizon` slots starting from tier 0.
pub fn chain_misses(chain: &MovementChain, horizon: usize) -> Result<MissStats> {
    if horizon < 1 {
        return Err(Error::param("horizon must be at least one slot"));
    }
    // tiers rise by at most one per slot
    let max_state = horizon;
    let rows = rows_up_to(chain, max_state);
    let width = horizon + 1;
    let mut cur = vec![0.0; (max_state + 1) * width];
    cur[0] = 1.0;
    for _ in 0..horizon {
        let mut next = vec![0.0; cur.len()];
        for s in 0..=max_state {
            for n in 0..width {
                let mass = cur[s * width + n];
                if mass == 0.0 {
                    continue;
                }
                for &(t, pr) in &rows[s].probs {
                    if t > max_state || pr == 0.0 {
                        continue;
                    }
                    let m = if t > chain.max_tier { n + 1 } else { n };
                    next[t * width + m.min(horizon)] += mass * pr;
                }
            }
        }
        cur = next;
    }
    let mut distribution = vec![0.0; width];
    for s in 0..=max_state {
        for n in 0..width {
            distribution[n] += cur[s * width + n];
        }
    }
    let mean_misses = distribution.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
    Ok(MissStats {
        mean_misses,
        horizon_slots: horizon,
        distribution,
    })
}

/// Exact miss statistics for base-layer width `x0`.
pub fn expected_misses(move_prob: f64, reacquire_prob: f64, x0: usize, grid: &TileGrid, horizon: usize) -> Result<MissStats> {
    chain_misses(&MovementChain::for_x0(move_prob, reacquire_prob, x0, grid)?, horizon)
}

/// Monte-Carlo miss counts: `(mean, sd, empirical distribution)`.
///
/// Each episode draws from its own stream of the seeded generator, so the
/// result does not depend on the number of threads.
pub fn simulate_misses(chain: &MovementChain, horizon: usize, episodes: usize, seed: u64) -> (f64, f64, Vec<f64>) {
    let rows = rows_up_to(chain, horizon);
    let counts: Vec<usize> = (0..episodes)
        .into_par_iter()
        .map(|ep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(ep as u64);
            let mut s = 0usize;
            let mut misses = 0;
            for _ in 0..horizon {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let row = &rows[s.min(horizon)].probs;
                let mut to = row[row.len() - 1].0;
                for &(t, pr) in row {
                    acc += pr;
                    if u < acc {
                        to = t;
                        break;
                    }
                }
                s = to;
                if s > chain.max_tier {
                    misses += 1;
                }
            }
            misses
        })
        .collect();
    let n = episodes.max(1) as f64;
    let mean = counts.iter().sum::<usize>() as f64 / n;
    let var = counts.iter().map(|c| (*c as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let mut dist = vec![0.0; horizon + 1];
    for c in counts {
        dist[c] += 1.0 / n;
    }
    (mean, var.sqrt(), dist)
}

/// Total-variation distance between two distributions on the same support.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    0.5 * (0..n)
        .map(|i| (a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

/// One step of the width controller: widen when misses exceed the target.
pub fn adapt_x0(current_x0: usize, measured_miss_rate: f64, threshold: f64, bounds: (usize, usize)) -> usize {
    let (lo, hi) = bounds;
    if measured_miss_rate > threshold {
        (current_x0 + 1).min(hi)
    } else {
        current_x0.saturating_sub(1).max(lo)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MissSweepRow {
    pub x0: usize,
    pub max_tier: usize,
    pub mean_misses: f64,
    pub mc_mean: f64,
    pub mc_sd: f64,
}

/// Exact and Monte-Carlo miss counts across base-layer widths.
pub fn sweep_misses(
    move_prob: f64,
    reacquire_prob: f64,
    x0s: &[usize],
    grid: &TileGrid,
    horizon: usize,
    episodes: usize,
    seed: u64,
) -> Result<Vec<MissSweepRow>> {
    x0s.iter()
        .map(|&x0| {
            let chain = MovementChain::for_x0(move_prob, reacquire_prob, x0, grid)?;
            let exact = chain_misses(&chain, horizon)?;
            let (mc_mean, mc_sd, _) = simulate_misses(&chain, horizon, episodes, seed);
            Ok(MissSweepRow {
                x0,
                max_tier: chain.max_tier,
                mean_misses: exact.mean_misses,
                mc_mean,
                mc_sd,
            })
        })
        .collect()
}

/// Writes `x0,F,mean_misses,mc_mean,mc_sd`.
pub fn write_miss_sweep_csv<W: Write>(out: W, rows: &[MissSweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x0", "F", "mean_misses", "mc_mean", "mc_sd"])?;
    for r in rows {
        w.write_record([
            r.x0.to_string(),
            r.max_tier.to_string(),
            r.mean_misses.to_string(),
            r.mc_mean.to_string(),
            r.mc_sd.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TileGrid {
        TileGrid::equirect_default()
    }

    #[test]
    fn ring_arithmetic() {
        let g = grid();
        assert_eq!(tier_geometry(1, &g).unwrap().0, 0);
        assert_eq!(tier_geometry(9, &g).unwrap(), (1, vec![1, 8]));
        assert_eq!(tier_geometry(35, &g).unwrap().0, 2);
        assert_eq!(tier_geometry(24, &g).unwrap().0, 1);
        assert_eq!(tier_geometry(25, &g).unwrap().0, 2);
        assert!(tier_geometry(0, &g).is_err());
    }

    #[test]
    fn hand_row() {
        let chain = MovementChain::with_tier_sizes(0.05, 0.5, 1, vec![1, 8]).unwrap();
        let row = tier_transitions(&chain, 1);
        assert!((row.prob(2) - 0.025).abs() < 1e-12);
        assert!((row.prob(0) - 0.05 * 7.0 / 6.0).abs() < 1e-12);
        assert!((row.prob(1) - (1.0 - 0.1 * 19.0 / 18.0 + 0.05 * 4.0 / 9.0)).abs() < 1e-12);
        assert!(!row.renormalized);
        assert_eq!(row.clamped, 0);
    }

    #[test]
    fn static_viewer_stays_put() {
        let chain = MovementChain::new(0.0, 0.4, 2).unwrap();
        for s in 0..6 {
            assert_eq!(tier_transitions(&chain, s).prob(s), 1.0);
        }
        assert_eq!(chain_misses(&chain, 20).unwrap().mean_misses, 0.0);
    }

    #[test]
    fn first_rule_without_reacquire() {
        let chain = MovementChain::new(0.1, 0.0, 1).unwrap();
        assert!((tier_transitions(&chain, 0).prob(1) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn rows_sum_to_one() {
        for &(p, q) in &[(0.25, 1.0), (0.2, 0.9), (0.01, 0.1)] {
            for f in 0..4 {
                let chain = MovementChain::new(p, q, f).unwrap();
                for s in 0..30 {
                    let row = tier_transitions(&chain, s);
                    let sum: f64 = row.probs.iter().map(|t| t.1).sum();
                    assert!((sum - 1.0).abs() < 1e-9);
                    assert!(row.probs.iter().all(|t| (0.0..=1.0).contains(&t.1)));
                }
            }
        }
    }

    #[test]
    fn unreachable_misses() {
        let chain = MovementChain::new(0.2, 0.3, 5).unwrap();
        let s = chain_misses(&chain, 5).unwrap();
        assert_eq!(s.mean_misses, 0.0);
        assert!((s.distribution[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_matches_monte_carlo() {
        let chain = MovementChain::new(0.1, 0.4, 1).unwrap();
        let exact = chain_misses(&chain, 12).unwrap();
        let (mean, _, dist) = simulate_misses(&chain, 12, 40_000, 3);
        assert!((exact.mean_misses - mean).abs() / exact.mean_misses < 0.03);
        assert!(total_variation(&exact.distribution, &dist) < 0.02);
        let total: f64 = exact.distribution.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn controller_steps_and_clamps() {
        assert_eq!(adapt_x0(68, 0.5, 0.1, (35, 68)), 68);
        assert_eq!(adapt_x0(35, 0.0, 0.1, (35, 68)), 35);
        assert_eq!(adapt_x0(50, 0.2, 0.1, (35, 68)), 51);
        assert_eq!(adapt_x0(51, 0.05, 0.1, (35, 68)), 50);
    }
}
