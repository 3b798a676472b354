//! Exact Whittle indices of small single-arm MDPs.
//!
//! Each decision takes the same delivery delay `phi` slots, so the per-step
//! discount is `kappa^phi`. The passive action earns the subsidy on top of its
//! own reward.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};

const VI_TOL: f64 = 1e-11;
const VI_MAX_SWEEPS: usize = 200_000;
/// Bisection stops once the bracket is this narrow.
pub const INDEX_TOL: f64 = 1e-6;

/// Sparse two-action MDP; action 0 is passive, 1 is active.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyMdp {
    /// `transitions[a][s]` lists `(next state, probability)`.
    pub transitions: [Vec<Vec<(usize, f64)>>; 2],
    pub rewards: [Vec<f64>; 2],
    /// Slots per decision.
    pub delay: usize,
}

impl ToyMdp {
    pub fn new(transitions: [Vec<Vec<(usize, f64)>>; 2], rewards: [Vec<f64>; 2], delay: usize) -> Result<Self> {
        let n = rewards[0].len();
        if n == 0 || rewards[1].len() != n || transitions[0].len() != n || transitions[1].len() != n {
            return Err(Error::param("MDP tables disagree on the number of states"));
        }
        if delay == 0 {
            return Err(Error::param("decision delay must be at least one slot"));
        }
        for a in 0..2 {
            for (s, row) in transitions[a].iter().enumerate() {
                let sum: f64 = row.iter().map(|t| t.1).sum();
                if (sum - 1.0).abs() > 1e-9 || row.iter().any(|t| t.0 >= n || t.1 < 0.0) {
                    return Err(Error::param(format!("action {a} row {s} is not a distribution")));
                }
            }
        }
        Ok(ToyMdp {
            transitions,
            rewards,
            delay,
        })
    }

    pub fn states(&self) -> usize {
        self.rewards[0].len()
    }

    /// Buffer-filling arm: state `(b, e)` holds `b` of `levels` downloads for
    /// the current segment and an exogenous viewing mode `e`. Acting downloads
    /// the next SVC for a random reward; with probability `reset` the segment
    /// ends and the count restarts. Modes evolve the same under both actions.
    pub fn random_download<R: Rng + ?Sized>(rng: &mut R, levels: usize, modes: usize, delay: usize) -> Result<Self> {
        let n = (levels + 1) * modes;
        let idx = |b: usize, e: usize| b * modes + e;
        let mode_rows: Vec<Vec<f64>> = (0..modes)
            .map(|_| {
                let w: Vec<f64> = (0..modes).map(|_| Exp1.sample(rng)).collect();
                let s: f64 = w.iter().sum();
                w.into_iter().map(|x| x / s).collect()
            })
            .collect();
        let reset: f64 = rng.gen_range(0.05..0.3);
        let mut tr: [Vec<Vec<(usize, f64)>>; 2] = [vec![Vec::new(); n], vec![Vec::new(); n]];
        let mut rw = [vec![0.0; n], vec![0.0; n]];
        for b in 0..=levels {
            for e in 0..modes {
                let s = idx(b, e);
                for a in 0..2 {
                    let next_b = if a == 1 && b < levels { b + 1 } else { b };
                    let mut row = Vec::new();
                    for (e2, pe) in mode_rows[e].iter().enumerate() {
                        row.push((idx(0, e2), reset * pe));
                        row.push((idx(next_b, e2), (1.0 - reset) * pe));
                    }
                    row.sort_by_key(|t| t.0);
                    row.dedup_by(|x, y| {
                        if x.0 == y.0 {
                            y.1 += x.1;
                            true
                        } else {
                            false
                        }
                    });
                    tr[a][s] = row;
                }
                if b < levels {
                    rw[1][s] = rng.gen_range(0.0..1.0);
                }
            }
        }
        Self::new(tr, rw, delay)
    }

    /// Relabels states: new state `perm[s]` is old state `s`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.states();
        let mut out = self.clone();
        for a in 0..2 {
            for s in 0..n {
                let mut row: Vec<(usize, f64)> = self.transitions[a][s].iter().map(|(t, p)| (perm[*t], *p)).collect();
                row.sort_by_key(|t| t.0);
                out.transitions[a][perm[s]] = row;
                out.rewards[a][perm[s]] = self.rewards[a][s];
            }
        }
        out
    }
}

/// Action values `(Q passive, Q active)` per state under `subsidy`, by value
/// iteration optionally warm-started from `warm`.
pub fn action_values(mdp: &ToyMdp, discount: f64, subsidy: f64, warm: Option<&[f64]>) -> Result<(Vec<f64>, Vec<(f64, f64)>)> {
    if !(0.0..1.0).contains(&discount) {
        return Err(Error::param(format!("discount {discount} outside [0, 1)")));
    }
    let gamma = discount.powi(mdp.delay as i32);
    let n = mdp.states();
    let mut v = warm.map_or_else(|| vec![0.0; n], |w| w.to_vec());
    let q = |v: &[f64], s: usize, a: usize| {
        let base = mdp.rewards[a][s] + if a == 0 { subsidy } else { 0.0 };
        base + gamma * mdp.transitions[a][s].iter().map(|(t, p)| p * v[*t]).sum::<f64>()
    };
    for _ in 0..VI_MAX_SWEEPS {
        let next: Vec<f64> = (0..n).map(|s| q(&v, s, 0).max(q(&v, s, 1))).collect();
        let diff = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = 1.0 + next.iter().map(|x| x.abs()).fold(0.0, f64::max);
        v = next;
        if !diff.is_finite() {
            return Err(Error::NonFinite("value iteration".into()));
        }
        if diff <= VI_TOL * scale {
            let qs = (0..n).map(|s| (q(&v, s, 0), q(&v, s, 1))).collect();
            return Ok((v, qs));
        }
    }
    Err(Error::NonConvergent(VI_MAX_SWEEPS))
}

fn reward_scale(mdp: &ToyMdp) -> f64 {
    mdp.rewards.iter().flatten().map(|r| r.abs()).fold(0.0, f64::max)
}

/// Subsidies beyond `+-bound` make one action dominant in every state.
pub fn subsidy_bound(mdp: &ToyMdp, discount: f64) -> f64 {
    let gamma = discount.powi(mdp.delay as i32);
    4.0 * reward_scale(mdp) / (1.0 - gamma) + 1.0
}

/// Whittle index of every state: the subsidy at which both actions are
/// equally good, located by bisection to [`INDEX_TOL`].
pub fn exact_whittle(mdp: &ToyMdp, discount: f64) -> Result<Vec<f64>> {
    let bound = subsidy_bound(mdp, discount);
    let n = mdp.states();
    let mut out = Vec::with_capacity(n);
    let mut warm: Option<Vec<f64>> = None;
    for s in 0..n {
        let (mut lo, mut hi) = (-bound, bound);
        while hi - lo > INDEX_TOL {
            let mid = 0.5 * (lo + hi);
            let (v, q) = action_values(mdp, discount, mid, warm.as_deref())?;
            warm = Some(v);
            if q[s].0 >= q[s].1 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        out.push(0.5 * (lo + hi));
    }
    Ok(out)
}

/// Strict preference per state: `Some(true)` passive, `Some(false)` active,
/// `None` within `tol` of indifference.
pub fn passive_set(mdp: &ToyMdp, discount: f64, subsidy: f64, tol: f64, warm: Option<&[f64]>) -> Result<(Vec<f64>, Vec<Option<bool>>)> {
    let (v, q) = action_values(mdp, discount, subsidy, warm)?;
    let set = q
        .iter()
        .map(|(p, a)| {
            if p - a > tol {
                Some(true)
            } else if a - p > tol {
                Some(false)
            } else {
                None
            }
        })
        .collect();
    Ok((v, set))
}

/// Result of sweeping the subsidy over a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexabilitySweep {
    pub subsidies: usize,
    /// States strictly passive at some subsidy and strictly active at a larger one.
    pub violations: usize,
    /// Whether the passive set is empty at the lowest and full at the highest subsidy.
    pub spans_state_space: bool,
}

/// Checks that the passive set only grows as the subsidy increases.
pub fn indexability_sweep(mdp: &ToyMdp, discount: f64, steps: usize) -> Result<IndexabilitySweep> {
    let bound = subsidy_bound(mdp, discount);
    let n = mdp.states();
    let tol = 1e-9 * (1.0 + bound);
    let mut seen_passive = vec![false; n];
    let mut violations = 0;
    let mut warm: Option<Vec<f64>> = None;
    let mut first_empty = false;
    let mut last_full = false;
    let steps = steps.max(2);
    for i in 0..steps {
        let lambda = -bound + 2.0 * bound * i as f64 / (steps - 1) as f64;
        let (v, set) = passive_set(mdp, discount, lambda, tol, warm.as_deref())?;
        warm = Some(v);
        if i == 0 {
            first_empty = set.iter().all(|x| *x == Some(false));
        }
        if i == steps - 1 {
            last_full = set.iter().all(|x| *x == Some(true));
        }
        for s in 0..n {
            match set[s] {
                Some(true) => seen_passive[s] = true,
                Some(false) if seen_passive[s] => violations += 1,
                _ => {}
            }
        }
    }
    Ok(IndexabilitySweep {
        subsidies: steps,
        violations,
        spans_state_space: first_empty && last_full,
    })
}
