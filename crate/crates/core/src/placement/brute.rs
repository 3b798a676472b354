//! Exhaustive optimum for tiny instances.
//!
//! The objective depends on cached MVCs only through the member groups they
//! complete, so an optimal MVC set can always be shrunk to a union of whole
//! groups. The search enumerates those unions and runs a branch and bound over
//! SVCs for each, bounding with a fractional knapsack over current marginal
//! gains (valid because the objective is submodular in the SVC set).

use std::collections::HashSet;

use super::{finish, Model, Phase, PlacementInstance, PlacementResult, State, TraceEntry, CAP_TOL};
use crate::error::{Error, Result};

/// Default cap on the number of candidate SVCs.
pub const DEFAULT_BRUTE_FORCE_LIMIT: usize = 14;

/// Largest MVC universe enumerated in [`BruteForceMode::AnyMvcs`].
const MAX_FREE_MVCS: usize = 18;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BruteForceMode {
    /// MVC sets restricted to unions of whole member groups.
    #[default]
    GroupUnions,
    /// Every subset of the MVC universe.
    AnyMvcs,
}

struct Search<'m> {
    model: &'m Model,
    capacity: f64,
    best_value: f64,
    best: Option<State>,
}

impl Search<'_> {
    fn consider_mvcs(&mut self, st: &mut State) {
        if st.weight > self.capacity + CAP_TOL {
            return;
        }
        self.branch(st, 0);
    }

    fn bound(&self, st: &State, from: usize) -> f64 {
        let room = self.capacity + CAP_TOL - st.weight;
        let mut items: Vec<(f64, f64)> = (from..self.model.n_svcs())
            .filter(|&f| !st.in_s[f] && self.model.svc_w[f] <= room)
            .map(|f| (st.svc_gain(self.model, f), self.model.svc_w[f]))
            .filter(|(g, _)| *g > 0.0)
            .collect();
        items.sort_by(|a, b| (b.0 / b.1).partial_cmp(&(a.0 / a.1)).unwrap_or(std::cmp::Ordering::Equal));
        let mut left = room;
        let mut total = 0.0;
        for (g, w) in items {
            if w <= left {
                total += g;
                left -= w;
            } else {
                total += g * left / w;
                break;
            }
        }
        total
    }

    fn branch(&mut self, st: &mut State, i: usize) {
        if st.value > self.best_value + 1e-15 || self.best.is_none() {
            self.best_value = st.value;
            self.best = Some(st.clone());
        }
        if i == self.model.n_svcs() {
            return;
        }
        if st.value + self.bound(st, i) <= self.best_value + 1e-14 {
            return;
        }
        if st.weight + self.model.svc_w[i] <= self.capacity + CAP_TOL && st.svc_gain(self.model, i) > 0.0 {
            let before = st.value;
            st.add_svc(self.model, i);
            self.branch(st, i + 1);
            st.remove_svc(self.model, i);
            st.value = before;
        }
        self.branch(st, i + 1);
    }
}

/// Exact maximizer of the objective under the capacity constraint.
pub fn brute_force_optimal(inst: &PlacementInstance, limit: usize, mode: BruteForceMode) -> Result<PlacementResult> {
    let model = inst.model();
    let n = model.n_svcs();
    if n > limit {
        return Err(Error::UniverseTooLarge { size: n, limit });
    }
    let mut search = Search {
        model: &model,
        capacity: inst.capacity,
        best_value: 0.0,
        best: None,
    };
    match mode {
        BruteForceMode::GroupUnions => {
            let mut seen: HashSet<Vec<bool>> = HashSet::new();
            for mask in 0u64..(1u64 << n) {
                let mut st = model.state();
                for f in 0..n {
                    if mask >> f & 1 == 1 {
                        st.add_group(&model, f);
                    }
                }
                if st.weight > inst.capacity + CAP_TOL || !seen.insert(st.in_m.clone()) {
                    continue;
                }
                search.consider_mvcs(&mut st);
            }
        }
        BruteForceMode::AnyMvcs => {
            let m = model.mvcs.len();
            if m > MAX_FREE_MVCS {
                return Err(Error::UniverseTooLarge { size: m, limit: MAX_FREE_MVCS });
            }
            for mask in 0u64..(1u64 << m) {
                let mut st = model.state();
                for t in 0..m {
                    if mask >> t & 1 == 1 {
                        st.add_mvc(&model, t);
                    }
                }
                search.consider_mvcs(&mut st);
            }
        }
    }
    let st = search.best.unwrap_or_else(|| model.state());
    let trace = vec![TraceEntry {
        phase: Phase::BruteForce,
        action: format!("exhaustive over {n} svcs"),
        delta: st.value,
        weight: st.weight,
    }];
    Ok(finish(inst, &model, st, trace))
}
