//! Offline content placement at the edge server.
//!
//! The cache holds monoscopic chunks (stitched on demand) and stereoscopic
//! chunks (served as-is). Placement runs in three phases: a greedy fill with
//! whole MVC groups, a swap loop replacing groups by SVCs or other groups, and
//! an SVC-only refill that guards against the swap loop's local optimum.

mod brute;
mod model;

use std::collections::BTreeSet;
use std::fmt;

pub use brute::{brute_force_optimal, BruteForceMode, DEFAULT_BRUTE_FORCE_LIMIT};
pub(crate) use model::{Model, State};

use crate::catalog::{Catalog, MvcId, SvcId};
use crate::delay::{objective_l, CacheSolution, ChannelModel, DelayParams};
pub use crate::delay::cache_weight;

/// Gains at or below this are treated as zero.
pub(crate) const GAIN_EPS: f64 = 1e-13;
/// Gains within this of the best are ties, resolved by SVC id.
pub(crate) const TIE_EPS: f64 = 1e-12;
/// Slack on the capacity check, in bits.
pub(crate) const CAP_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct PlacementOptions {
    /// Upper bound on accepted swap-loop moves.
    pub max_swap_iters: usize,
    /// Swap candidates tried per iteration, in index order.
    pub max_swap_trials: usize,
    /// Consecutive weight-only moves (no value gain) allowed before stopping.
    pub max_lighter_streak: usize,
    /// Also compare against an SVC-only fill started from an empty cache.
    pub svc_restart: bool,
}

impl Default for PlacementOptions {
    fn default() -> Self {
        PlacementOptions {
            max_swap_iters: 500,
            max_swap_trials: 256,
            max_lighter_streak: 8,
            svc_restart: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlacementInstance<'a> {
    pub catalog: &'a Catalog,
    pub params: DelayParams,
    pub channel: ChannelModel,
    pub capacity: f64,
    /// Restricts placement to these segments; `None` means all.
    pub segments: Option<Vec<usize>>,
    pub options: PlacementOptions,
}

impl<'a> PlacementInstance<'a> {
    pub fn new(catalog: &'a Catalog, params: DelayParams, channel: ChannelModel, capacity: f64) -> Self {
        PlacementInstance {
            catalog,
            params,
            channel,
            capacity: capacity.max(0.0),
            segments: None,
            options: PlacementOptions::default(),
        }
    }

    pub fn with_segments(mut self, segments: Vec<usize>) -> Self {
        self.segments = Some(segments);
        self
    }

    pub fn with_capacity(&self, capacity: f64) -> Self {
        let mut out = self.clone();
        out.capacity = capacity.max(0.0);
        out
    }

    /// Every SVC in the instance's segments.
    pub fn universe(&self) -> Vec<SvcId> {
        match &self.segments {
            None => self.catalog.svcs().collect(),
            Some(segs) => segs
                .iter()
                .filter(|j| **j < self.catalog.segments())
                .flat_map(|&j| self.catalog.svcs_in_segment(j))
                .collect(),
        }
    }

    /// The objective of a cache, evaluated directly from the delay model.
    pub fn objective(&self, cache: &CacheSolution) -> f64 {
        objective_l(self.catalog, cache, &self.params, &self.channel)
    }

    /// Model over SVCs that can contribute to the objective at all.
    pub(crate) fn model(&self) -> Model {
        let full = Model::new(self.catalog, &self.params, &self.channel, self.universe());
        let useful: Vec<SvcId> = (0..full.n_svcs())
            .filter(|&f| full.useful(f))
            .map(|f| full.svcs[f])
            .collect();
        if useful.len() == full.n_svcs() {
            full
        } else {
            Model::new(self.catalog, &self.params, &self.channel, useful)
        }
    }

    fn fits(&self, weight: f64) -> bool {
        weight <= self.capacity + CAP_TOL
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    MvcFill,
    Replace,
    SvcFill,
    Select,
    SizeSearch,
    BruteForce,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::MvcFill => "mvc-fill",
            Phase::Replace => "replace",
            Phase::SvcFill => "svc-fill",
            Phase::Select => "select",
            Phase::SizeSearch => "size-search",
            Phase::BruteForce => "brute-force",
        };
        f.write_str(s)
    }
}

/// One step of a placement run. `weight` is the cache weight after the step.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceEntry {
    pub phase: Phase,
    pub action: String,
    pub delta: f64,
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct PlacementResult {
    pub cache: CacheSolution,
    pub objective: f64,
    pub phase_trace: Vec<TraceEntry>,
}

pub(crate) fn to_solution(model: &Model, st: &State, capacity: f64) -> CacheSolution {
    CacheSolution {
        mvcs: st.cached_mvcs().map(|m| model.mvcs[m]).collect(),
        svcs: st.cached_svcs().map(|f| model.svcs[f]).collect(),
        capacity,
    }
}

fn finish(inst: &PlacementInstance, model: &Model, mut st: State, trace: Vec<TraceEntry>) -> PlacementResult {
    st.recompute(model);
    PlacementResult {
        cache: to_solution(model, &st, inst.capacity),
        objective: st.value,
        phase_trace: trace,
    }
}

/// Objective gain of adding `candidate` to `base`.
pub fn marginal_index(
    catalog: &Catalog,
    candidate: &CacheSolution,
    base: &CacheSolution,
    params: &DelayParams,
    channel: &ChannelModel,
) -> f64 {
    let mut union = base.clone();
    union.mvcs.extend(candidate.mvcs.iter().copied());
    union.svcs.extend(candidate.svcs.iter().copied());
    objective_l(catalog, &union, params, channel) - objective_l(catalog, base, params, channel)
}

/// Greedy over whole MVC groups while the best one fits.
fn fill_groups(model: &Model, st: &mut State, budget: f64, phase: Phase, trace: &mut Vec<TraceEntry>) {
    loop {
        let mut best: Option<(usize, f64)> = None;
        for f in 0..model.n_svcs() {
            if st.has_group(f) {
                continue;
            }
            let g = st.group_gain(model, f);
            if best.is_none_or(|(_, b)| g > b + TIE_EPS) {
                best = Some((f, g));
            }
        }
        let Some((f, gain)) = best else { break };
        if gain <= GAIN_EPS {
            break;
        }
        if st.weight + st.group_extra_weight(model, f) > budget + CAP_TOL {
            break;
        }
        st.add_group(model, f);
        trace.push(TraceEntry {
            phase,
            action: format!("add group {}", model.svcs[f]),
            delta: gain,
            weight: st.weight,
        });
    }
}

/// Greedy over single SVCs while the best one fits.
fn fill_svcs(model: &Model, st: &mut State, budget: f64, phase: Phase, trace: &mut Vec<TraceEntry>) {
    loop {
        let mut best: Option<(usize, f64)> = None;
        for f in 0..model.n_svcs() {
            if st.in_s[f] {
                continue;
            }
            let g = st.svc_gain(model, f);
            if best.is_none_or(|(_, b)| g > b + TIE_EPS) {
                best = Some((f, g));
            }
        }
        let Some((f, gain)) = best else { break };
        if gain <= GAIN_EPS {
            break;
        }
        if st.weight + model.svc_w[f] > budget + CAP_TOL {
            break;
        }
        st.add_svc(model, f);
        trace.push(TraceEntry {
            phase,
            action: format!("add svc {}", model.svcs[f]),
            delta: gain,
            weight: st.weight,
        });
    }
}

/// Phase one: the MVC set produced by greedy group filling.
pub fn greedy_mvc_fill(inst: &PlacementInstance) -> BTreeSet<MvcId> {
    let model = inst.model();
    let mut st = model.state();
    fill_groups(&model, &mut st, inst.capacity, Phase::MvcFill, &mut Vec::new());
    st.cached_mvcs().map(|m| model.mvcs[m]).collect()
}

/// The MVC-only benchmark.
pub fn mvc_only_fill(inst: &PlacementInstance) -> CacheSolution {
    let mut sol = CacheSolution::empty(inst.capacity);
    sol.mvcs = greedy_mvc_fill(inst);
    sol
}

/// The SVC-only benchmark: greedy over SVCs from an empty cache.
pub fn svc_only_fill(inst: &PlacementInstance) -> CacheSolution {
    let model = inst.model();
    let mut st = model.state();
    fill_svcs(&model, &mut st, inst.capacity, Phase::SvcFill, &mut Vec::new());
    to_solution(&model, &st, inst.capacity)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Form {
    Svc,
    Group,
}

struct SwapCandidate {
    index: f64,
    f1: usize,
    form: Form,
    f2: Option<usize>,
}

/// Removes `f`'s group, measures the objective and restores the state.
fn value_without_group(model: &Model, st: &mut State, f: usize) -> f64 {
    let before = st.value;
    let removed = st.remove_group(model, f);
    let v = st.value;
    for &m in removed.iter().rev() {
        st.add_mvc(model, m);
    }
    st.value = before;
    v
}

/// Builds the state reached by one swap candidate, if it can be made to fit.
fn try_swap(inst: &PlacementInstance, model: &Model, st: &State, c: &SwapCandidate) -> Option<(State, Vec<usize>)> {
    let mut trial = st.clone();
    let mut evicted = Vec::new();
    if let Some(f2) = c.f2 {
        trial.remove_group(model, f2);
        evicted.push(f2);
    }
    let extra = |t: &State| match c.form {
        Form::Svc => model.svc_w[c.f1],
        Form::Group => t.group_extra_weight(model, c.f1),
    };
    while !inst.fits(trial.weight + extra(&trial)) {
        let groups: Vec<usize> = trial.complete_groups().collect();
        let mut best: Option<(usize, f64)> = None;
        for f in groups {
            let v = value_without_group(model, &mut trial, f);
            if best.is_none_or(|(_, b)| v > b + TIE_EPS) {
                best = Some((f, v));
            }
        }
        let (f3, _) = best?;
        trial.remove_group(model, f3);
        evicted.push(f3);
    }
    match c.form {
        Form::Svc => trial.add_svc(model, c.f1),
        Form::Group => {
            trial.add_group(model, c.f1);
        }
    }
    Some((trial, evicted))
}

/// Phase two from a given MVC set: swap groups for SVCs or other groups while
/// the objective does not decrease.
pub fn replace_with_svcs(inst: &PlacementInstance, mvcs: &BTreeSet<MvcId>) -> PlacementResult {
    let model = inst.model();
    let mut st = model.state();
    for t in mvcs {
        if let Some(m) = model.mvc_index(t) {
            st.add_mvc(&model, m);
        }
    }
    let mut trace = Vec::new();
    swap_loop(inst, &model, &mut st, &mut trace);
    finish(inst, &model, st, trace)
}

fn swap_loop(inst: &PlacementInstance, model: &Model, st: &mut State, trace: &mut Vec<TraceEntry>) {
    st.recompute(model);
    // lighter moves are measured against the best value so far, so a chain of
    // them cannot drift downwards
    let mut best = st.value;
    let mut streak = 0;
    for _ in 0..inst.options.max_swap_iters {
        st.recompute(model);
        let mut evict: Vec<Option<usize>> = vec![None];
        evict.extend(st.complete_groups().map(Some));
        let mut cands = Vec::new();
        for &f2 in &evict {
            let before = st.value;
            let removed = match f2 {
                Some(f) => st.remove_group(model, f),
                None => Vec::new(),
            };
            for f1 in 0..model.n_svcs() {
                if !st.in_s[f1] {
                    let index = st.svc_gain(model, f1);
                    if index > GAIN_EPS {
                        cands.push(SwapCandidate { index, f1, form: Form::Svc, f2 });
                    }
                }
                if !st.has_group(f1) && f2 != Some(f1) {
                    let index = st.group_gain(model, f1);
                    if index > GAIN_EPS {
                        cands.push(SwapCandidate { index, f1, form: Form::Group, f2 });
                    }
                }
            }
            for &m in removed.iter().rev() {
                st.add_mvc(model, m);
            }
            st.value = before;
        }
        cands.sort_by(|a, b| {
            b.index
                .partial_cmp(&a.index)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.f1.cmp(&b.f1))
                .then((a.form == Form::Group).cmp(&(b.form == Form::Group)))
                .then(a.f2.cmp(&b.f2))
        });
        let mut accepted = false;
        for c in cands.iter().take(inst.options.max_swap_trials) {
            let Some((mut trial, evicted)) = try_swap(inst, model, st, c) else {
                continue;
            };
            trial.recompute(model);
            let better = trial.value > st.value + GAIN_EPS;
            let lighter = streak < inst.options.max_lighter_streak
                && trial.value >= best - GAIN_EPS
                // relative margin so float drift in the running weight never
                // passes for a real saving
                && trial.weight < st.weight - 1e-6 * inst.capacity.max(1.0);
            if better || lighter {
                if trial.value > best + GAIN_EPS {
                    best = trial.value;
                    streak = 0;
                } else {
                    streak += 1;
                }
                let what = match c.form {
                    Form::Svc => "svc",
                    Form::Group => "group",
                };
                let names: Vec<String> = evicted.iter().map(|f| model.svcs[*f].to_string()).collect();
                trace.push(TraceEntry {
                    phase: Phase::Replace,
                    action: format!("add {what} {} evicting [{}]", model.svcs[c.f1], names.join(" ")),
                    delta: trial.value - st.value,
                    weight: trial.weight,
                });
                *st = trial;
                accepted = true;
                break;
            }
        }
        if !accepted {
            break;
        }
    }
    st.recompute(model);
}

/// The full three-phase placement.
pub fn place(inst: &PlacementInstance) -> PlacementResult {
    let model = inst.model();
    let mut trace = Vec::new();
    let mut a = model.state();
    fill_groups(&model, &mut a, inst.capacity, Phase::MvcFill, &mut trace);
    swap_loop(inst, &model, &mut a, &mut trace);

    let mut b = a.clone();
    b.clear_mvcs(&model);
    b.recompute(&model);
    fill_svcs(&model, &mut b, inst.capacity, Phase::SvcFill, &mut trace);
    b.recompute(&model);
    if inst.options.svc_restart {
        let mut fresh = model.state();
        fill_svcs(&model, &mut fresh, inst.capacity, Phase::SvcFill, &mut trace);
        fresh.recompute(&model);
        if fresh.value > b.value + GAIN_EPS {
            b = fresh;
        }
    }
    let (chosen, label) = if b.value < a.value {
        (a, "mixed")
    } else {
        (b, "svc-only")
    };
    trace.push(TraceEntry {
        phase: Phase::Select,
        action: format!("keep {label}"),
        delta: 0.0,
        weight: chosen.weight,
    });
    finish(inst, &model, chosen, trace)
}

#[derive(Clone, Debug)]
pub struct SizeSearchResult {
    pub best: PlacementResult,
    pub best_omega: f64,
    /// `(omega, objective)` for every probed split.
    pub profile: Vec<(f64, f64)>,
}

/// The eleven-point split grid `0, 0.1, ..., 1`.
pub fn default_omegas() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Benchmark: SVCs greedily into `omega * C`, then MVC groups into the rest.
pub fn cache_size_search(inst: &PlacementInstance, omegas: &[f64]) -> SizeSearchResult {
    let model = inst.model();
    let mut best: Option<(f64, State)> = None;
    let mut profile = Vec::with_capacity(omegas.len());
    for &omega in omegas {
        let mut trace = Vec::new();
        let mut st = model.state();
        fill_svcs(&model, &mut st, omega * inst.capacity, Phase::SizeSearch, &mut trace);
        let budget = st.weight + (1.0 - omega) * inst.capacity;
        fill_groups(&model, &mut st, budget, Phase::SizeSearch, &mut trace);
        st.recompute(&model);
        profile.push((omega, st.value));
        if best.as_ref().is_none_or(|(_, b)| st.value > b.value + GAIN_EPS) {
            best = Some((omega, st));
        }
    }
    let (best_omega, st) = best.unwrap_or_else(|| (0.0, model.state()));
    let trace = vec![TraceEntry {
        phase: Phase::SizeSearch,
        action: format!("omega={best_omega}"),
        delta: st.value,
        weight: st.weight,
    }];
    SizeSearchResult {
        best: finish(inst, &model, st, trace),
        best_omega,
        profile,
    }
}

#[cfg(test)]
mod tests;
