//! Splitting the cache budget across subsets of segments.
//!
//! Each subset's satisfaction curve `P_g(C_g)` is only observable by running
//! placement at a given size, so it is tracked as a piecewise-linear surrogate
//! refined at every probe. Sizes are driven by a relaxed heavy-ball ADMM on the
//! budget-coupled problem, with Gaussian exploration noise that decays over
//! iterations.
//!
//! Internally sizes are expressed in units of `C / G` and curve values are
//! multiplied by `G`, so that the penalty factors act on quantities of order
//! one regardless of the absolute budget.

use std::io::Write;

use log::{debug, warn};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::placement::{place, PlacementInstance};

/// A group of segments placed independently.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsetSpec {
    pub id: usize,
    pub segments: Vec<usize>,
    pub popularity_mass: f64,
}

/// Consecutive runs of `per_subset` segments.
pub fn subsets_by_segment(catalog: &Catalog, per_subset: usize) -> Vec<SubsetSpec> {
    let per = per_subset.max(1);
    (0..catalog.segments())
        .collect::<Vec<_>>()
        .chunks(per)
        .enumerate()
        .map(|(id, segs)| SubsetSpec {
            id,
            segments: segs.to_vec(),
            popularity_mass: segs.iter().map(|j| catalog.segment_mass(*j)).sum(),
        })
        .collect()
}

/// Non-decreasing piecewise-linear curve through `(size, value)` breakpoints,
/// flat beyond the last one.
#[derive(Clone, Debug, PartialEq)]
pub struct PwlCurve {
    points: Vec<(f64, f64)>,
    /// Probes that had to be clamped to keep the curve monotone.
    pub clamp_events: usize,
}

impl Default for PwlCurve {
    fn default() -> Self {
        PwlCurve {
            points: vec![(0.0, 0.0)],
            clamp_events: 0,
        }
    }
}

impl PwlCurve {
    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.points[0].0 {
            return self.points[0].1;
        }
        for w in self.points.windows(2) {
            let (x0, y0) = w[0];
            let (x1, y1) = w[1];
            if x <= x1 {
                return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
            }
        }
        self.points[self.points.len() - 1].1
    }

    /// Inserts a probe between its neighbors; linear pieces elsewhere are kept.
    pub fn refine(&mut self, size: f64, value: f64) {
        let size = size.max(0.0);
        let pos = self.points.partition_point(|p| p.0 < size);
        let exact = pos < self.points.len() && (self.points[pos].0 - size).abs() <= 1e-12 * size.max(1.0);
        let mut value = value;
        if pos > 0 && value < self.points[pos - 1].1 {
            debug!("curve probe at {size} clamped up from {value} to {}", self.points[pos - 1].1);
            value = self.points[pos - 1].1;
            self.clamp_events += 1;
        }
        let at = if exact {
            self.points[pos].1 = value;
            pos
        } else {
            self.points.insert(pos, (size, value));
            pos
        };
        let mut raised = false;
        for p in self.points.iter_mut().skip(at + 1) {
            if p.1 < value {
                p.1 = value;
                raised = true;
            }
        }
        if raised {
            debug!("curve points right of {size} raised to {value}");
            self.clamp_events += 1;
        }
    }

    fn scaled(&self, x_scale: f64, y_scale: f64) -> PwlCurve {
        PwlCurve {
            points: self.points.iter().map(|(x, y)| (x * x_scale, y * y_scale)).collect(),
            clamp_events: self.clamp_events,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdmmParams {
    pub rho1: f64,
    pub rho2: f64,
    pub eps1: f64,
    pub eps2: f64,
    /// Initial exploration spread as a fraction of `C / G`.
    pub sigma0: f64,
    pub attn: f64,
    pub max_iter: usize,
    /// Convergence threshold on the Lagrangian change (normalized units).
    pub lagrangian_tol: f64,
    /// Convergence threshold on the exploration spread (normalized units).
    pub sigma_tol: f64,
}

impl Default for AdmmParams {
    fn default() -> Self {
        AdmmParams {
            rho1: 0.3,
            rho2: 0.3,
            eps1: 0.8,
            eps2: 0.85,
            sigma0: 0.25,
            attn: 0.95,
            max_iter: 300,
            lagrangian_tol: 1e-4,
            sigma_tol: 0.01,
        }
    }
}

/// Primal, auxiliary and multiplier variables in normalized units.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmmState {
    pub c: Vec<f64>,
    pub z1: f64,
    pub z2: Vec<f64>,
    pub u1: f64,
    pub u2: Vec<f64>,
    pub u1_hat: f64,
    pub u2_hat: Vec<f64>,
    pub z1_hat: f64,
    pub z2_hat: Vec<f64>,
    pub rho1: f64,
    pub rho2: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub sigma: f64,
    pub attn: f64,
    pub iteration: usize,
}

impl AdmmState {
    /// Even split with zero multipliers; the budget is `G` in these units.
    pub fn new(groups: usize, params: &AdmmParams) -> Self {
        AdmmState {
            c: vec![1.0; groups],
            z1: 0.0,
            z2: vec![1.0; groups],
            u1: 0.0,
            u2: vec![0.0; groups],
            u1_hat: 0.0,
            u2_hat: vec![0.0; groups],
            z1_hat: 0.0,
            z2_hat: vec![1.0; groups],
            rho1: params.rho1,
            rho2: params.rho2,
            eps1: params.eps1,
            eps2: params.eps2,
            sigma: params.sigma0,
            attn: params.attn,
            iteration: 0,
        }
    }

    pub fn groups(&self) -> usize {
        self.c.len()
    }

    fn mean(&self) -> f64 {
        self.c.iter().sum::<f64>() / self.c.len() as f64
    }

    /// Per-subset share of the budget: `C / G`, which is 1 in these units.
    fn share(&self) -> f64 {
        1.0
    }
}

/// Augmented Lagrangian over surrogate curves (normalized units).
pub fn lagrangian(state: &AdmmState, curves: &[PwlCurve]) -> f64 {
    let coupling = state.mean() - state.share() - state.z1;
    let mut l = state.u1 * coupling + 0.5 * state.rho1 * coupling * coupling;
    for g in 0..state.groups() {
        let r = state.c[g] - state.z2[g];
        l += -curves[g].eval(state.c[g]) + state.u2[g] * r + 0.5 * state.rho2 * r * r;
    }
    l
}

/// Exact minimizer of the per-subset size subproblem.
///
/// The objective is `-P(x) + u1 r(x) + u2 (x - z2) + rho1/2 r(x)^2 + rho2/2 (x - z2)^2`
/// with `r(x) = mean - c_g + x - share - z1`, piecewise quadratic in `x`.
pub fn update_sizes(state: &AdmmState, curves: &[PwlCurve]) -> Vec<f64> {
    let mean = state.mean();
    let upper = state.groups() as f64;
    (0..state.groups())
        .map(|g| {
            let offset = mean - state.c[g] - state.share() - state.z1;
            let curve = &curves[g];
            let obj = |x: f64| {
                let r = x + offset;
                let s = x - state.z2[g];
                -curve.eval(x) + state.u1 * r + state.u2[g] * s + 0.5 * state.rho1 * r * r + 0.5 * state.rho2 * s * s
            };
            let mut knots: Vec<f64> = curve.points().iter().map(|p| p.0).filter(|x| *x > 0.0 && *x < upper).collect();
            knots.insert(0, 0.0);
            knots.push(upper);
            let mut candidates = knots.clone();
            for w in knots.windows(2) {
                let (a, b) = (w[0], w[1]);
                if b <= a {
                    continue;
                }
                let slope = (curve.eval(b) - curve.eval(a)) / (b - a);
                let vertex = (slope - state.u1 - state.u2[g] - state.rho1 * offset + state.rho2 * state.z2[g])
                    / (state.rho1 + state.rho2);
                candidates.push(vertex.clamp(a, b));
            }
            candidates
                .into_iter()
                .map(|x| (obj(x), x))
                .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal)))
                .map(|(_, x)| x.max(0.0))
                .unwrap_or(0.0)
        })
        .collect()
}

/// Auxiliary, multiplier and extrapolation updates after new sizes `c`.
pub fn update_duals(state: &mut AdmmState, c: Vec<f64>) {
    state.c = c;
    let (e1, e2) = (state.eps1, state.eps2);
    let g = state.groups();
    let z2_new: Vec<f64> = (0..g)
        .map(|i| (e1 * state.c[i] + (1.0 - e1) * state.z2_hat[i] + state.u2_hat[i] / state.rho2).max(0.0))
        .collect();
    let coupling = state.mean() - state.share();
    // the budget slack is non-positive
    let z1_new = (e1 * coupling + (1.0 - e1) * state.z1_hat + state.u1_hat / state.rho1).min(0.0);
    let u1_new = state.u1_hat + state.rho1 * (e1 * coupling + (1.0 - e1) * state.z1_hat - z1_new);
    let u2_new: Vec<f64> = (0..g)
        .map(|i| state.u2_hat[i] + state.rho2 * (e1 * state.c[i] + (1.0 - e1) * state.z2_hat[i] - z2_new[i]))
        .collect();
    state.u1_hat = u1_new + e2 * (u1_new - state.u1_hat);
    for i in 0..g {
        state.u2_hat[i] = u2_new[i] + e2 * (u2_new[i] - state.u2_hat[i]);
        state.z2_hat[i] = z2_new[i] + e2 * (z2_new[i] - state.z2_hat[i]);
    }
    state.z1_hat = z1_new + e2 * (z1_new - state.z1_hat);
    state.z1 = z1_new;
    state.z2 = z2_new;
    state.u1 = u1_new;
    state.u2 = u2_new;
}

const SPLIT_STEPS: usize = 256;

/// Maximizes the sum of `curves` over sizes on a grid of `steps` equal parts
/// of `budget`, by dynamic programming over the curves.
pub fn surrogate_split(curves: &[PwlCurve], budget: f64, steps: usize) -> Vec<f64> {
    let unit = budget / steps.max(1) as f64;
    // best[k]: best total of the curves handled so far within k units
    let mut best = vec![0.0; steps + 1];
    let mut choice: Vec<Vec<usize>> = Vec::with_capacity(curves.len());
    for c in curves {
        let vals: Vec<f64> = (0..=steps).map(|i| c.eval(i as f64 * unit)).collect();
        let mut next = vec![f64::NEG_INFINITY; steps + 1];
        let mut pick = vec![0; steps + 1];
        for k in 0..=steps {
            for i in 0..=k {
                let v = best[k - i] + vals[i];
                if v > next[k] {
                    next[k] = v;
                    pick[k] = i;
                }
            }
        }
        best = next;
        choice.push(pick);
    }
    let mut sizes = vec![0.0; curves.len()];
    let mut k = steps;
    for g in (0..curves.len()).rev() {
        let i = choice[g][k];
        sizes[g] = i as f64 * unit;
        k -= i;
    }
    sizes
}

/// Satisfaction mass reached by placing subset `subset` into `size` bits.
pub fn probe_subset(base: &PlacementInstance, subset: &SubsetSpec, size: f64) -> f64 {
    if size <= 0.0 {
        return 0.0;
    }
    let inst = base.with_capacity(size).with_segments(subset.segments.clone());
    place(&inst).objective
}

#[derive(Clone, Debug)]
pub struct Allocation {
    pub sizes: Vec<f64>,
    pub satisfaction: Vec<f64>,
    pub total: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Lagrangian after every iteration, normalized units.
    pub lagrangian_trace: Vec<f64>,
    /// Curves in bits and satisfaction mass.
    pub curves: Vec<PwlCurve>,
}

/// Runs the parallel placement loop and returns per-subset budgets.
pub fn allocate<R: Rng + ?Sized>(
    base: &PlacementInstance,
    subsets: &[SubsetSpec],
    total_capacity: f64,
    params: &AdmmParams,
    rng: &mut R,
) -> Result<Allocation> {
    let probe = |sizes: &[f64]| -> Vec<f64> {
        subsets
            .par_iter()
            .zip(sizes.par_iter())
            .map(|(s, &c)| probe_subset(base, s, c))
            .collect()
    };
    allocate_with(subsets, total_capacity, params, rng, probe)
}

/// [`allocate`] with a caller-supplied probe returning `P_g(C_g)` for all subsets.
pub fn allocate_with<R, F>(
    subsets: &[SubsetSpec],
    total_capacity: f64,
    params: &AdmmParams,
    rng: &mut R,
    mut probe: F,
) -> Result<Allocation>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let g = subsets.len();
    if g == 0 {
        return Err(Error::param("no subsets to allocate"));
    }
    let mass: f64 = subsets.iter().map(|s| s.popularity_mass).sum();
    if (mass - 1.0).abs() > 1e-6 {
        return Err(Error::param(format!("subset masses sum to {mass}, not 1")));
    }
    if !(params.rho1 > 0.0 && params.rho2 > 0.0) {
        return Err(Error::param("penalty factors must be positive"));
    }
    if !(0.0..=1.0).contains(&params.eps1) || !(0.0..=1.0).contains(&params.eps2) {
        return Err(Error::param("relaxation factors must lie in [0, 1]"));
    }
    if total_capacity <= 0.0 {
        return Ok(Allocation {
            sizes: vec![0.0; g],
            satisfaction: vec![0.0; g],
            total: 0.0,
            iterations: 0,
            converged: true,
            lagrangian_trace: Vec::new(),
            curves: vec![PwlCurve::default(); g],
        });
    }
    let unit = total_capacity / g as f64;
    let to_bits = |x: &[f64]| x.iter().map(|v| v * unit).collect::<Vec<f64>>();
    let gf = g as f64;

    if g == 1 {
        let p = probe(&[total_capacity]);
        let mut curve = PwlCurve::default();
        curve.refine(total_capacity, p[0]);
        return Ok(Allocation {
            sizes: vec![total_capacity],
            satisfaction: p.clone(),
            total: p[0],
            iterations: 0,
            converged: true,
            lagrangian_trace: Vec::new(),
            curves: vec![curve],
        });
    }

    // normalized curves: x in units of C/G, y multiplied by G
    let mut curves = vec![PwlCurve::default(); g];
    let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
    let record = |sizes: &[f64], values: &[f64], best: &mut Option<(f64, Vec<f64>, Vec<f64>)>| {
        let total: f64 = values.iter().sum();
        if sizes.iter().sum::<f64>() <= gf * (1.0 + 1e-12) && best.as_ref().is_none_or(|b| total > b.0 + 1e-15) {
            *best = Some((total, sizes.to_vec(), values.to_vec()));
        }
    };
    for anchor in [1.0, gf] {
        let xs = vec![anchor; g];
        let vals = probe(&to_bits(&xs));
        for i in 0..g {
            curves[i].refine(anchor, vals[i] * gf);
        }
        if anchor == 1.0 {
            record(&xs, &vals, &mut best);
        }
    }

    let mut state = AdmmState::new(g, params);
    let mut trace = Vec::new();
    let mut prev = lagrangian(&state, &curves);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iter {
        iterations += 1;
        let c = update_sizes(&state, &curves);
        update_duals(&mut state, c);
        if state.sigma > 0.0 {
            let noise = Normal::new(0.0, state.sigma).map_err(|e| Error::param(e.to_string()))?;
            for x in state.c.iter_mut() {
                *x = (*x + noise.sample(rng)).clamp(0.0, gf);
            }
        }
        // probed sizes are deployed, so they have to fit the budget
        let sum: f64 = state.c.iter().sum();
        if sum > gf {
            state.c.iter_mut().for_each(|x| *x *= gf / sum);
        }
        let vals = probe(&to_bits(&state.c));
        for i in 0..g {
            curves[i].refine(state.c[i], vals[i] * gf);
        }
        record(&state.c, &vals, &mut best);
        state.sigma *= state.attn;
        state.iteration = iterations;
        let l = lagrangian(&state, &curves);
        if !l.is_finite() {
            return Err(Error::NonFinite("partition Lagrangian".into()));
        }
        trace.push(l);
        let delta = (l - prev).abs();
        prev = l;
        if delta < params.lagrangian_tol && state.sigma < params.sigma_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("cache partition stopped after {iterations} iterations without converging");
    }

    // final iterate, scaled back into the budget if needed
    let mut final_c: Vec<f64> = state.c.iter().map(|x| x.max(0.0)).collect();
    let sum: f64 = final_c.iter().sum();
    if sum > gf {
        final_c.iter_mut().for_each(|x| *x *= gf / sum);
    }
    let final_vals = probe(&to_bits(&final_c));
    record(&final_c, &final_vals, &mut best);
    // the split the learned curves consider best, which may combine
    // breakpoints that were never probed together
    let split = surrogate_split(&curves, gf, SPLIT_STEPS);
    let split_vals = probe(&to_bits(&split));
    record(&split, &split_vals, &mut best);
    let (total, sizes, satisfaction) = best.expect("the even split is always feasible");
    let mut sizes = to_bits(&sizes);
    // guard against rounding past the budget
    let s: f64 = sizes.iter().sum();
    if s > total_capacity {
        sizes.iter_mut().for_each(|x| *x *= total_capacity / s);
    }
    Ok(Allocation {
        sizes,
        satisfaction,
        total,
        iterations,
        converged,
        lagrangian_trace: trace,
        curves: curves.iter().map(|c| c.scaled(unit, 1.0 / gf)).collect(),
    })
}

/// Writes `subset_id,cache_bits,popularity_mass,satisfaction`.
pub fn write_allocation_csv<W: Write>(out: W, subsets: &[SubsetSpec], alloc: &Allocation) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subset_id", "cache_bits", "popularity_mass", "satisfaction"])?;
    for (i, s) in subsets.iter().enumerate() {
        w.write_record([
            s.id.to_string(),
            alloc.sizes[i].to_string(),
            s.popularity_mass.to_string(),
            alloc.satisfaction[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn curve(points: &[(f64, f64)]) -> PwlCurve {
        let mut c = PwlCurve::default();
        for &(x, y) in points {
            c.refine(x, y);
        }
        c
    }

    #[test]
    fn refine_interpolates_and_overwrites() {
        let mut c = curve(&[(4.0, 0.4)]);
        assert!((c.eval(2.0) - 0.2).abs() < 1e-12);
        assert_eq!(c.eval(10.0), 0.4);
        let before: Vec<f64> = [0.5, 3.0, 6.0].iter().map(|x| c.eval(*x)).collect();
        c.refine(2.0, 0.3);
        assert!((c.eval(1.0) - 0.15).abs() < 1e-12);
        assert!((c.eval(3.0) - 0.35).abs() < 1e-12);
        assert_eq!(c.eval(6.0), before[2]);
        c.refine(2.0, 0.25);
        assert_eq!(c.eval(2.0), 0.25);
        assert_eq!(c.clamp_events, 0);
    }

    #[test]
    fn refine_keeps_monotone() {
        let mut c = curve(&[(2.0, 0.5)]);
        c.refine(4.0, 0.3);
        assert_eq!(c.eval(4.0), 0.5);
        c.refine(1.0, 0.7);
        assert_eq!(c.eval(2.0), 0.7);
        assert!(c.clamp_events >= 2);
        for w in c.points().windows(2) {
            assert!(w[0].0 < w[1].0 && w[0].1 <= w[1].1);
        }
    }

    #[test]
    fn lagrangian_zero_at_rest() {
        let st = AdmmState::new(3, &AdmmParams::default());
        let curves = vec![PwlCurve::default(); 3];
        assert_eq!(lagrangian(&st, &curves), 0.0);
    }

    #[test]
    fn lagrangian_single_subset_by_hand() {
        let mut st = AdmmState::new(1, &AdmmParams::default());
        st.c = vec![1.5];
        st.z1 = -0.2;
        st.z2 = vec![1.0];
        st.u1 = 0.4;
        st.u2 = vec![-0.1];
        let curves = vec![curve(&[(2.0, 1.0)])];
        // -0.75 + 0.4 * 0.7 + 0.15 * 0.7^2 - 0.1 * 0.5 + 0.15 * 0.25
        let want = -0.75 + 0.28 + 0.15 * 0.49 - 0.05 + 0.0375;
        assert!((lagrangian(&st, &curves) - want).abs() < 1e-12);
    }

    #[test]
    fn lagrangian_derivative_sign() {
        let mut st = AdmmState::new(2, &AdmmParams::default());
        st.u2 = vec![0.3, -0.2];
        st.z2 = vec![0.8, 1.1];
        let curves = vec![curve(&[(1.0, 0.6), (2.0, 0.9)]), curve(&[(2.0, 0.5)])];
        let h = 1e-6;
        for g in 0..2 {
            let mut a = st.clone();
            let mut b = st.clone();
            a.c[g] += h;
            b.c[g] -= h;
            let fd = (lagrangian(&a, &curves) - lagrangian(&b, &curves)) / (2.0 * h);
            // analytic derivative away from kinks
            let c = st.c[g];
            let slope = (curves[g].eval(c + h) - curves[g].eval(c - h)) / (2.0 * h);
            let coupling = st.c.iter().sum::<f64>() / 2.0 - 1.0 - st.z1;
            let d = -slope + (st.u1 + st.rho1 * coupling) / 2.0 + st.u2[g] + st.rho2 * (c - st.z2[g]);
            assert!((fd - d).abs() < 1e-6);
        }
    }

    #[test]
    fn size_update_flat_curve_is_quadratic_vertex() {
        let mut st = AdmmState::new(2, &AdmmParams::default());
        st.c = vec![0.6, 1.0];
        st.z2 = vec![0.9, 0.9];
        st.z1 = -0.1;
        let curves = vec![curve(&[(2.0, 0.0)]); 2];
        let c = update_sizes(&st, &curves);
        let mean = 0.8;
        for g in 0..2 {
            let offset = mean - st.c[g] - 1.0 - st.z1;
            let vertex = (-st.rho1 * offset + st.rho2 * st.z2[g]) / (st.rho1 + st.rho2);
            assert!((c[g] - vertex.max(0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn size_update_symmetric_and_non_negative() {
        let mut st = AdmmState::new(2, &AdmmParams::default());
        st.u2 = vec![5.0, 5.0];
        let curves = vec![curve(&[(1.0, 0.5)]); 2];
        let c = update_sizes(&st, &curves);
        assert_eq!(c[0], c[1]);
        assert!(c.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn dual_update_without_momentum_and_fixed_point() {
        let params = AdmmParams { eps2: 0.0, ..Default::default() };
        let mut st = AdmmState::new(2, &params);
        let c = vec![0.7, 1.3];
        update_duals(&mut st, c);
        assert_eq!(st.u2_hat, st.u2);
        assert_eq!(st.z2_hat, st.z2);
        assert_eq!(st.u1_hat, st.u1);
        assert_eq!(st.z1_hat, st.z1);
        // even split, zero residuals: nothing moves
        let mut rest = AdmmState::new(2, &AdmmParams::default());
        let before = rest.clone();
        update_duals(&mut rest, vec![1.0, 1.0]);
        assert_eq!(rest.z2, before.z2);
        assert_eq!(rest.u2, before.u2);
        assert_eq!(rest.u1, 0.0);
        assert_eq!(rest.z1, 0.0);
    }

    #[test]
    fn dual_update_by_hand() {
        let params = AdmmParams::default();
        let mut st = AdmmState::new(1, &params);
        update_duals(&mut st, vec![1.5]);
        // z2 = 0.8 * 1.5 + 0.2 * 1 = 1.4; u2 = 0.3 * (1.2 + 0.2 - 1.4) = 0
        assert!((st.z2[0] - 1.4).abs() < 1e-12);
        assert!(st.u2[0].abs() < 1e-12);
        // coupling 0.5: z1 = min(0.4, 0) = 0, u1 = 0.3 * 0.4 = 0.12
        assert_eq!(st.z1, 0.0);
        assert!((st.u1 - 0.12).abs() < 1e-12);
        assert!((st.u1_hat - 0.12 * 1.85).abs() < 1e-12);
        assert!((st.z2_hat[0] - (1.4 + 0.85 * 0.4)).abs() < 1e-12);
    }

    fn concave_probe(masses: Vec<f64>, scale: Vec<f64>) -> impl FnMut(&[f64]) -> Vec<f64> {
        move |sizes: &[f64]| {
            sizes
                .iter()
                .enumerate()
                .map(|(i, s)| masses[i] * (1.0 - (-s / scale[i]).exp()))
                .collect()
        }
    }

    fn subsets(masses: &[f64]) -> Vec<SubsetSpec> {
        masses
            .iter()
            .enumerate()
            .map(|(id, m)| SubsetSpec { id, segments: vec![id], popularity_mass: *m })
            .collect()
    }

    #[test]
    fn surrogate_split_matches_enumeration() {
        let curves = vec![curve(&[(1.0, 0.1), (2.0, 0.9)]), curve(&[(0.5, 0.4), (3.0, 0.6)]), curve(&[(1.5, 0.3)])];
        let steps = 12;
        let got = surrogate_split(&curves, 3.0, steps);
        assert!(got.iter().sum::<f64>() <= 3.0 + 1e-12);
        let value = |s: &[f64]| s.iter().zip(&curves).map(|(x, c)| c.eval(*x)).sum::<f64>();
        let unit = 3.0 / steps as f64;
        let mut want = 0.0f64;
        for a in 0..=steps {
            for b in 0..=steps - a {
                let c = steps - a - b;
                want = want.max(value(&[a as f64 * unit, b as f64 * unit, c as f64 * unit]));
            }
        }
        assert!((value(&got) - want).abs() < 1e-12, "{got:?}");
    }

    #[test]
    fn single_subset_takes_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = allocate_with(&subsets(&[1.0]), 100.0, &AdmmParams::default(), &mut rng, concave_probe(vec![1.0], vec![50.0])).unwrap();
        assert_eq!(a.sizes, vec![100.0]);
    }

    #[test]
    fn symmetric_subsets_split_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = allocate_with(
            &subsets(&[0.5, 0.5]),
            100.0,
            &AdmmParams::default(),
            &mut rng,
            concave_probe(vec![0.5, 0.5], vec![40.0, 40.0]),
        )
        .unwrap();
        assert!(a.sizes.iter().sum::<f64>() <= 100.0);
        for s in &a.sizes {
            assert!((s - 50.0).abs() <= 5.0, "{:?}", a.sizes);
        }
    }

    #[test]
    fn budget_respected_and_deterministic() {
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            allocate_with(
                &subsets(&[0.5, 0.3, 0.2]),
                90.0,
                &AdmmParams::default(),
                &mut rng,
                concave_probe(vec![0.5, 0.3, 0.2], vec![20.0, 30.0, 10.0]),
            )
            .unwrap()
        };
        let a = run(3);
        assert!(a.sizes.iter().sum::<f64>() <= 90.0 + 1e-9);
        assert!(a.sizes.iter().all(|s| *s >= 0.0));
        let b = run(3);
        assert_eq!(a.sizes, b.sizes);
        assert_eq!(a.lagrangian_trace, b.lagrangian_trace);
    }

    #[test]
    fn zero_noise_is_bit_identical() {
        let params = AdmmParams { sigma0: 0.0, ..Default::default() };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            allocate_with(&subsets(&[0.6, 0.4]), 10.0, &params, &mut rng, concave_probe(vec![0.6, 0.4], vec![3.0, 3.0])).unwrap()
        };
        assert_eq!(run().lagrangian_trace, run().lagrangian_trace);
    }
}
