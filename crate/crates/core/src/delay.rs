//! Delivery delays, delay-requirement satisfaction and the coverage objective.
//!
//! A request for viewpoint `d` is served either from a cached SVC (edge
//! transmission only) or by stitching an SVC from its member MVCs, fetching
//! uncached members over the backhaul first. The channel is frozen for the
//! duration of one delivery and weighted by the stationary occupancy of its
//! two-state chain.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::catalog::{Catalog, Layer, MvcId, SvcId, Tile, Viewpoint};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DelayParams {
    /// Cloud-to-edge backhaul rate, bits/s.
    pub backhaul_rate: f64,
    /// Stitching time per member bit, s/bit.
    pub chi: f64,
    /// Delivery deadline, seconds.
    pub deadline: f64,
    /// Slot length, seconds.
    pub slot_len: f64,
}

impl Default for DelayParams {
    fn default() -> Self {
        DelayParams {
            backhaul_rate: 700e6,
            chi: 4e-8,
            deadline: 0.085,
            slot_len: 0.033,
        }
    }
}

impl DelayParams {
    pub fn fps(&self) -> f64 {
        1.0 / self.slot_len
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.backhaul_rate > 0.0) {
            return Err(Error::param("backhaul rate must be positive"));
        }
        if !(self.chi >= 0.0) || !self.chi.is_finite() {
            return Err(Error::param("chi must be finite and non-negative"));
        }
        if !(self.deadline > 0.0) || !(self.slot_len > 0.0) {
            return Err(Error::param("deadline and slot length must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChannelState {
    High,
    Low,
}

/// Which average edge rate to report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MeanRateConvention {
    /// `(p_L R_H + p_H R_L) / (p_L + p_H)`
    #[default]
    Stationary,
    /// `(R_L + R_H) / (p_L + p_H)`
    Printed,
}

/// Two-state edge rate chain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelModel {
    pub rate_low: f64,
    pub rate_high: f64,
    /// Low to High transition probability.
    pub p_to_high: f64,
    /// High to Low transition probability.
    pub p_to_low: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            rate_low: 400e6,
            rate_high: 704e6,
            p_to_high: 0.3,
            p_to_low: 0.6,
        }
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_low > 0.0 && self.rate_low <= self.rate_high) {
            return Err(Error::param("need 0 < rate_low <= rate_high"));
        }
        for (name, p) in [("p_to_high", self.p_to_high), ("p_to_low", self.p_to_low)] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::param(format!("{name} = {p} outside (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn pi_high(&self) -> f64 {
        self.p_to_high / (self.p_to_high + self.p_to_low)
    }

    pub fn pi_low(&self) -> f64 {
        self.p_to_low / (self.p_to_high + self.p_to_low)
    }

    pub fn rate(&self, state: ChannelState) -> f64 {
        match state {
            ChannelState::High => self.rate_high,
            ChannelState::Low => self.rate_low,
        }
    }

    pub fn mean_rate(&self, convention: MeanRateConvention) -> f64 {
        let s = self.p_to_high + self.p_to_low;
        match convention {
            MeanRateConvention::Stationary => {
                (self.p_to_high * self.rate_high + self.p_to_low * self.rate_low) / s
            }
            MeanRateConvention::Printed => (self.rate_low + self.rate_high) / s,
        }
    }
}

/// Cached MVCs `M` and SVCs `S` under a capacity `C` in bits.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CacheSolution {
    pub mvcs: BTreeSet<MvcId>,
    pub svcs: BTreeSet<SvcId>,
    pub capacity: f64,
}

impl CacheSolution {
    pub fn empty(capacity: f64) -> Self {
        CacheSolution {
            capacity,
            ..Default::default()
        }
    }

    pub fn weight(&self, catalog: &Catalog) -> f64 {
        cache_weight(catalog, &self.mvcs, &self.svcs)
    }

    pub fn fits(&self, catalog: &Catalog) -> bool {
        self.weight(catalog) <= self.capacity * (1.0 + 1e-12)
    }

    pub fn is_empty(&self) -> bool {
        self.mvcs.is_empty() && self.svcs.is_empty()
    }

    /// Every member of `f` is cached as an MVC.
    pub fn has_group(&self, catalog: &Catalog, f: SvcId) -> bool {
        catalog.members(f).iter().all(|t| self.mvcs.contains(t))
    }

    /// Line-oriented text form, sorted, MVCs first.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# capacity={}", self.capacity);
        for t in &self.mvcs {
            let _ = writeln!(
                out,
                "MVC {} {} {} {}",
                t.tile.row,
                t.tile.col,
                t.segment,
                t.layer.index()
            );
        }
        for f in &self.svcs {
            let _ = writeln!(out, "SVC {} {} {}", f.center.row, f.center.col, f.segment);
        }
        out
    }
}

impl FromStr for CacheSolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut sol = CacheSolution::default();
        for (i, raw) in s.lines().enumerate() {
            let line = i + 1;
            let text = raw.trim();
            if let Some(rest) = text.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("capacity=") {
                    sol.capacity = v.parse().map_err(|_| Error::Parse {
                        line,
                        msg: format!("bad capacity `{v}`"),
                    })?;
                }
                continue;
            }
            if text.is_empty() {
                continue;
            }
            let parts: Vec<&str> = text.split_whitespace().collect();
            let nums = |n: usize| -> Result<Vec<usize>> {
                if parts.len() != n + 1 {
                    return Err(Error::Parse {
                        line,
                        msg: format!("expected {n} fields after `{}`", parts[0]),
                    });
                }
                parts[1..]
                    .iter()
                    .map(|p| {
                        p.parse::<usize>().map_err(|_| Error::Parse {
                            line,
                            msg: format!("`{p}` is not a non-negative integer"),
                        })
                    })
                    .collect()
            };
            match parts[0] {
                "MVC" => {
                    let v = nums(4)?;
                    let layer = Layer::from_index(v[3]).ok_or(Error::Parse {
                        line,
                        msg: format!("layer {} is not 0 or 1", v[3]),
                    })?;
                    sol.mvcs.insert(MvcId {
                        tile: Tile::new(v[0], v[1]),
                        segment: v[2],
                        layer,
                    });
                }
                "SVC" => {
                    let v = nums(3)?;
                    sol.svcs.insert(SvcId {
                        center: Tile::new(v[0], v[1]),
                        segment: v[2],
                    });
                }
                other => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unknown entry kind `{other}`"),
                    })
                }
            }
        }
        Ok(sol)
    }
}

/// Total bits held by `M` and `S`.
pub fn cache_weight<'a>(
    catalog: &Catalog,
    mvcs: impl IntoIterator<Item = &'a MvcId>,
    svcs: impl IntoIterator<Item = &'a SvcId>,
) -> f64 {
    let m: f64 = mvcs.into_iter().map(|t| catalog.mvc_size(*t)).sum();
    let s: f64 = svcs.into_iter().map(|f| catalog.svc_size(*f)).sum();
    m + s
}

pub fn edge_tx_delay(catalog: &Catalog, f: SvcId, rate: f64) -> f64 {
    catalog.svc_size(f) / rate
}

pub fn backhaul_delay(catalog: &Catalog, f: SvcId, cache: &CacheSolution, params: &DelayParams) -> f64 {
    if cache.svcs.contains(&f) {
        return 0.0;
    }
    catalog
        .members(f)
        .iter()
        .filter(|t| !cache.mvcs.contains(t))
        .map(|t| catalog.mvc_size(*t))
        .sum::<f64>()
        / params.backhaul_rate
}

pub fn compute_delay(catalog: &Catalog, f: SvcId, cache: &CacheSolution, params: &DelayParams) -> f64 {
    if cache.svcs.contains(&f) {
        0.0
    } else {
        params.chi * catalog.member_size(f)
    }
}

/// Delay of serving `d` through `f` at the given edge rate.
pub fn svc_delay(catalog: &Catalog, f: SvcId, cache: &CacheSolution, params: &DelayParams, rate: f64) -> f64 {
    backhaul_delay(catalog, f, cache, params) + compute_delay(catalog, f, cache, params) + edge_tx_delay(catalog, f, rate)
}

/// How a viewpoint can be served without touching the backhaul.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CacheHit {
    /// The SVC itself is cached.
    Svc(SvcId),
    /// Every member MVC is cached; the SVC is stitched at the edge.
    Group(SvcId),
}

impl CacheHit {
    pub fn svc(&self) -> SvcId {
        match self {
            CacheHit::Svc(f) | CacheHit::Group(f) => *f,
        }
    }
}

/// Cache-served options for `d`, in `(SVC hits, group hits)` id order.
pub fn cache_hits(catalog: &Catalog, d: Viewpoint, cache: &CacheSolution) -> Vec<CacheHit> {
    let renderers = catalog.renderers(d);
    let mut out: Vec<CacheHit> = renderers
        .iter()
        .filter(|f| cache.svcs.contains(f))
        .map(|f| CacheHit::Svc(*f))
        .collect();
    out.extend(
        renderers
            .iter()
            .filter(|f| !cache.svcs.contains(f) && cache.has_group(catalog, **f))
            .map(|f| CacheHit::Group(*f)),
    );
    out
}

/// The SVC that serves `d` at the given rate and its delay.
///
/// Among cache-served options the fastest wins, preferring a cached SVC, then
/// the smaller SVC, then the smaller id. Without any cache-served option the
/// SVC centered on `d`'s tile is stitched, fetching missing members.
pub fn serving_svc(
    catalog: &Catalog,
    d: Viewpoint,
    cache: &CacheSolution,
    params: &DelayParams,
    rate: f64,
) -> Result<(SvcId, f64)> {
    if !catalog.contains_viewpoint(d) {
        return Err(Error::NoRenderingSvc(d.to_string()));
    }
    let mut best: Option<(f64, u8, f64, SvcId)> = None;
    for hit in cache_hits(catalog, d, cache) {
        let f = hit.svc();
        let rank = matches!(hit, CacheHit::Group(_)) as u8;
        let key = (svc_delay(catalog, f, cache, params, rate), rank, catalog.svc_size(f), f);
        let better = match &best {
            None => true,
            Some(b) => (key.0, key.1, key.2)
                .partial_cmp(&(b.0, b.1, b.2))
                .map(|o| o.then(key.3.cmp(&b.3)).is_lt())
                .unwrap_or(false),
        };
        if better {
            best = Some(key);
        }
    }
    if let Some((t, _, _, f)) = best {
        return Ok((f, t));
    }
    let f = SvcId {
        center: d.tile,
        segment: d.segment,
    };
    Ok((f, svc_delay(catalog, f, cache, params, rate)))
}

pub fn total_delay(
    catalog: &Catalog,
    d: Viewpoint,
    cache: &CacheSolution,
    params: &DelayParams,
    rate: f64,
) -> Result<f64> {
    serving_svc(catalog, d, cache, params, rate).map(|(_, t)| t)
}

pub fn satisfaction_prob(
    catalog: &Catalog,
    d: Viewpoint,
    cache: &CacheSolution,
    params: &DelayParams,
    channel: &ChannelModel,
) -> Result<f64> {
    let high = total_delay(catalog, d, cache, params, channel.rate_high)? < params.deadline;
    let low = total_delay(catalog, d, cache, params, channel.rate_low)? < params.deadline;
    Ok(channel.pi_high() * high as u8 as f64 + channel.pi_low() * low as u8 as f64)
}

/// Viewpoints rendered from cache: render sets of cached SVCs and of SVCs whose
/// whole member group is cached.
pub fn covered_viewpoints(catalog: &Catalog, cache: &CacheSolution) -> BTreeSet<Viewpoint> {
    let mut out = BTreeSet::new();
    for f in &cache.svcs {
        out.extend(catalog.render_set(*f));
    }
    let segments: BTreeSet<usize> = cache.mvcs.iter().map(|t| t.segment).collect();
    for j in segments {
        for f in catalog.svcs_in_segment(j) {
            if cache.has_group(catalog, f) {
                out.extend(catalog.render_set(f));
            }
        }
    }
    out
}

/// Popularity-weighted delay satisfaction over the cache-covered viewpoints.
pub fn objective_l(
    catalog: &Catalog,
    cache: &CacheSolution,
    params: &DelayParams,
    channel: &ChannelModel,
) -> f64 {
    covered_viewpoints(catalog, cache)
        .into_iter()
        .map(|d| {
            let p = catalog.popularity(d);
            if p == 0.0 {
                return 0.0;
            }
            // covered viewpoints always lie inside the catalog
            p * satisfaction_prob(catalog, d, cache, params, channel).unwrap_or(0.0)
        })
        .sum()
}

/// Popularity-weighted delay, averaged over the stationary channel states.
pub fn mean_delay(
    catalog: &Catalog,
    cache: &CacheSolution,
    params: &DelayParams,
    channel: &ChannelModel,
) -> Result<f64> {
    let mut total = 0.0;
    for d in catalog.viewpoints() {
        let p = catalog.popularity(d);
        if p == 0.0 {
            continue;
        }
        let th = total_delay(catalog, d, cache, params, channel.rate_high)?;
        let tl = total_delay(catalog, d, cache, params, channel.rate_low)?;
        total += p * (channel.pi_high() * th + channel.pi_low() * tl);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{QualityConfig, TileGrid, KBIT};

    fn equal_catalog(grid: TileGrid, segments: usize, q: QualityConfig, alpha: f64) -> Catalog {
        let n = grid.tile_count() * segments;
        Catalog::new(grid, segments, q, alpha, vec![30.0 * KBIT; 2 * n], vec![1.0 / n as f64; n]).unwrap()
    }

    fn fov_catalog() -> Catalog {
        equal_catalog(TileGrid::equirect_default(), 1, QualityConfig::new(35, 35), 1.3)
    }

    const F: SvcId = SvcId { center: Tile { row: 6, col: 12 }, segment: 0 };

    #[test]
    fn edge_delays_match_arithmetic() {
        let cat = fov_catalog();
        let ch = ChannelModel::default();
        assert!((edge_tx_delay(&cat, F, ch.rate_high) - 1365e3 / 704e6).abs() < 1e-12);
        assert!((edge_tx_delay(&cat, F, ch.rate_low) - 1365e3 / 400e6).abs() < 1e-12);
        assert!((edge_tx_delay(&cat, F, ch.rate_high) * 1e3 - 1.939).abs() < 1e-3);
    }

    #[test]
    fn backhaul_and_compute() {
        let cat = fov_catalog();
        let params = DelayParams { chi: 5e-8, ..Default::default() };
        let mut cache = CacheSolution::empty(1e9);
        assert!((backhaul_delay(&cat, F, &cache, &params) - 1.5e-3).abs() < 1e-12);
        assert!((compute_delay(&cat, F, &cache, &params) - 52.5e-3).abs() < 1e-12);
        let members = cat.members(F);
        for t in members.iter().step_by(2).take(members.len() / 2 + 1) {
            cache.mvcs.insert(*t);
        }
        let cached = cache.mvcs.len() as f64;
        assert!((backhaul_delay(&cat, F, &cache, &params) - (35.0 - cached) * 30e3 / 700e6).abs() < 1e-12);
        cache.svcs.insert(F);
        assert_eq!(backhaul_delay(&cat, F, &cache, &params), 0.0);
        assert_eq!(compute_delay(&cat, F, &cache, &params), 0.0);
    }

    #[test]
    fn total_delay_cases() {
        let cat = fov_catalog();
        let params = DelayParams { chi: 5e-8, ..Default::default() };
        let rate = 704e6;
        let d = Viewpoint::new(6, 12, 0);
        let empty = CacheSolution::empty(1e9);
        let t2 = total_delay(&cat, d, &empty, &params, rate).unwrap();
        let sum = 1.5e-3 + 52.5e-3 + 1365e3 / rate;
        assert!((t2 - sum).abs() < 1e-12);
        let mut group = CacheSolution::empty(1e9);
        group.mvcs.extend(cat.members(F));
        let tg = total_delay(&cat, d, &group, &params, rate).unwrap();
        assert!((tg - (52.5e-3 + 1365e3 / rate)).abs() < 1e-12);
        let mut svc = CacheSolution::empty(1e9);
        svc.svcs.insert(F);
        let t1 = total_delay(&cat, d, &svc, &params, rate).unwrap();
        assert!((t1 - 1365e3 / rate).abs() < 1e-12);
        assert!(t1 <= tg && tg <= t2);
    }

    #[test]
    fn satisfaction_levels() {
        let cat = fov_catalog();
        let ch = ChannelModel::default();
        let d = Viewpoint::new(6, 12, 0);
        let mut cache = CacheSolution::empty(1e9);
        cache.svcs.insert(F);
        let both = DelayParams::default();
        assert_eq!(satisfaction_prob(&cat, d, &cache, &both, &ch).unwrap(), 1.0);
        // deadline between the two edge delays
        let mid = DelayParams { deadline: 2.5e-3, ..Default::default() };
        let p = satisfaction_prob(&cat, d, &cache, &mid, &ch).unwrap();
        assert!((p - 1.0 / 3.0).abs() < 1e-12);
        let none = DelayParams { deadline: 1e-3, ..Default::default() };
        assert_eq!(satisfaction_prob(&cat, d, &cache, &none, &ch).unwrap(), 0.0);
    }

    #[test]
    fn objective_extremes() {
        let grid = TileGrid::new(2, 3, 1, 1).unwrap();
        let cat = equal_catalog(grid, 2, QualityConfig::new(1, 1), 1.0);
        let params = DelayParams::default();
        let ch = ChannelModel::default();
        assert_eq!(objective_l(&cat, &CacheSolution::empty(0.0), &params, &ch), 0.0);
        let mut all = CacheSolution::empty(1e9);
        all.svcs.extend(cat.svcs());
        assert!((objective_l(&cat, &all, &params, &ch) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_delay_two_viewpoints() {
        let grid = TileGrid::new(1, 2, 1, 1).unwrap();
        let n = 2;
        let cat = Catalog::new(grid, 1, QualityConfig::new(1, 1), 1.0, vec![10e3, 10e3, 30e3, 30e3], vec![0.5; n]).unwrap();
        let params = DelayParams::default();
        let ch = ChannelModel::default();
        let cache = CacheSolution::empty(0.0);
        let per = |col| {
            let d = Viewpoint::new(0, col, 0);
            ch.pi_high() * total_delay(&cat, d, &cache, &params, ch.rate_high).unwrap()
                + ch.pi_low() * total_delay(&cat, d, &cache, &params, ch.rate_low).unwrap()
        };
        let m = mean_delay(&cat, &cache, &params, &ch).unwrap();
        assert!((m - 0.5 * (per(0) + per(1))).abs() < 1e-15);
    }

    #[test]
    fn mean_rate_conventions() {
        let ch = ChannelModel::default();
        let s = ch.mean_rate(MeanRateConvention::Stationary);
        assert!((s - (0.3 * 704e6 + 0.6 * 400e6) / 0.9).abs() < 1e-3);
        let p = ch.mean_rate(MeanRateConvention::Printed);
        assert!((p - 1104e6 / 0.9).abs() < 1e-3);
    }

    #[test]
    fn text_round_trip() {
        let cat = fov_catalog();
        let mut cache = CacheSolution::empty(123456.5);
        cache.mvcs.extend(cat.members(F).into_iter().take(3));
        cache.svcs.insert(SvcId { center: Tile::new(1, 2), segment: 0 });
        let text = cache.to_text();
        let back: CacheSolution = text.parse().unwrap();
        assert_eq!(back, cache);
        assert_eq!(back.to_text(), text);
        let err = "MVC 1 2 0 7".parse::<CacheSolution>().unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }
}
