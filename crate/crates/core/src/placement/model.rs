//! Indexed, incrementally updated form of the coverage objective.
//!
//! Each viewpoint tracks how many available serving options meet the deadline
//! at each channel rate. An option is an SVC that is either cached (edge
//! transmission only) or has its whole member group cached (stitched at the
//! edge). The objective is the popularity mass of viewpoints with at least one
//! passing option, weighted by the stationary channel occupancy.

use std::collections::HashMap;

use crate::catalog::{Catalog, MvcId, SvcId, Viewpoint};
use crate::delay::{edge_tx_delay, ChannelModel, DelayParams};

const NONE: u8 = 0;
const GROUP: u8 = 1;
const CACHED: u8 = 2;

#[derive(Clone, Debug)]
pub(crate) struct Model {
    pub svcs: Vec<SvcId>,
    pub svc_w: Vec<f64>,
    pub group: Vec<Vec<usize>>,
    pub render: Vec<Vec<usize>>,
    pub mvcs: Vec<MvcId>,
    pub mvc_w: Vec<f64>,
    pub mvc_groups: Vec<Vec<usize>>,
    pub vps: Vec<Viewpoint>,
    pub vp_pop: Vec<f64>,
    sat: [Vec<(bool, bool)>; 3],
    pi_h: f64,
    pi_l: f64,
    mvc_lookup: HashMap<MvcId, usize>,
}

impl Model {
    /// Builds the model over the given SVCs (sorted by id inside).
    pub fn new(
        catalog: &Catalog,
        params: &DelayParams,
        channel: &ChannelModel,
        mut svcs: Vec<SvcId>,
    ) -> Self {
        svcs.sort();
        svcs.dedup();
        let mut mvc_lookup: HashMap<MvcId, usize> = HashMap::new();
        let mut vp_lookup: HashMap<Viewpoint, usize> = HashMap::new();
        let mut mvcs = Vec::new();
        let mut vps = Vec::new();
        let mut group = Vec::with_capacity(svcs.len());
        let mut render = Vec::with_capacity(svcs.len());
        let mut svc_w = Vec::with_capacity(svcs.len());
        let mut sat_svc = Vec::with_capacity(svcs.len());
        let mut sat_grp = Vec::with_capacity(svcs.len());
        for &f in &svcs {
            let members = catalog.members(f);
            let mut g = Vec::with_capacity(members.len());
            for t in members {
                let id = *mvc_lookup.entry(t).or_insert_with(|| {
                    mvcs.push(t);
                    mvcs.len() - 1
                });
                g.push(id);
            }
            group.push(g);
            let mut r = Vec::new();
            for v in catalog.render_set(f) {
                let id = *vp_lookup.entry(v).or_insert_with(|| {
                    vps.push(v);
                    vps.len() - 1
                });
                r.push(id);
            }
            render.push(r);
            svc_w.push(catalog.svc_size(f));
            let stitch = params.chi * catalog.member_size(f);
            let ok = |extra: f64| {
                (
                    extra + edge_tx_delay(catalog, f, channel.rate_high) < params.deadline,
                    extra + edge_tx_delay(catalog, f, channel.rate_low) < params.deadline,
                )
            };
            sat_svc.push(ok(0.0));
            sat_grp.push(ok(stitch));
        }
        let mvc_w = mvcs.iter().map(|t| catalog.mvc_size(*t)).collect();
        let mut mvc_groups = vec![Vec::new(); mvcs.len()];
        for (f, g) in group.iter().enumerate() {
            for &m in g {
                mvc_groups[m].push(f);
            }
        }
        let vp_pop = vps.iter().map(|v| catalog.popularity(*v)).collect();
        let none = vec![(false, false); svcs.len()];
        Model {
            svcs,
            svc_w,
            group,
            render,
            mvcs,
            mvc_w,
            mvc_groups,
            vps,
            vp_pop,
            sat: [none, sat_grp, sat_svc],
            pi_h: channel.pi_high(),
            pi_l: channel.pi_low(),
            mvc_lookup,
        }
    }

    pub fn mvc_index(&self, t: &MvcId) -> Option<usize> {
        self.mvc_lookup.get(t).copied()
    }

    pub fn n_svcs(&self) -> usize {
        self.svcs.len()
    }

    fn vp_value(&self, h: u32, l: u32) -> f64 {
        self.pi_h * (h > 0) as u8 as f64 + self.pi_l * (l > 0) as u8 as f64
    }

    /// Whether an SVC can contribute anything as a cached SVC.
    pub fn useful(&self, f: usize) -> bool {
        let (h, l) = self.sat[CACHED as usize][f];
        (h || l) && self.render[f].iter().any(|&v| self.vp_pop[v] > 0.0)
    }

    pub fn state(&self) -> State {
        State {
            in_s: vec![false; self.svcs.len()],
            in_m: vec![false; self.mvcs.len()],
            missing: self.group.iter().map(|g| g.len()).collect(),
            status: vec![NONE; self.svcs.len()],
            cnt_h: vec![0; self.vps.len()],
            cnt_l: vec![0; self.vps.len()],
            value: 0.0,
            weight: 0.0,
        }
    }
}

/// A cache configuration over a [`Model`].
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct State {
    pub in_s: Vec<bool>,
    pub in_m: Vec<bool>,
    missing: Vec<usize>,
    status: Vec<u8>,
    cnt_h: Vec<u32>,
    cnt_l: Vec<u32>,
    pub value: f64,
    pub weight: f64,
}

impl State {
    fn set_status(&mut self, model: &Model, f: usize, new: u8) {
        let old = self.status[f];
        if old == new {
            return;
        }
        self.status[f] = new;
        let (oh, ol) = model.sat[old as usize][f];
        let (nh, nl) = model.sat[new as usize][f];
        if oh == nh && ol == nl {
            return;
        }
        for &v in &model.render[f] {
            let before = model.vp_value(self.cnt_h[v], self.cnt_l[v]);
            self.cnt_h[v] = self.cnt_h[v] + nh as u32 - oh as u32;
            self.cnt_l[v] = self.cnt_l[v] + nl as u32 - ol as u32;
            let after = model.vp_value(self.cnt_h[v], self.cnt_l[v]);
            self.value += model.vp_pop[v] * (after - before);
        }
    }

    fn refresh(&mut self, model: &Model, f: usize) {
        let s = if self.in_s[f] {
            CACHED
        } else if self.missing[f] == 0 {
            GROUP
        } else {
            NONE
        };
        self.set_status(model, f, s);
    }

    pub fn add_svc(&mut self, model: &Model, f: usize) {
        if !self.in_s[f] {
            self.in_s[f] = true;
            self.weight += model.svc_w[f];
            self.refresh(model, f);
        }
    }

    pub fn remove_svc(&mut self, model: &Model, f: usize) {
        if self.in_s[f] {
            self.in_s[f] = false;
            self.weight -= model.svc_w[f];
            self.refresh(model, f);
        }
    }

    pub fn add_mvc(&mut self, model: &Model, m: usize) {
        if self.in_m[m] {
            return;
        }
        self.in_m[m] = true;
        self.weight += model.mvc_w[m];
        for &g in &model.mvc_groups[m] {
            self.missing[g] -= 1;
            if self.missing[g] == 0 {
                self.refresh(model, g);
            }
        }
    }

    pub fn remove_mvc(&mut self, model: &Model, m: usize) {
        if !self.in_m[m] {
            return;
        }
        self.in_m[m] = false;
        self.weight -= model.mvc_w[m];
        for &g in &model.mvc_groups[m] {
            self.missing[g] += 1;
            if self.missing[g] == 1 {
                self.refresh(model, g);
            }
        }
    }

    /// Adds the members of `f`'s group; returns those that were not cached.
    pub fn add_group(&mut self, model: &Model, f: usize) -> Vec<usize> {
        let added: Vec<usize> = model.group[f].iter().copied().filter(|&m| !self.in_m[m]).collect();
        for &m in &added {
            self.add_mvc(model, m);
        }
        added
    }

    /// Removes the members of `f`'s group; returns those that were cached.
    pub fn remove_group(&mut self, model: &Model, f: usize) -> Vec<usize> {
        let removed: Vec<usize> = model.group[f].iter().copied().filter(|&m| self.in_m[m]).collect();
        for &m in &removed {
            self.remove_mvc(model, m);
        }
        removed
    }

    pub fn has_group(&self, f: usize) -> bool {
        self.missing[f] == 0
    }

    /// Extra weight of caching the members of `f` not yet cached.
    pub fn group_extra_weight(&self, model: &Model, f: usize) -> f64 {
        model.group[f]
            .iter()
            .filter(|&&m| !self.in_m[m])
            .map(|&m| model.mvc_w[m])
            .sum()
    }

    /// Objective gain of caching SVC `f`, without mutating.
    pub fn svc_gain(&self, model: &Model, f: usize) -> f64 {
        if self.in_s[f] {
            return 0.0;
        }
        let (oh, ol) = model.sat[self.status[f] as usize][f];
        let (nh, nl) = model.sat[CACHED as usize][f];
        if oh == nh && ol == nl {
            return 0.0;
        }
        let mut gain = 0.0;
        for &v in &model.render[f] {
            let h = self.cnt_h[v] + nh as u32 - oh as u32;
            let l = self.cnt_l[v] + nl as u32 - ol as u32;
            gain += model.vp_pop[v] * (model.vp_value(h, l) - model.vp_value(self.cnt_h[v], self.cnt_l[v]));
        }
        gain
    }

    /// Objective gain of caching `f`'s member group.
    pub fn group_gain(&mut self, model: &Model, f: usize) -> f64 {
        let before = self.value;
        let added = self.add_group(model, f);
        let gain = self.value - before;
        for &m in added.iter().rev() {
            self.remove_mvc(model, m);
        }
        self.value = before;
        gain
    }

    /// Recomputes the objective from the per-viewpoint counters.
    pub fn recompute(&mut self, model: &Model) {
        self.value = (0..model.vps.len())
            .map(|v| model.vp_pop[v] * model.vp_value(self.cnt_h[v], self.cnt_l[v]))
            .sum();
        self.weight = self
            .in_m
            .iter()
            .zip(&model.mvc_w)
            .filter(|(c, _)| **c)
            .map(|(_, w)| *w)
            .sum::<f64>()
            + self
                .in_s
                .iter()
                .zip(&model.svc_w)
                .filter(|(c, _)| **c)
                .map(|(_, w)| *w)
                .sum::<f64>();
    }

    pub fn cached_svcs(&self) -> impl Iterator<Item = usize> + '_ {
        self.in_s.iter().enumerate().filter(|(_, c)| **c).map(|(i, _)| i)
    }

    pub fn cached_mvcs(&self) -> impl Iterator<Item = usize> + '_ {
        self.in_m.iter().enumerate().filter(|(_, c)| **c).map(|(i, _)| i)
    }

    /// Groups whose members are all cached as MVCs.
    pub fn complete_groups(&self) -> impl Iterator<Item = usize> + '_ {
        self.missing.iter().enumerate().filter(|(_, m)| **m == 0).map(|(i, _)| i)
    }

    pub fn clear_mvcs(&mut self, model: &Model) {
        let cached: Vec<usize> = self.cached_mvcs().collect();
        for m in cached {
            self.remove_mvc(model, m);
        }
    }
}
