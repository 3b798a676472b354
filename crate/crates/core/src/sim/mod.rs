//! Slotted simulation of headsets, the edge cache and the computing units.
//!
//! Each slot every headset plays its current viewpoint from the buffer (a hit)
//! or misses it, then asks for the first predicted viewpoint it cannot render.
//! Free computing units are granted by the scheduler; a granted request keeps
//! its unit busy for the delivery delay rounded up to whole slots, after which
//! the SVC lands in the headset buffer.

pub mod commands;
pub mod config;
pub mod sweep;

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::catalog::{popularity_from_traces, Catalog, QualityConfig, SvcId, Tile, TileGrid, Viewpoint};
use crate::delay::{cache_hits, mean_delay, serving_svc, CacheHit, CacheSolution, ChannelState};
use crate::dynamics::{
    build_predictor, displacement, ingest_traces, predict_desired, step_channel, synth_trajectory, SegmentClock,
    TrajectoryStore, ViewpointPredictor,
};
use crate::error::{Error, Result};
use crate::placement::{place, PlacementInstance};
use crate::quality::adapt_x0;
use crate::scheduler::{
    epoch_slots, reward, schedule_slot, AgentReport, Baseline, Exploration, Policy, SchedulerHyperparams, Transition,
    WiAgent,
};

pub use config::{PopularitySource, QualityPolicy, SimConfig, SweepValues};

/// Reward terms below this weight are dropped.
const REWARD_CUTOFF: f64 = 1e-6;
/// Side of the buffer coverage patch in the features.
const PATCH: isize = 5;

/// Independent random stream `stream` of a run seeded with `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

mod streams {
    pub const CATALOG: u64 = 1;
    pub const TRAIN_PROFILE: u64 = 2;
    pub const TEST_PROFILE: u64 = 3;
    pub const AGENTS: u64 = 4;
    pub const TRAIN_RUN: u64 = 5;
    pub const TEST_RUN: u64 = 6;
}

/// A buffered SVC and the base-layer width it was stitched with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Buffered {
    pub svc: SvcId,
    pub x0: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BufferPolicy {
    /// Drop SVCs of segments that have already been played.
    #[default]
    EvictPlayed,
    KeepAll,
}

/// Drops buffered SVCs the policy considers stale while `segment` plays. The
/// current and the next segment are always kept.
pub fn buffer_evict(buffer: &mut Vec<Buffered>, policy: BufferPolicy, segment: usize, segments: usize) {
    if policy == BufferPolicy::EvictPlayed {
        buffer.retain(|b| (b.svc.segment + segments - segment) % segments <= 1);
    }
}

/// Adds a delivered SVC, evicting stale ones first. Duplicates are kept once.
pub fn buffer_admit(buffer: &mut Vec<Buffered>, item: Buffered, policy: BufferPolicy, segment: usize, segments: usize) {
    buffer_evict(buffer, policy, segment, segments);
    if !buffer.contains(&item) {
        buffer.push(item);
    }
}

/// Per-user trajectories where each segment opens at a tile drawn from that
/// segment's popularity and continues as a random walk. Returns the store and
/// each user's movement probability.
pub fn synth_profile<R: Rng + ?Sized>(
    catalog: &Catalog,
    clock: &SegmentClock,
    users: usize,
    slots: usize,
    move_prob: (f64, f64),
    rng: &mut R,
) -> Result<(TrajectoryStore, Vec<f64>)> {
    let grid = *catalog.grid();
    let tiles = grid.tile_count();
    let starts: Vec<WeightedIndex<f64>> = (0..catalog.segments())
        .map(|j| {
            let w = &catalog.popularity_vec()[j * tiles..(j + 1) * tiles];
            WeightedIndex::new(w).or_else(|_| WeightedIndex::new(vec![1.0; tiles]))
        })
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::param(format!("segment popularity: {e}")))?;
    let mut store = TrajectoryStore::new();
    let mut probs = Vec::with_capacity(users);
    for u in 0..users {
        let p = if move_prob.1 > move_prob.0 { rng.gen_range(move_prob.0..=move_prob.1) } else { move_prob.0 };
        let mut traj = Vec::with_capacity(slots);
        while traj.len() < slots {
            let k = traj.len();
            let seg = clock.segment_at(k);
            let len = (clock.segment_len - k % clock.segment_len).min(slots - k);
            let start = grid.tile_at(starts[seg].sample(rng));
            let piece = synth_trajectory(&grid, p, len, &SegmentClock::new(len, 1)?, start, rng)?;
            traj.extend(piece.into_iter().map(|v| Viewpoint { tile: v.tile, segment: seg }));
        }
        store.insert(u, traj);
        probs.push(p);
    }
    Ok((store, probs))
}

/// Catalog and cache as seen by headsets stitching with base-layer width `x0`.
/// Cached SVCs only serve the width they were placed with; cached MVCs serve any.
#[derive(Clone, Debug)]
pub struct Variant {
    pub catalog: Catalog,
    pub cache: CacheSolution,
}

/// Everything fixed before slot 0: catalog, placement, trajectories.
#[derive(Clone, Debug)]
pub struct World {
    pub config: SimConfig,
    pub seed: u64,
    pub catalog: Catalog,
    pub cache: CacheSolution,
    pub placement_objective: f64,
    pub train: TrajectoryStore,
    pub test: TrajectoryStore,
    pub clock: SegmentClock,
    /// Popularity-weighted mean delivery delay, seconds.
    pub mean_delay: f64,
    pub epoch_slots: usize,
    pub variants: BTreeMap<usize, Variant>,
}

fn load_profile(
    path: &Option<std::path::PathBuf>,
    catalog: &Catalog,
    clock: &SegmentClock,
    users: usize,
    slots: usize,
    move_prob: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<TrajectoryStore> {
    let store = match path {
        Some(p) => ingest_traces(p, catalog.grid(), catalog.segments())?,
        None => synth_profile(catalog, clock, users, slots, move_prob, rng)?.0,
    };
    for (u, t) in store.iter() {
        if t.len() < slots {
            return Err(Error::param(format!("trajectory of user {u} has {} slots, need {slots}", t.len())));
        }
    }
    if store.len() != users {
        return Err(Error::param(format!("profile has {} users, config asks for {users}", store.len())));
    }
    Ok(store)
}

/// Valid base-layer widths `[lo, hi]` for a catalog.
pub fn x0_bounds(catalog: &Catalog) -> (usize, usize) {
    let q = catalog.quality();
    let lo = catalog.grid().fov_size().max(q.x_total.div_ceil(2));
    (lo, q.x_total.min(catalog.grid().tile_count()))
}

impl World {
    /// Builds the catalog, both trajectory profiles and the cache placement.
    pub fn build(config: &SimConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.require_seed()?;
        let mut rng = rng_stream(seed, streams::CATALOG);
        let model_catalog = config.catalog.build(&mut rng)?;
        let clock = SegmentClock::new(config.segment_slots, model_catalog.segments())?;
        let mut rng = rng_stream(seed, streams::TRAIN_PROFILE);
        let train = load_profile(&config.train_traces, &model_catalog, &clock, config.users, config.train_slots, config.move_prob, &mut rng)?;
        let mut rng = rng_stream(seed, streams::TEST_PROFILE);
        let test = load_profile(&config.test_traces, &model_catalog, &clock, config.users, config.test_slots, config.move_prob, &mut rng)?;
        let catalog = match config.popularity {
            PopularitySource::Model => model_catalog,
            PopularitySource::Traces if config.train_slots > 0 => {
                let rows: Vec<_> = train.to_rows().into_iter().filter(|r| r.slot < config.train_slots).collect();
                let p = popularity_from_traces(&rows, model_catalog.grid(), model_catalog.segments())?;
                model_catalog.with_popularity(p)?
            }
            PopularitySource::Traces => model_catalog,
        };
        Self::with_catalog(config, seed, catalog, train, test, clock)
    }

    /// Places the cache on a given catalog and derives the epoch length.
    pub fn with_catalog(
        config: &SimConfig,
        seed: u64,
        catalog: Catalog,
        train: TrajectoryStore,
        test: TrajectoryStore,
        clock: SegmentClock,
    ) -> Result<Self> {
        let inst = PlacementInstance::new(&catalog, config.delay, config.channel, config.capacity);
        let placed = place(&inst);
        let mean = mean_delay(&catalog, &placed.cache, &config.delay, &config.channel)?;
        let phi = config
            .epoch_slots
            .unwrap_or_else(|| epoch_slots(mean, config.units, config.delay.slot_len));
        let x0 = catalog.quality().x0;
        let widths: Vec<usize> = match config.quality {
            QualityPolicy::Fixed => vec![x0],
            QualityPolicy::Adaptive { .. } => {
                let (lo, hi) = x0_bounds(&catalog);
                (lo..=hi).collect()
            }
        };
        let mut variants = BTreeMap::new();
        for w in widths {
            let cat = if w == x0 {
                catalog.clone()
            } else {
                catalog.with_quality(QualityConfig::new(catalog.quality().x_total, w))?
            };
            let cache = if w == x0 {
                placed.cache.clone()
            } else {
                CacheSolution {
                    svcs: Default::default(),
                    ..placed.cache.clone()
                }
            };
            variants.insert(w, Variant { catalog: cat, cache });
        }
        Ok(World {
            config: config.clone(),
            seed,
            catalog,
            cache: placed.cache,
            placement_objective: placed.objective,
            train,
            test,
            clock,
            mean_delay: mean,
            epoch_slots: phi,
            variants,
        })
    }

    pub fn grid(&self) -> &TileGrid {
        self.catalog.grid()
    }

    /// Hyperparameters with the derived epoch length filled in.
    pub fn hyper(&self) -> SchedulerHyperparams {
        SchedulerHyperparams {
            epoch_slots: self.epoch_slots,
            computing_units: self.config.units,
            ..self.config.hyper.clone()
        }
    }

    pub fn feature_len(&self) -> usize {
        feature_len(self.config.predictor.history_len)
    }

    /// Fresh per-headset networks.
    pub fn new_agents(&self) -> Vec<WiAgent> {
        let mut rng = rng_stream(self.seed, streams::AGENTS);
        let n = self.feature_len();
        (0..self.config.users).map(|_| WiAgent::new(n, &self.config.hyper.hidden, &mut rng)).collect()
    }
}

/// Width of the headset state vector for a history of `history_len` slots.
pub fn feature_len(history_len: usize) -> usize {
    13 + 2 * history_len.saturating_sub(1) + (PATCH * PATCH) as usize
}

/// Run-level outcome of one phase.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Metrics {
    pub slots: usize,
    pub played: usize,
    pub hits: usize,
    pub misses: usize,
    pub hit_probability: f64,
    /// Hit probability over the trailing window of epochs, one value per epoch.
    pub moving_average: Vec<f64>,
    pub final_moving_average: f64,
    pub frame_missing_rate: f64,
    /// Fraction of deliveries meeting the deadline.
    pub delay_satisfaction: f64,
    /// Mean slots from issuing a request to granting it.
    pub waiting_slots: f64,
    pub requests: usize,
    pub deliveries: usize,
    pub obsolete_requests: usize,
    /// Deliveries per slot.
    pub schedule_rate: f64,
    pub mean_x0: f64,
    pub epoch_slots: usize,
}

/// One headset in one slot of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlotRecord {
    pub slot: usize,
    pub user: usize,
    pub wi: Option<f64>,
    pub scheduled: bool,
    pub reward: f64,
    pub hit: bool,
}

/// Writes `slot,user,wi,scheduled,reward,hit`.
pub fn write_records_csv<W: Write>(out: W, records: &[SlotRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["slot", "user", "wi", "scheduled", "reward", "hit"])?;
    for r in records {
        w.write_record([
            r.slot.to_string(),
            r.user.to_string(),
            r.wi.map_or(String::new(), |x| x.to_string()),
            (r.scheduled as u8).to_string(),
            r.reward.to_string(),
            (r.hit as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

impl Metrics {
    /// `key=value` summary lines.
    pub fn summary(&self) -> String {
        format!(
            "slots={}\nplayed={}\nhits={}\nmisses={}\nhit_probability={}\nfinal_moving_average={}\nframe_missing_rate={}\n\
             delay_satisfaction={}\nwaiting_slots={}\nrequests={}\ndeliveries={}\nobsolete_requests={}\nschedule_rate={}\n\
             mean_x0={}\nepoch_slots={}\n",
            self.slots,
            self.played,
            self.hits,
            self.misses,
            self.hit_probability,
            self.final_moving_average,
            self.frame_missing_rate,
            self.delay_satisfaction,
            self.waiting_slots,
            self.requests,
            self.deliveries,
            self.obsolete_requests,
            self.schedule_rate,
            self.mean_x0,
            self.epoch_slots,
        )
    }
}

#[derive(Clone, Copy, Debug)]
struct Request {
    target: Viewpoint,
    deadline: usize,
    issued: usize,
}

#[derive(Clone, Copy, Debug)]
struct Job {
    user: usize,
    item: Buffered,
    done: usize,
}

#[derive(Clone, Debug)]
struct Headset {
    x0: usize,
    buffer: Vec<Buffered>,
    in_flight: Vec<Buffered>,
    history: VecDeque<Tile>,
    pending: Option<Request>,
    channel: ChannelState,
    window_slots: usize,
    window_misses: usize,
    epoch_state: Option<Vec<f64>>,
    epoch_action: u8,
    epoch_reward: f64,
    epoch_eligible: bool,
}

/// Which profile a phase plays and whether the index networks learn.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Test,
}

/// Output of one phase.
#[derive(Clone, Debug)]
pub struct PhaseOutput {
    pub metrics: Metrics,
    pub records: Vec<SlotRecord>,
    /// Mean value and index losses over the phase's updates.
    pub losses: (f64, f64),
    pub updates: usize,
}

struct Engine<'a> {
    world: &'a World,
    traj: &'a TrajectoryStore,
    predictor: &'a (dyn ViewpointPredictor + Send + Sync),
    hyper: SchedulerHyperparams,
    heads: Vec<Headset>,
}

impl<'a> Engine<'a> {
    fn variant(&self, x0: usize) -> &'a Variant {
        &self.world.variants[&x0]
    }

    fn renders(&self, b: &Buffered, v: Viewpoint) -> bool {
        self.variant(b.x0).catalog.renders(b.svc, v)
    }

    fn viewpoint(&self, u: usize, k: usize) -> Viewpoint {
        self.traj.get(u).expect("checked user")[k]
    }

    fn covered(&self, u: usize, v: Viewpoint) -> bool {
        let h = &self.heads[u];
        h.buffer.iter().chain(&h.in_flight).any(|b| self.renders(b, v))
    }

    /// Discounted count of the slots from `k + phi` on that the buffer plus
    /// `item` renders.
    fn delivery_reward(&self, u: usize, k: usize, item: Buffered) -> f64 {
        let kappa = self.hyper.discount;
        let reach = (REWARD_CUTOFF.ln() / kappa.ln()).ceil() as usize;
        let slots = self.traj.get(u).expect("checked user").len();
        let end = (k + reach + 1).min(slots);
        let h = &self.heads[u];
        let rendered: Vec<bool> = (k..end)
            .map(|s| {
                let v = self.viewpoint(u, s);
                self.renders(&item, v) || h.buffer.iter().any(|b| self.renders(b, v))
            })
            .collect();
        reward(1, &rendered, self.hyper.epoch_slots, kappa)
    }

    fn serve(&self, u: usize, req: &Request) -> Result<(SvcId, f64)> {
        let h = &self.heads[u];
        let var = self.variant(h.x0);
        let rate = self.world.config.channel.rate(h.channel);
        serving_svc(&var.catalog, req.target, &var.cache, &self.world.config.delay, rate)
    }

    fn features(&self, u: usize, k: usize) -> Result<Vec<f64>> {
        let w = self.world;
        let grid = w.grid();
        let h = &self.heads[u];
        let horizon = w.config.predictor.horizon as f64;
        let slot_len = w.config.delay.slot_len;
        let mut x = Vec::with_capacity(w.feature_len());
        match &h.pending {
            Some(req) => {
                let (svc, t) = self.serve(u, req)?;
                let var = self.variant(h.x0);
                let hit = cache_hits(&var.catalog, req.target, &var.cache).into_iter().find(|c| c.svc() == svc);
                x.push(1.0);
                x.push(((req.deadline.saturating_sub(k)) as f64 / horizon).min(1.0));
                x.push((t / slot_len / 4.0).min(2.0));
                x.push(matches!(hit, Some(CacheHit::Svc(_))) as u8 as f64);
                x.push(matches!(hit, Some(CacheHit::Group(_))) as u8 as f64);
                x.push(((k - req.issued) as f64 / horizon).min(2.0));
            }
            None => x.extend([0.0, 1.0, 0.0, 0.0, 0.0, 0.0]),
        }
        x.push((h.channel == ChannelState::High) as u8 as f64);
        x.push((k % w.clock.segment_len) as f64 / w.clock.segment_len as f64);
        let hist: Vec<Tile> = h.history.iter().copied().collect();
        let ahead = self.predictor.predict(&hist, w.config.predictor.horizon, grid);
        let covered_ahead = ahead
            .iter()
            .enumerate()
            .filter(|(i, t)| self.covered(u, Viewpoint { tile: **t, segment: w.clock.segment_at(k + 1 + i) }))
            .count();
        x.push(covered_ahead as f64 / ahead.len().max(1) as f64);
        x.push((h.buffer.len() as f64 / 4.0).min(2.0));
        x.push(h.in_flight.len() as f64);
        let moves = hist.windows(2).filter(|p| p[0] != p[1]).count();
        x.push(moves as f64 / hist.len().saturating_sub(1).max(1) as f64);
        let (lo, hi) = x0_bounds(&w.catalog);
        x.push(if hi > lo { (h.x0 - lo) as f64 / (hi - lo) as f64 } else { 0.0 });
        let p = w.config.predictor.history_len;
        for i in 0..p.saturating_sub(1) {
            // most recent displacement first, zero-padded
            let n = hist.len();
            let (dr, dc) = if n >= i + 2 { displacement(grid, hist[n - i - 2], hist[n - i - 1]) } else { (0, 0) };
            x.push((dr as f64).clamp(-2.0, 2.0));
            x.push((dc as f64).clamp(-2.0, 2.0));
        }
        let here = hist.last().copied().unwrap_or(Tile::new(0, 0));
        let seg = w.clock.segment_at(k);
        for dr in -(PATCH / 2)..=PATCH / 2 {
            for dc in -(PATCH / 2)..=PATCH / 2 {
                let t = grid.offset(here, dr, dc);
                x.push(h.buffer.iter().any(|b| self.renders(b, Viewpoint { tile: t, segment: seg })) as u8 as f64);
            }
        }
        debug_assert_eq!(x.len(), w.feature_len());
        Ok(x)
    }
}

/// Plays one profile. `agents` are required for the index policy; they learn
/// during [`Phase::Train`] and are frozen otherwise.
pub fn run_phase(
    world: &World,
    phase: Phase,
    policy: Policy,
    mut agents: Option<&mut Vec<WiAgent>>,
    log: bool,
) -> Result<PhaseOutput> {
    let cfg = &world.config;
    let (traj, slots, stream) = match phase {
        Phase::Train => (&world.train, cfg.train_slots, streams::TRAIN_RUN),
        Phase::Test => (&world.test, cfg.test_slots, streams::TEST_RUN),
    };
    if policy == Policy::Whittle && agents.is_none() {
        return Err(Error::param("the index policy needs trained agents"));
    }
    if let Some(a) = agents.as_deref() {
        if a.len() != cfg.users || a.iter().any(|x| x.w.input_len() != world.feature_len()) {
            return Err(Error::param("agents do not match the configured headsets"));
        }
    }
    let learning = phase == Phase::Train && policy == Policy::Whittle;
    let predictor = build_predictor(&cfg.predictor, world.grid(), &world.train);
    let mut rng = rng_stream(world.seed, stream);
    let channel = cfg.channel;
    let x0 = world.catalog.quality().x0;
    let heads = (0..cfg.users)
        .map(|_| Headset {
            x0,
            buffer: Vec::new(),
            in_flight: Vec::new(),
            history: VecDeque::new(),
            pending: None,
            channel: if rng.gen::<f64>() < channel.pi_high() { ChannelState::High } else { ChannelState::Low },
            window_slots: 0,
            window_misses: 0,
            epoch_state: None,
            epoch_action: 0,
            epoch_reward: 0.0,
            epoch_eligible: false,
        })
        .collect();
    let mut eng = Engine {
        world,
        traj,
        predictor: predictor.as_ref(),
        hyper: world.hyper(),
        heads,
    };
    let phi = eng.hyper.epoch_slots;
    let mut explore = Exploration::from_hyper(&eng.hyper);
    if !learning {
        explore.epsilon = 0.0;
    }
    let mut baseline = Baseline::default();
    let mut units: Vec<Option<Job>> = vec![None; cfg.units];
    let segments = world.catalog.segments();
    let mut m = Metrics {
        slots,
        epoch_slots: phi,
        ..Default::default()
    };
    let mut records = Vec::new();
    let (mut waiting, mut satisfied) = (0usize, 0usize);
    let mut x0_sum = 0usize;
    let mut epoch_hits = Vec::new();
    let (mut loss_q, mut loss_w, mut updates) = (0.0, 0.0, 0usize);
    let users = cfg.users;

    for k in 0..slots {
        let seg = world.clock.segment_at(k);
        // deliveries finishing by now land in the buffers
        for unit in units.iter_mut() {
            if let Some(job) = unit.filter(|j| j.done <= k) {
                let h = &mut eng.heads[job.user];
                h.in_flight.retain(|b| *b != job.item);
                buffer_admit(&mut h.buffer, job.item, BufferPolicy::EvictPlayed, seg, segments);
                *unit = None;
            }
        }
        let mut hits_now = vec![false; users];
        for u in 0..users {
            if world.clock.is_boundary(k) {
                buffer_evict(&mut eng.heads[u].buffer, BufferPolicy::EvictPlayed, seg, segments);
            }
            let v = eng.viewpoint(u, k);
            let hit = eng.heads[u].buffer.iter().any(|b| eng.renders(b, v));
            hits_now[u] = hit;
            m.played += 1;
            if hit {
                m.hits += 1;
            } else {
                m.misses += 1;
            }
            let p = cfg.predictor.history_len;
            let h = &mut eng.heads[u];
            h.history.push_back(v.tile);
            while h.history.len() > p {
                h.history.pop_front();
            }
            x0_sum += h.x0;
            if let QualityPolicy::Adaptive { threshold, window_slots } = cfg.quality {
                h.window_slots += 1;
                h.window_misses += (!hit) as usize;
                if h.window_slots == window_slots {
                    let rate = h.window_misses as f64 / window_slots as f64;
                    h.x0 = adapt_x0(h.x0, rate, threshold, x0_bounds(&world.catalog));
                    h.window_slots = 0;
                    h.window_misses = 0;
                }
            }
        }
        let epoch = k / phi;
        if epoch_hits.len() <= epoch {
            epoch_hits.push((0usize, 0usize));
        }
        epoch_hits[epoch].0 += hits_now.iter().filter(|h| **h).count();
        epoch_hits[epoch].1 += users;

        // requests for the first uncovered predicted viewpoint
        for u in 0..users {
            let hist: Vec<Tile> = eng.heads[u].history.iter().copied().collect();
            let desired = predict_desired(
                eng.predictor,
                &hist,
                k,
                &world.clock,
                world.grid(),
                cfg.predictor.horizon,
                |v| eng.covered(u, v),
            );
            let h = &mut eng.heads[u];
            match (desired, h.pending) {
                (Some((target, deadline)), Some(req)) if req.target == target => {
                    h.pending = Some(Request { deadline, ..req });
                }
                (Some((target, deadline)), old) => {
                    m.obsolete_requests += old.is_some() as usize;
                    m.requests += 1;
                    h.pending = Some(Request { target, deadline, issued: k });
                }
                (None, Some(_)) => {
                    m.obsolete_requests += 1;
                    h.pending = None;
                }
                (None, None) => {}
            }
        }

        // learning on epoch boundaries
        if learning && k % phi == 0 {
            let states: Vec<Vec<f64>> = (0..users).map(|u| eng.features(u, k)).collect::<Result<_>>()?;
            let mut batch = Vec::new();
            for (u, s) in states.into_iter().enumerate() {
                let h = &mut eng.heads[u];
                if let Some(prev) = h.epoch_state.take() {
                    if h.epoch_eligible {
                        batch.push((
                            u,
                            Transition {
                                state: prev,
                                action: h.epoch_action,
                                next_state: s.clone(),
                                reward: h.epoch_reward,
                            },
                        ));
                    }
                }
                h.epoch_eligible = h.pending.is_some();
                h.epoch_state = Some(s);
                h.epoch_action = 0;
                h.epoch_reward = 0.0;
            }
            let agents = agents.as_deref_mut().expect("checked above");
            let hyper = &eng.hyper;
            let mut slots_of: Vec<Option<Transition>> = vec![None; users];
            for (u, tr) in batch {
                slots_of[u] = Some(tr);
            }
            let losses: Vec<Option<(f64, f64)>> = agents
                .par_iter_mut()
                .zip(slots_of.par_iter())
                .map(|(a, tr)| tr.as_ref().map(|t| a.learn(t, hyper)).transpose())
                .collect::<Result<_>>()?;
            for (lq, lw) in losses.into_iter().flatten() {
                loss_q += lq;
                loss_w += lw;
                updates += 1;
            }
        }

        // scheduling
        let free: Vec<usize> = (0..units.len()).filter(|i| units[*i].is_none()).collect();
        let mut wis: Vec<Option<f64>> = vec![None; users];
        let mut rewards = vec![0.0; users];
        let mut granted = vec![false; users];
        if !free.is_empty() {
            let mut reports = Vec::new();
            for u in 0..users {
                if let Some(req) = eng.heads[u].pending {
                    let wi = match (policy, agents.as_deref()) {
                        (Policy::Whittle, Some(a)) => a[u].index(&eng.features(u, k)?),
                        _ => 0.0,
                    };
                    if policy == Policy::Whittle {
                        wis[u] = Some(wi);
                    }
                    reports.push(AgentReport {
                        user: u,
                        pending: true,
                        wi,
                        deadline: req.deadline,
                    });
                }
            }
            let picks = match policy {
                Policy::Whittle => schedule_slot(&reports, free.len(), explore.epsilon, &mut rng),
                other => baseline.schedule(other, &reports, free.len(), &mut rng),
            };
            for (pick, unit) in picks.into_iter().zip(free) {
                let u = reports[pick].user;
                let req = eng.heads[u].pending.expect("reported as pending");
                let (svc, t) = eng.serve(u, &req)?;
                let item = Buffered { svc, x0: eng.heads[u].x0 };
                let occupancy = ((t / cfg.delay.slot_len) - 1e-9).ceil().max(1.0) as usize;
                units[unit] = Some(Job {
                    user: u,
                    item,
                    done: k + occupancy,
                });
                let r = if learning || log { eng.delivery_reward(u, k, item) } else { 0.0 };
                rewards[u] = r;
                granted[u] = true;
                m.deliveries += 1;
                waiting += k - req.issued;
                satisfied += (t < cfg.delay.deadline) as usize;
                let h = &mut eng.heads[u];
                h.in_flight.push(item);
                h.pending = None;
                if learning {
                    h.epoch_action = 1;
                    h.epoch_reward += r;
                    h.epoch_eligible = true;
                }
            }
        }
        if log {
            for u in 0..users {
                records.push(SlotRecord {
                    slot: k,
                    user: u,
                    wi: wis[u],
                    scheduled: granted[u],
                    reward: rewards[u],
                    hit: hits_now[u],
                });
            }
        }
        for h in eng.heads.iter_mut() {
            h.channel = step_channel(&channel, h.channel, &mut rng).0;
        }
        if learning {
            explore.decay();
        }
    }

    m.hit_probability = ratio(m.hits, m.played);
    m.frame_missing_rate = ratio(m.misses, m.played);
    m.delay_satisfaction = ratio(satisfied, m.deliveries);
    m.waiting_slots = if m.deliveries == 0 { 0.0 } else { waiting as f64 / m.deliveries as f64 };
    m.schedule_rate = ratio(m.deliveries, slots);
    m.mean_x0 = if m.played == 0 { 0.0 } else { x0_sum as f64 / m.played as f64 };
    m.moving_average = moving_average(&epoch_hits, cfg.window_epochs);
    m.final_moving_average = m.moving_average.last().copied().unwrap_or(0.0);
    let n = updates.max(1) as f64;
    Ok(PhaseOutput {
        metrics: m,
        records,
        losses: (loss_q / n, loss_w / n),
        updates,
    })
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Hit fraction over the trailing `window` epochs, after every epoch.
pub fn moving_average(epochs: &[(usize, usize)], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(epochs.len());
    let (mut hits, mut total) = (0usize, 0usize);
    for (i, &(h, t)) in epochs.iter().enumerate() {
        hits += h;
        total += t;
        if i >= window {
            hits -= epochs[i - window].0;
            total -= epochs[i - window].1;
        }
        out.push(ratio(hits, total));
    }
    out
}

/// Trains fresh agents on the training profile.
pub fn train(world: &World) -> Result<(Vec<WiAgent>, PhaseOutput)> {
    let mut agents = world.new_agents();
    let out = run_phase(world, Phase::Train, Policy::Whittle, Some(&mut agents), false)?;
    Ok((agents, out))
}

/// Result of [`run`].
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub world: World,
    pub training: Option<PhaseOutput>,
    pub test: PhaseOutput,
    pub agents: Option<Vec<WiAgent>>,
}

/// Builds the world, trains the index networks when the policy needs them and
/// evaluates the configured policy on the test profile.
pub fn run(config: &SimConfig, log: bool) -> Result<RunOutput> {
    let world = World::build(config)?;
    let (agents, training) = if config.policy == Policy::Whittle {
        let (a, t) = train(&world)?;
        (Some(a), Some(t))
    } else {
        (None, None)
    };
    let mut agents = agents;
    let test = run_phase(&world, Phase::Test, config.policy, agents.as_mut(), log)?;
    Ok(RunOutput {
        world,
        training,
        test,
        agents,
    })
}
