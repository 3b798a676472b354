//! Experiment configuration: flat `key=value` text with dotted section keys.
//!
//! Blank lines and `#` comments are ignored, unknown keys are rejected and
//! every key may appear at most once. Lists are comma separated.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::catalog::{CatalogSpec, PopularityModel, QualityConfig, TileGrid, KBIT};
use crate::delay::{ChannelModel, DelayParams};
use crate::dynamics::{PredictorConfig, PredictorKind};
use crate::error::{Error, Result};
use crate::partition::AdmmParams;
use crate::scheduler::{Policy, SchedulerHyperparams};

const MBIT: f64 = 1e6;

/// Where the popularity used for placement comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PopularitySource {
    /// Empirical viewpoint frequencies of the training profile.
    Traces,
    /// The catalog's generative model.
    Model,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum QualityPolicy {
    Fixed,
    /// Widen or narrow the base layer by one MVC per window depending on the
    /// measured miss rate.
    Adaptive { threshold: f64, window_slots: usize },
}

/// What each sweep iterates over.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepValues {
    pub chi: Vec<f64>,
    /// Probabilities of leaving the high-rate state.
    pub p_high: Vec<f64>,
    pub x0: Vec<usize>,
    pub policies: Vec<Policy>,
    /// Scheduler used by the chi, channel and x0 sweeps.
    pub policy: Policy,
}

impl Default for SweepValues {
    fn default() -> Self {
        SweepValues {
            chi: vec![1e-8, 2e-8, 3e-8, 4e-8, 5e-8],
            p_high: vec![0.2, 0.4, 0.6, 0.8],
            x0: vec![35, 40, 45, 50, 55, 60, 63, 68],
            policies: vec![Policy::Whittle, Policy::UrgentFirst, Policy::RoundRobin, Policy::Random],
            policy: Policy::UrgentFirst,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub seed: Option<u64>,
    pub catalog: CatalogSpec,
    pub popularity: PopularitySource,
    pub delay: DelayParams,
    pub channel: ChannelModel,
    /// Edge cache capacity, bits.
    pub capacity: f64,
    pub users: usize,
    pub units: usize,
    pub segment_slots: usize,
    pub train_slots: usize,
    pub test_slots: usize,
    /// Per-user movement probability per direction, drawn uniformly from this range.
    pub move_prob: (f64, f64),
    pub train_traces: Option<PathBuf>,
    pub test_traces: Option<PathBuf>,
    pub policy: Policy,
    pub hyper: SchedulerHyperparams,
    /// Fixed epoch length; `None` derives it from the mean delivery delay.
    pub epoch_slots: Option<usize>,
    pub predictor: PredictorConfig,
    pub quality: QualityPolicy,
    /// Moving-average window of the hit probability, in epochs.
    pub window_epochs: usize,
    pub replications: usize,
    pub admm: AdmmParams,
    pub segments_per_subset: usize,
    pub sweep: SweepValues,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: None,
            catalog: CatalogSpec::default(),
            popularity: PopularitySource::Traces,
            delay: DelayParams::default(),
            channel: ChannelModel::default(),
            capacity: 40.0 * MBIT,
            users: 10,
            units: 1,
            segment_slots: 121,
            train_slots: 20_000,
            test_slots: 6_000,
            move_prob: (0.01, 0.06),
            train_traces: None,
            test_traces: None,
            policy: Policy::Whittle,
            hyper: SchedulerHyperparams::default(),
            epoch_slots: None,
            predictor: PredictorConfig {
                kind: PredictorKind::Velocity,
                history_len: 5,
                horizon: 15,
            },
            quality: QualityPolicy::Fixed,
            window_epochs: 1000,
            replications: 5,
            admm: AdmmParams::default(),
            segments_per_subset: 1,
            sweep: SweepValues::default(),
        }
    }
}

fn bad(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, format!("cannot parse `{v}`")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| num(key, x.trim())).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "seed",
    "catalog.rows",
    "catalog.cols",
    "catalog.fov_rows",
    "catalog.fov_cols",
    "catalog.segments",
    "catalog.x_total",
    "catalog.x0",
    "catalog.alpha",
    "catalog.mvc_kbit_mean",
    "catalog.mvc_kbit_sd",
    "catalog.popularity",
    "catalog.hotspot_spread",
    "catalog.segment_skew",
    "delay.chi",
    "delay.deadline_ms",
    "delay.slot_ms",
    "delay.backhaul_mbps",
    "channel.rate_high_mbps",
    "channel.rate_low_mbps",
    "channel.p_high",
    "channel.p_low",
    "cache.capacity_mbit",
    "sim.users",
    "sim.units",
    "sim.segment_slots",
    "sim.train_slots",
    "sim.test_slots",
    "sim.move_prob_min",
    "sim.move_prob_max",
    "sim.train_traces",
    "sim.test_traces",
    "sim.window_epochs",
    "sim.replications",
    "scheduler.policy",
    "scheduler.discount",
    "scheduler.epoch_slots",
    "scheduler.wi_step",
    "scheduler.lr_q",
    "scheduler.lr_w",
    "scheduler.epsilon",
    "scheduler.eps_min",
    "scheduler.eps_attn",
    "scheduler.discount_target",
    "scheduler.grad_clip",
    "scheduler.optimizer",
    "scheduler.hidden",
    "predictor.kind",
    "predictor.history",
    "predictor.horizon",
    "quality.policy",
    "quality.miss_threshold",
    "quality.window_slots",
    "partition.segments_per_subset",
    "partition.rho1",
    "partition.rho2",
    "partition.eps1",
    "partition.eps2",
    "partition.sigma0",
    "partition.attn",
    "partition.max_iter",
    "sweep.chi",
    "sweep.p_high",
    "sweep.x0",
    "sweep.policies",
    "sweep.policy",
];

impl SimConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SimConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, got `{line}`"),
            })?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(bad(k, format!("repeated on line {}", i + 1)));
            }
            cfg.set(k, v.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let quality = &mut self.catalog.quality;
        match key {
            "seed" => self.seed = Some(num(key, v)?),
            "catalog.rows" => self.catalog.grid.rows = num(key, v)?,
            "catalog.cols" => self.catalog.grid.cols = num(key, v)?,
            "catalog.fov_rows" => self.catalog.grid.fov_rows = num(key, v)?,
            "catalog.fov_cols" => self.catalog.grid.fov_cols = num(key, v)?,
            "catalog.segments" => self.catalog.segments = num(key, v)?,
            "catalog.x_total" => *quality = QualityConfig::new(num(key, v)?, quality.x0),
            "catalog.x0" => *quality = QualityConfig::new(quality.x_total, num(key, v)?),
            "catalog.alpha" => self.catalog.alpha = num(key, v)?,
            "catalog.mvc_kbit_mean" => self.catalog.size_mean = num::<f64>(key, v)? * KBIT,
            "catalog.mvc_kbit_sd" => self.catalog.size_sd = num::<f64>(key, v)? * KBIT,
            "catalog.popularity" => {
                let (spread, skew) = match self.catalog.popularity {
                    PopularityModel::Hotspot { spread, segment_skew } => (spread, segment_skew),
                    _ => (2.0, 0.5),
                };
                match v {
                    "traces" => {
                        self.popularity = PopularitySource::Traces;
                        self.catalog.popularity = PopularityModel::Hotspot { spread, segment_skew: skew };
                    }
                    "hotspot" => {
                        self.popularity = PopularitySource::Model;
                        self.catalog.popularity = PopularityModel::Hotspot { spread, segment_skew: skew };
                    }
                    "uniform" => {
                        self.popularity = PopularitySource::Model;
                        self.catalog.popularity = PopularityModel::Uniform;
                    }
                    _ => return Err(bad(key, "expected traces, hotspot or uniform")),
                }
            }
            "catalog.hotspot_spread" | "catalog.segment_skew" => {
                let x: f64 = num(key, v)?;
                match &mut self.catalog.popularity {
                    PopularityModel::Hotspot { spread, segment_skew } => {
                        if key.ends_with("spread") {
                            *spread = x;
                        } else {
                            *segment_skew = x;
                        }
                    }
                    _ => return Err(bad(key, "only meaningful for hotspot popularity")),
                }
            }
            "delay.chi" => self.delay.chi = num(key, v)?,
            "delay.deadline_ms" => self.delay.deadline = num::<f64>(key, v)? / 1e3,
            "delay.slot_ms" => self.delay.slot_len = num::<f64>(key, v)? / 1e3,
            "delay.backhaul_mbps" => self.delay.backhaul_rate = num::<f64>(key, v)? * MBIT,
            "channel.rate_high_mbps" => self.channel.rate_high = num::<f64>(key, v)? * MBIT,
            "channel.rate_low_mbps" => self.channel.rate_low = num::<f64>(key, v)? * MBIT,
            "channel.p_high" => self.channel.p_to_low = num(key, v)?,
            "channel.p_low" => self.channel.p_to_high = num(key, v)?,
            "cache.capacity_mbit" => self.capacity = num::<f64>(key, v)? * MBIT,
            "sim.users" => self.users = num(key, v)?,
            "sim.units" => {
                self.units = num(key, v)?;
                self.hyper.computing_units = self.units;
            }
            "sim.segment_slots" => self.segment_slots = num(key, v)?,
            "sim.train_slots" => self.train_slots = num(key, v)?,
            "sim.test_slots" => self.test_slots = num(key, v)?,
            "sim.move_prob_min" => self.move_prob.0 = num(key, v)?,
            "sim.move_prob_max" => self.move_prob.1 = num(key, v)?,
            "sim.train_traces" => self.train_traces = (!v.is_empty()).then(|| PathBuf::from(v)),
            "sim.test_traces" => self.test_traces = (!v.is_empty()).then(|| PathBuf::from(v)),
            "sim.window_epochs" => self.window_epochs = num(key, v)?,
            "sim.replications" => self.replications = num(key, v)?,
            "scheduler.policy" => self.policy = v.parse()?,
            "scheduler.discount" => self.hyper.discount = num(key, v)?,
            "scheduler.epoch_slots" => {
                self.epoch_slots = if v == "auto" { None } else { Some(num(key, v)?) };
            }
            "scheduler.wi_step" => self.hyper.wi_step = num(key, v)?,
            "scheduler.lr_q" => self.hyper.lr_q = num(key, v)?,
            "scheduler.lr_w" => self.hyper.lr_w = num(key, v)?,
            "scheduler.epsilon" => self.hyper.epsilon = num(key, v)?,
            "scheduler.eps_min" => self.hyper.eps_min = num(key, v)?,
            "scheduler.eps_attn" => self.hyper.eps_attn = num(key, v)?,
            "scheduler.discount_target" => self.hyper.discount_target = num(key, v)?,
            "scheduler.grad_clip" => self.hyper.grad_clip = num(key, v)?,
            "scheduler.optimizer" => self.hyper.optimizer = num(key, v)?,
            "scheduler.hidden" => self.hyper.hidden = list(key, v)?,
            "predictor.kind" => self.predictor.kind = v.parse()?,
            "predictor.history" => self.predictor.history_len = num(key, v)?,
            "predictor.horizon" => self.predictor.horizon = num(key, v)?,
            "quality.policy" => {
                self.quality = match v {
                    "fixed" => QualityPolicy::Fixed,
                    "adaptive" => match self.quality {
                        QualityPolicy::Adaptive { .. } => self.quality,
                        QualityPolicy::Fixed => QualityPolicy::Adaptive {
                            threshold: 0.05,
                            window_slots: self.segment_slots,
                        },
                    },
                    _ => return Err(bad(key, "expected fixed or adaptive")),
                }
            }
            "quality.miss_threshold" | "quality.window_slots" => match &mut self.quality {
                QualityPolicy::Adaptive { threshold, window_slots } => {
                    if key.ends_with("threshold") {
                        *threshold = num(key, v)?;
                    } else {
                        *window_slots = num(key, v)?;
                    }
                }
                QualityPolicy::Fixed => return Err(bad(key, "set quality.policy=adaptive first")),
            },
            "partition.segments_per_subset" => self.segments_per_subset = num(key, v)?,
            "partition.rho1" => self.admm.rho1 = num(key, v)?,
            "partition.rho2" => self.admm.rho2 = num(key, v)?,
            "partition.eps1" => self.admm.eps1 = num(key, v)?,
            "partition.eps2" => self.admm.eps2 = num(key, v)?,
            "partition.sigma0" => self.admm.sigma0 = num(key, v)?,
            "partition.attn" => self.admm.attn = num(key, v)?,
            "partition.max_iter" => self.admm.max_iter = num(key, v)?,
            "sweep.chi" => self.sweep.chi = list(key, v)?,
            "sweep.p_high" => self.sweep.p_high = list(key, v)?,
            "sweep.x0" => self.sweep.x0 = list(key, v)?,
            "sweep.policies" => self.sweep.policies = list(key, v)?,
            "sweep.policy" => self.sweep.policy = v.parse()?,
            _ => return Err(bad(key, "unknown key")),
        }
        Ok(())
    }

    /// The resolved configuration as `key=value` lines, parseable by [`SimConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let c = &self.catalog;
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        if let Some(seed) = self.seed {
            put("seed", seed.to_string());
        }
        put("catalog.rows", c.grid.rows.to_string());
        put("catalog.cols", c.grid.cols.to_string());
        put("catalog.fov_rows", c.grid.fov_rows.to_string());
        put("catalog.fov_cols", c.grid.fov_cols.to_string());
        put("catalog.segments", c.segments.to_string());
        put("catalog.x_total", c.quality.x_total.to_string());
        put("catalog.x0", c.quality.x0.to_string());
        put("catalog.alpha", c.alpha.to_string());
        put("catalog.mvc_kbit_mean", (c.size_mean / KBIT).to_string());
        put("catalog.mvc_kbit_sd", (c.size_sd / KBIT).to_string());
        match (&c.popularity, self.popularity) {
            (PopularityModel::Hotspot { spread, segment_skew }, src) => {
                put("catalog.popularity", if src == PopularitySource::Traces { "traces" } else { "hotspot" }.into());
                put("catalog.hotspot_spread", spread.to_string());
                put("catalog.segment_skew", segment_skew.to_string());
            }
            _ => put("catalog.popularity", "uniform".into()),
        }
        put("delay.chi", self.delay.chi.to_string());
        put("delay.deadline_ms", (self.delay.deadline * 1e3).to_string());
        put("delay.slot_ms", (self.delay.slot_len * 1e3).to_string());
        put("delay.backhaul_mbps", (self.delay.backhaul_rate / MBIT).to_string());
        put("channel.rate_high_mbps", (self.channel.rate_high / MBIT).to_string());
        put("channel.rate_low_mbps", (self.channel.rate_low / MBIT).to_string());
        put("channel.p_high", self.channel.p_to_low.to_string());
        put("channel.p_low", self.channel.p_to_high.to_string());
        put("cache.capacity_mbit", (self.capacity / MBIT).to_string());
        put("sim.users", self.users.to_string());
        put("sim.units", self.units.to_string());
        put("sim.segment_slots", self.segment_slots.to_string());
        put("sim.train_slots", self.train_slots.to_string());
        put("sim.test_slots", self.test_slots.to_string());
        put("sim.move_prob_min", self.move_prob.0.to_string());
        put("sim.move_prob_max", self.move_prob.1.to_string());
        if let Some(p) = &self.train_traces {
            put("sim.train_traces", p.display().to_string());
        }
        if let Some(p) = &self.test_traces {
            put("sim.test_traces", p.display().to_string());
        }
        put("sim.window_epochs", self.window_epochs.to_string());
        put("sim.replications", self.replications.to_string());
        let h = &self.hyper;
        put("scheduler.policy", self.policy.to_string());
        put("scheduler.discount", h.discount.to_string());
        put("scheduler.epoch_slots", self.epoch_slots.map_or("auto".into(), |e| e.to_string()));
        put("scheduler.wi_step", h.wi_step.to_string());
        put("scheduler.lr_q", h.lr_q.to_string());
        put("scheduler.lr_w", h.lr_w.to_string());
        put("scheduler.epsilon", h.epsilon.to_string());
        put("scheduler.eps_min", h.eps_min.to_string());
        put("scheduler.eps_attn", h.eps_attn.to_string());
        put("scheduler.discount_target", h.discount_target.to_string());
        put("scheduler.grad_clip", h.grad_clip.to_string());
        put("scheduler.optimizer", h.optimizer.to_string());
        put("scheduler.hidden", join(&h.hidden));
        put(
            "predictor.kind",
            match self.predictor.kind {
                PredictorKind::Persistence => "persistence",
                PredictorKind::Velocity => "velocity",
                PredictorKind::Learned => "learned",
            }
            .into(),
        );
        put("predictor.history", self.predictor.history_len.to_string());
        put("predictor.horizon", self.predictor.horizon.to_string());
        match self.quality {
            QualityPolicy::Fixed => put("quality.policy", "fixed".into()),
            QualityPolicy::Adaptive { threshold, window_slots } => {
                put("quality.policy", "adaptive".into());
                put("quality.miss_threshold", threshold.to_string());
                put("quality.window_slots", window_slots.to_string());
            }
        }
        let a = &self.admm;
        put("partition.segments_per_subset", self.segments_per_subset.to_string());
        put("partition.rho1", a.rho1.to_string());
        put("partition.rho2", a.rho2.to_string());
        put("partition.eps1", a.eps1.to_string());
        put("partition.eps2", a.eps2.to_string());
        put("partition.sigma0", a.sigma0.to_string());
        put("partition.attn", a.attn.to_string());
        put("partition.max_iter", a.max_iter.to_string());
        put("sweep.chi", join(&self.sweep.chi));
        put("sweep.p_high", join(&self.sweep.p_high));
        put("sweep.x0", join(&self.sweep.x0));
        put("sweep.policies", join(&self.sweep.policies));
        put("sweep.policy", self.sweep.policy.to_string());
        s
    }

    /// The seed, which must come from the file or the command line.
    pub fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| bad("seed", "a seed is required (config key or --seed)"))
    }

    /// Checks everything that can be checked before slot 0.
    pub fn validate(&self) -> Result<()> {
        self.require_seed()?;
        let g = self.catalog.grid;
        let grid = TileGrid::new(g.rows, g.cols, g.fov_rows, g.fov_cols)?;
        self.catalog.quality.validate(&grid)?;
        if self.catalog.segments == 0 {
            return Err(bad("catalog.segments", "must be positive"));
        }
        self.delay.validate()?;
        self.channel.validate()?;
        if !(self.capacity >= 0.0) {
            return Err(bad("cache.capacity_mbit", "must be non-negative"));
        }
        if self.users == 0 {
            return Err(bad("sim.users", "must be positive"));
        }
        if self.segment_slots == 0 {
            return Err(bad("sim.segment_slots", "must be positive"));
        }
        let (lo, hi) = self.move_prob;
        if !(0.0 <= lo && lo <= hi && hi <= 0.25) {
            return Err(bad("sim.move_prob_min", "need 0 <= min <= max <= 0.25"));
        }
        self.hyper.validate()?;
        if self.hyper.hidden.contains(&0) {
            return Err(bad("scheduler.hidden", "layer widths must be positive"));
        }
        if self.epoch_slots == Some(0) {
            return Err(bad("scheduler.epoch_slots", "must be positive"));
        }
        self.predictor.validate()?;
        if self.predictor.horizon == 0 {
            return Err(bad("predictor.horizon", "must be positive"));
        }
        if let QualityPolicy::Adaptive { threshold, window_slots } = self.quality {
            if !(0.0..=1.0).contains(&threshold) || window_slots == 0 {
                return Err(bad("quality.miss_threshold", "need a threshold in [0, 1] and a positive window"));
            }
        }
        if self.window_epochs == 0 {
            return Err(bad("sim.window_epochs", "must be positive"));
        }
        if self.replications == 0 {
            return Err(bad("sim.replications", "must be positive"));
        }
        if self.segments_per_subset == 0 {
            return Err(bad("partition.segments_per_subset", "must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = SimConfig {
            seed: Some(7),
            ..Default::default()
        };
        let back = SimConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        for line in cfg.to_text().lines() {
            let key = line.split('=').next().unwrap();
            assert!(KEYS.contains(&key), "{key}");
        }
    }

    #[test]
    fn adaptive_and_lists_round_trip() {
        let text = "seed=3\nquality.policy=adaptive\nquality.miss_threshold=0.1\nsweep.policies=urf,random\nscheduler.hidden=8\n";
        let cfg = SimConfig::parse(text).unwrap();
        assert_eq!(cfg.sweep.policies, vec![Policy::UrgentFirst, Policy::Random]);
        assert_eq!(cfg.hyper.hidden, vec![8]);
        assert_eq!(SimConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn units_are_converted() {
        let cfg = SimConfig::parse("channel.p_high=0.6\nchannel.rate_high_mbps=500\ndelay.deadline_ms=85 # comment\n").unwrap();
        assert_eq!(cfg.channel.p_to_low, 0.6);
        assert_eq!(cfg.channel.rate_high, 500e6);
        assert!((cfg.delay.deadline - 0.085).abs() < 1e-15);
    }

    #[test]
    fn rejects_unknown_repeated_and_malformed() {
        assert!(matches!(SimConfig::parse("cache.size=3"), Err(Error::Config { .. })));
        assert!(matches!(SimConfig::parse("seed=1\nseed=2"), Err(Error::Config { .. })));
        assert!(matches!(SimConfig::parse("seed"), Err(Error::Parse { line: 1, .. })));
        assert!(SimConfig::parse("sim.users=ten").is_err());
        assert!(SimConfig::parse("quality.miss_threshold=0.1").is_err());
    }

    #[test]
    fn seed_is_mandatory() {
        let cfg = SimConfig::default();
        assert!(cfg.validate().is_err());
        let cfg = SimConfig { seed: Some(1), ..cfg };
        cfg.validate().unwrap();
    }
}
