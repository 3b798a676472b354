//! Request scheduling for the headsets sharing the edge computing units.
//!
//! Every headset runs two approximators: one for the action values of its
//! request state and one for its Whittle index. The server grants free units
//! to the highest reported indices, exploring at random with a decaying
//! probability. Urgency-first, round-robin and uniform random policies serve as
//! baselines.

mod net;
mod whittle;

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

pub use net::{Mlp, Moments};
pub use whittle::{
    action_values, exact_whittle, indexability_sweep, passive_set, subsidy_bound, IndexabilitySweep, ToyMdp, INDEX_TOL,
};

#[derive(Clone, Debug, PartialEq)]
pub struct SchedulerHyperparams {
    /// Reward discount per slot (`kappa`).
    pub discount: f64,
    /// Slots per decision epoch (`phi`).
    pub epoch_slots: usize,
    /// Step of the reference index (`varphi`).
    pub wi_step: f64,
    pub lr_q: f64,
    pub lr_w: f64,
    pub epsilon: f64,
    pub eps_min: f64,
    /// Per-slot decay factor of the exploration probability.
    pub eps_attn: f64,
    pub computing_units: usize,
    /// Discount the next-state action value by `kappa^phi` in the value loss.
    pub discount_target: bool,
    /// Gradient norm bound for both updates.
    pub grad_clip: f64,
    pub optimizer: Optimizer,
    pub hidden: Vec<usize>,
}

impl Default for SchedulerHyperparams {
    fn default() -> Self {
        SchedulerHyperparams {
            discount: 0.95,
            epoch_slots: 1,
            wi_step: 0.5,
            lr_q: 5e-4,
            lr_w: 1e-4,
            epsilon: 1.0,
            eps_min: 0.05,
            eps_attn: 0.9995,
            computing_units: 1,
            discount_target: false,
            grad_clip: 10.0,
            optimizer: Optimizer::Sgd,
            hidden: vec![64, 64],
        }
    }
}

impl SchedulerHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::param("discount must lie in (0, 1)"));
        }
        if !(self.lr_q > 0.0 && self.lr_w > 0.0) {
            return Err(Error::param("learning rates must be positive"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) || !(0.0..=1.0).contains(&self.eps_min) {
            return Err(Error::param("exploration probabilities must lie in [0, 1]"));
        }
        if self.epoch_slots == 0 {
            return Err(Error::param("an epoch spans at least one slot"));
        }
        Ok(())
    }

    /// `kappa^phi`, or 1 when the value target is undiscounted.
    pub fn target_discount(&self) -> f64 {
        if self.discount_target {
            self.discount.powi(self.epoch_slots as i32)
        } else {
            1.0
        }
    }
}

/// Update rule applied to the approximator gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(Error::param(format!("unknown optimizer `{other}`"))),
        }
    }
}

impl std::fmt::Display for Optimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        })
    }
}

fn apply_step(net: &mut Mlp, moments: &mut Moments, grad: &[f64], scale: f64, rate: f64, hyper: &SchedulerHyperparams) {
    match hyper.optimizer {
        Optimizer::Sgd => net.step(grad, scale, rate, hyper.grad_clip),
        Optimizer::Adam => net.adam_step(moments, grad, scale, rate, hyper.grad_clip),
    }
}

/// Slots per epoch for mean delivery delay `mean_delay` seconds.
pub fn epoch_slots(mean_delay: f64, units: usize, slot_len: f64) -> usize {
    let phi = mean_delay / (units.max(1) as f64 * slot_len);
    phi.round().max(1.0) as usize
}

/// Discounted count of future viewpoints the post-delivery buffer renders.
///
/// `rendered[i]` tells whether the viewpoint played `i` slots after the
/// decision is renderable; only slots from `phi` on count.
pub fn reward(action: u8, rendered: &[bool], phi: usize, discount: f64) -> f64 {
    if action == 0 {
        return 0.0;
    }
    rendered
        .iter()
        .enumerate()
        .skip(phi)
        .filter(|(_, r)| **r)
        .map(|(i, _)| discount.powi(i as i32))
        .sum()
}

fn with_action(state: &[f64], action: u8) -> Vec<f64> {
    let mut x = state.to_vec();
    x.push(action as f64);
    x
}

/// Action value of `state` under `action`.
pub fn approx_q(q: &Mlp, state: &[f64], action: u8) -> f64 {
    q.forward(&with_action(state, action))
}

pub fn approx_wi(w: &Mlp, state: &[f64]) -> f64 {
    w.forward(state)
}

/// One observed epoch of a headset.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: u8,
    pub next_state: Vec<f64>,
    pub reward: f64,
}

fn finite(what: &str, x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// One gradient step on the squared temporal difference of the value network.
/// The next-state value is a fixed target. Returns the loss before the step.
pub fn update_q(tr: &Transition, q: &mut Mlp, w: &Mlp, hyper: &SchedulerHyperparams) -> Result<f64> {
    update_q_with(tr, q, &mut Moments::default(), w, hyper)
}

/// [`update_q`] carrying optimizer state across calls.
pub fn update_q_with(tr: &Transition, q: &mut Mlp, moments: &mut Moments, w: &Mlp, hyper: &SchedulerHyperparams) -> Result<f64> {
    let next = approx_q(q, &tr.next_state, tr.action);
    let subsidy = if tr.action == 0 { approx_wi(w, &tr.state) } else { 0.0 };
    let target = hyper.target_discount() * next + subsidy + tr.reward * tr.action as f64;
    let (value, grad) = q.gradient(&with_action(&tr.state, tr.action));
    let td = value - target;
    let loss = finite("value loss", td * td)?;
    apply_step(q, moments, &grad, 2.0 * td, hyper.lr_q, hyper);
    if !q.is_finite() {
        return Err(Error::NonFinite("value network parameters".into()));
    }
    Ok(loss)
}

/// Reference index `lambda - varphi (Q(s, 0) - Q(s, 1))`.
pub fn reference_index(state: &[f64], q: &Mlp, w: &Mlp, hyper: &SchedulerHyperparams) -> f64 {
    approx_wi(w, state) - hyper.wi_step * (approx_q(q, state, 0) - approx_q(q, state, 1))
}

/// Regresses the index network toward the fixed reference index. Returns the
/// loss before the step.
pub fn update_wi(state: &[f64], q: &Mlp, w: &mut Mlp, hyper: &SchedulerHyperparams) -> Result<f64> {
    update_wi_with(state, q, w, &mut Moments::default(), hyper)
}

/// [`update_wi`] carrying optimizer state across calls.
pub fn update_wi_with(state: &[f64], q: &Mlp, w: &mut Mlp, moments: &mut Moments, hyper: &SchedulerHyperparams) -> Result<f64> {
    let target = reference_index(state, q, w, hyper);
    let (value, grad) = w.gradient(state);
    let err = value - target;
    let loss = finite("index loss", err * err)?;
    if err != 0.0 {
        apply_step(w, moments, &grad, 2.0 * err, hyper.lr_w, hyper);
    }
    if !w.is_finite() {
        return Err(Error::NonFinite("index network parameters".into()));
    }
    Ok(loss)
}

/// The two networks of one headset, with their optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct WiAgent {
    pub q: Mlp,
    pub w: Mlp,
    pub q_moments: Moments,
    pub w_moments: Moments,
}

impl WiAgent {
    pub fn new<R: Rng + ?Sized>(features: usize, hidden: &[usize], rng: &mut R) -> Self {
        WiAgent {
            q: Mlp::init(features + 1, hidden, rng),
            w: Mlp::init(features, hidden, rng),
            q_moments: Moments::default(),
            w_moments: Moments::default(),
        }
    }

    pub fn index(&self, state: &[f64]) -> f64 {
        approx_wi(&self.w, state)
    }

    /// Value update followed by index update on one transition.
    pub fn learn(&mut self, tr: &Transition, hyper: &SchedulerHyperparams) -> Result<(f64, f64)> {
        let lq = update_q_with(tr, &mut self.q, &mut self.q_moments, &self.w, hyper)?;
        let lw = update_wi_with(&tr.state, &self.q, &mut self.w, &mut self.w_moments, hyper)?;
        Ok((lq, lw))
    }
}

/// One-hot state encoding used when learning on a [`ToyMdp`].
pub fn one_hot(states: usize, s: usize) -> Vec<f64> {
    let mut x = vec![0.0; states];
    x[s] = 1.0;
    x
}

const AVG_EVERY: usize = 50;

/// Learns an index for every state of `mdp` from `steps` transitions of a
/// single arm acting uniformly at random, with one-hot state features. The
/// epoch length is taken from the MDP's delay. Returns the agent and the
/// index per state, averaged over snapshots from the second half of training.
pub fn learn_toy_index<R: Rng + ?Sized>(
    mdp: &ToyMdp,
    hyper: &SchedulerHyperparams,
    steps: usize,
    rng: &mut R,
) -> Result<(WiAgent, Vec<f64>)> {
    let n = mdp.states();
    let hyper = SchedulerHyperparams {
        epoch_slots: mdp.delay,
        ..hyper.clone()
    };
    let mut agent = WiAgent::new(n, &hyper.hidden, rng);
    let mut s = rng.gen_range(0..n);
    let mut avg = vec![0.0; n];
    let mut samples = 0usize;
    for step in 0..steps {
        let a = rng.gen_range(0..2u8);
        let row = &mdp.transitions[a as usize][s];
        let mut u: f64 = rng.gen();
        let mut next = row.last().map_or(s, |t| t.0);
        for &(t, p) in row {
            if u < p {
                next = t;
                break;
            }
            u -= p;
        }
        let tr = Transition {
            state: one_hot(n, s),
            action: a,
            next_state: one_hot(n, next),
            reward: mdp.rewards[a as usize][s],
        };
        agent.learn(&tr, &hyper)?;
        s = next;
        if step >= steps / 2 && step % AVG_EVERY == 0 {
            for (i, a) in avg.iter_mut().enumerate() {
                *a += agent.index(&one_hot(n, i));
            }
            samples += 1;
        }
    }
    let index = if samples > 0 {
        avg.iter().map(|a| a / samples as f64).collect()
    } else {
        (0..n).map(|s| agent.index(&one_hot(n, s))).collect()
    };
    Ok((agent, index))
}

/// What a headset reports to the server in a slot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentReport {
    pub user: usize,
    pub pending: bool,
    pub wi: f64,
    /// Slot at which the requested content is played.
    pub deadline: usize,
}

/// Exploration probability with multiplicative decay down to a floor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Exploration {
    pub epsilon: f64,
    pub eps_min: f64,
    pub attn: f64,
}

impl Exploration {
    pub fn from_hyper(h: &SchedulerHyperparams) -> Self {
        Exploration {
            epsilon: h.epsilon,
            eps_min: h.eps_min,
            attn: h.eps_attn,
        }
    }

    pub fn decay(&mut self) {
        if self.epsilon > self.eps_min {
            self.epsilon = (self.epsilon * self.attn).max(self.eps_min);
        }
    }
}

fn pending_users(agents: &[AgentReport]) -> Vec<usize> {
    agents.iter().enumerate().filter(|(_, a)| a.pending).map(|(i, _)| i).collect()
}

/// Grants up to `free_units` requests: with probability `epsilon` a uniformly
/// random pending request, otherwise the highest index (lowest user id on
/// ties). Returns positions in `agents`.
pub fn schedule_slot<R: Rng + ?Sized>(agents: &[AgentReport], free_units: usize, epsilon: f64, rng: &mut R) -> Vec<usize> {
    let mut left = pending_users(agents);
    let mut out = Vec::new();
    for _ in 0..free_units {
        if left.is_empty() {
            break;
        }
        let pick = if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
            rng.gen_range(0..left.len())
        } else {
            let mut best = 0;
            for (i, &a) in left.iter().enumerate() {
                let (cur, b) = (&agents[a], &agents[left[best]]);
                if cur.wi > b.wi || (cur.wi == b.wi && cur.user < b.user) {
                    best = i;
                }
            }
            best
        };
        out.push(left.remove(pick));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Policy {
    Whittle,
    UrgentFirst,
    RoundRobin,
    Random,
}

impl std::str::FromStr for Policy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "wi" | "whittle" => Ok(Policy::Whittle),
            "urf" => Ok(Policy::UrgentFirst),
            "roundrobin" | "round-robin" | "rr" => Ok(Policy::RoundRobin),
            "random" => Ok(Policy::Random),
            other => Err(Error::param(format!("unknown scheduling policy `{other}`"))),
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Policy::Whittle => "wi",
            Policy::UrgentFirst => "urf",
            Policy::RoundRobin => "roundrobin",
            Policy::Random => "random",
        })
    }
}

/// Baseline schedulers; round-robin remembers where it stopped.
#[derive(Clone, Debug, Default)]
pub struct Baseline {
    next_user: usize,
}

impl Baseline {
    pub fn schedule<R: Rng + ?Sized>(&mut self, policy: Policy, agents: &[AgentReport], free_units: usize, rng: &mut R) -> Vec<usize> {
        let mut left = pending_users(agents);
        let mut out = Vec::new();
        for _ in 0..free_units {
            if left.is_empty() {
                break;
            }
            let pick = match policy {
                Policy::UrgentFirst => {
                    let mut best = 0;
                    for (i, &a) in left.iter().enumerate() {
                        let (cur, b) = (&agents[a], &agents[left[best]]);
                        if (cur.deadline, cur.user) < (b.deadline, b.user) {
                            best = i;
                        }
                    }
                    best
                }
                Policy::RoundRobin => {
                    let start = self.next_user;
                    let key = |i: &usize| {
                        let u = agents[left[*i]].user;
                        (u < start, u)
                    };
                    let best = (0..left.len()).min_by_key(key).expect("non-empty");
                    self.next_user = agents[left[best]].user + 1;
                    best
                }
                Policy::Random => rng.gen_range(0..left.len()),
                Policy::Whittle => {
                    return schedule_slot(agents, free_units, 0.0, rng);
                }
            };
            out.push(left.remove(pick));
        }
        out
    }
}

/// Text header of a parameter checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub features: usize,
    pub hidden: Vec<usize>,
    pub agents: usize,
    pub seed: u64,
    pub iteration: u64,
}

/// Writes `<stem>.txt` (header) and `<stem>.bin` (little-endian f64 values:
/// for each agent its value network then its index network).
pub fn save_checkpoint(stem: &Path, header: &CheckpointHeader, agents: &[WiAgent]) -> Result<()> {
    let mut txt = std::fs::File::create(stem.with_extension("txt"))?;
    let hidden: Vec<String> = header.hidden.iter().map(|h| h.to_string()).collect();
    writeln!(txt, "features={}", header.features)?;
    writeln!(txt, "hidden={}", hidden.join(","))?;
    writeln!(txt, "activation=elu")?;
    writeln!(txt, "agents={}", agents.len())?;
    writeln!(txt, "seed={}", header.seed)?;
    writeln!(txt, "iteration={}", header.iteration)?;
    let mut bytes = Vec::new();
    for a in agents {
        for p in a.q.params().iter().chain(a.w.params()) {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
    }
    std::fs::write(stem.with_extension("bin"), bytes)?;
    Ok(())
}

pub fn load_checkpoint(stem: &Path) -> Result<(CheckpointHeader, Vec<WiAgent>)> {
    let txt = std::io::BufReader::new(std::fs::File::open(stem.with_extension("txt"))?);
    let mut header = CheckpointHeader {
        features: 0,
        hidden: Vec::new(),
        agents: 0,
        seed: 0,
        iteration: 0,
    };
    for (i, line) in txt.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse { line: i + 1, msg: msg.to_string() };
        let (k, v) = line.split_once('=').ok_or_else(|| bad("expected key=value"))?;
        let num = |v: &str| v.parse::<u64>().map_err(|_| bad("not an integer"));
        match k {
            "features" => header.features = num(v)? as usize,
            "hidden" => {
                header.hidden = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|x| num(x).map(|n| n as usize)).collect::<Result<_>>()?
                }
            }
            "activation" => {}
            "agents" => header.agents = num(v)? as usize,
            "seed" => header.seed = num(v)?,
            "iteration" => header.iteration = num(v)?,
            _ => return Err(bad("unknown key")),
        }
    }
    let bytes = std::fs::read(stem.with_extension("bin"))?;
    let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let q_len = Mlp::zeros(header.features + 1, &header.hidden).param_count();
    let w_len = Mlp::zeros(header.features, &header.hidden).param_count();
    if values.len() != header.agents * (q_len + w_len) || bytes.len() % 8 != 0 {
        return Err(Error::Parse { line: 0, msg: "parameter file does not match the header".into() });
    }
    let agents = values
        .chunks(q_len + w_len)
        .map(|c| WiAgent {
            q: Mlp::from_params(header.features + 1, &header.hidden, c[..q_len].to_vec()).expect("sized"),
            w: Mlp::from_params(header.features, &header.hidden, c[q_len..].to_vec()).expect("sized"),
            q_moments: Moments::default(),
            w_moments: Moments::default(),
        })
        .collect();
    Ok((header, agents))
}
