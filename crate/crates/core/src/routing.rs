//! Price-based multipath routing: TU splitting, channel prices, fees, path
//! rates and the queue/window congestion controller.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{ChannelId, DirectedChannel, NodeId, Path, PcnGraph, Tokens};

/// Floor on the pair's total rate inside the log-utility derivative.
pub const RATE_FLOOR: f64 = 1e-6;

pub const DEFAULT_QUEUE_CAP: Tokens = 8000.0;

#[derive(Debug, Error, PartialEq)]
pub enum RoutingError {
    #[error("no paths to split the demand over")]
    NoPaths,
    #[error("invalid TU bounds: min {min}, max {max}")]
    InvalidBounds { min: Tokens, max: Tokens },
    #[error("invalid demand: {0}")]
    InvalidDemand(String),
    #[error("queue is empty")]
    EmptyQueue,
    #[error("path no longer valid at hop {hop}")]
    BrokenPath { hop: usize },
}

pub type Result<T> = std::result::Result<T, RoutingError>;

#[derive(Clone, Debug, PartialEq)]
pub struct Demand {
    pub tid: u64,
    pub source: NodeId,
    pub dest: NodeId,
    pub amount: Tokens,
    pub deadline: f64,
}

impl Demand {
    pub fn validate(&self) -> Result<()> {
        if !(self.amount > 0.0 && self.amount.is_finite()) {
            return Err(RoutingError::InvalidDemand(format!("amount {}", self.amount)));
        }
        if self.source == self.dest {
            return Err(RoutingError::InvalidDemand("source equals destination".into()));
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum TuStatus {
    Pending,
    InFlight,
    Completed,
    Aborted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransactionUnit {
    pub tuid: u64,
    pub parent_tid: u64,
    pub amount: Tokens,
    /// Index into the candidate path list of the demand's pair.
    pub path: usize,
    pub deadline: f64,
    pub marked: bool,
    pub status: TuStatus,
}

/// Splits a demand greedily into max-size units plus one remainder, then
/// spreads the units over paths by smooth weighted round robin on `rates`
/// (uniform when every rate is zero). TU ids are drawn from `next_tuid`.
pub fn split_demand(
    demand: &Demand,
    min_tu: Tokens,
    max_tu: Tokens,
    rates: &[f64],
    next_tuid: &mut u64,
) -> Result<Vec<TransactionUnit>> {
    if rates.is_empty() {
        return Err(RoutingError::NoPaths);
    }
    if !(min_tu > 0.0 && max_tu >= min_tu) {
        return Err(RoutingError::InvalidBounds { min: min_tu, max: max_tu });
    }
    demand.validate()?;
    let amounts = split_amounts(demand.amount, min_tu, max_tu);
    let total_rate: f64 = rates.iter().map(|r| r.max(0.0)).sum();
    let weights: Vec<f64> = if total_rate > 0.0 {
        rates.iter().map(|r| r.max(0.0) / total_rate).collect()
    } else {
        vec![1.0 / rates.len() as f64; rates.len()]
    };
    let mut credit = vec![0.0; rates.len()];
    let mut units = Vec::with_capacity(amounts.len());
    for amount in amounts {
        for (c, w) in credit.iter_mut().zip(&weights) {
            *c += w;
        }
        let mut pick = 0;
        for p in 1..credit.len() {
            if credit[p] > credit[pick] {
                pick = p;
            }
        }
        credit[pick] -= 1.0;
        units.push(TransactionUnit {
            tuid: *next_tuid,
            parent_tid: demand.tid,
            amount,
            path: pick,
            deadline: demand.deadline,
            marked: false,
            status: TuStatus::Pending,
        });
        *next_tuid += 1;
    }
    Ok(units)
}

/// Max-first amounts. When the tail would fall below `min_tu` it is borrowed
/// from the previous unit if that keeps both within bounds; otherwise it stays
/// as the single undersized remainder.
pub fn split_amounts(amount: Tokens, min_tu: Tokens, max_tu: Tokens) -> Vec<Tokens> {
    let full = (amount / max_tu).floor() as usize;
    let rest = amount - full as f64 * max_tu;
    let mut out = vec![max_tu; full];
    if rest > 1e-12 {
        if rest < min_tu && full > 0 && max_tu - (min_tu - rest) >= min_tu {
            let last = out.last_mut().expect("full > 0");
            *last -= min_tu - rest;
            out.push(min_tu);
        } else {
            out.push(rest);
        }
    }
    out
}

/// Per-channel prices. `lambda` is shared by both directions; `mu` is kept
/// per direction (`mu[slot]`) and always updated as an antisymmetric pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceState {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub kappa: f64,
    pub eta: f64,
    pub t_fee: f64,
}

#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct FlowStats {
    /// Funds `a` needs locked to sustain its sending rate over `delta_lockup`.
    pub n_a: Tokens,
    pub n_b: Tokens,
    /// Value that entered the channel at `a` (flowing `a -> b`) during the last period.
    pub m_a: Tokens,
    pub m_b: Tokens,
    pub delta_lockup: f64,
}

impl PriceState {
    pub fn new(channels: usize, kappa: f64, eta: f64, t_fee: f64) -> Self {
        PriceState { lambda: vec![0.0; channels], mu: vec![0.0; 2 * channels], kappa, eta, t_fee }
    }

    pub fn lambda(&self, chan: ChannelId) -> f64 {
        self.lambda[chan.index()]
    }

    pub fn mu(&self, dir: DirectedChannel) -> f64 {
        self.mu[dir.slot()]
    }

    pub fn update_capacity_price(&mut self, chan: ChannelId, stats: &FlowStats, capacity: Tokens) -> f64 {
        let l = &mut self.lambda[chan.index()];
        *l = (*l + self.kappa * (stats.n_a + stats.n_b - capacity)).max(0.0);
        *l
    }

    /// Returns the new `(mu_ab, mu_ba)`.
    pub fn update_imbalance_price(&mut self, chan: ChannelId, stats: &FlowStats) -> (f64, f64) {
        let step = self.eta * (stats.m_a - stats.m_b);
        let ab = DirectedChannel { chan, forward: true }.slot();
        let ba = DirectedChannel { chan, forward: false }.slot();
        self.mu[ab] += step;
        self.mu[ba] -= step;
        (self.mu[ab], self.mu[ba])
    }

    /// `xi = 2 lambda + mu_dir - mu_reverse`.
    pub fn channel_price(&self, dir: DirectedChannel) -> f64 {
        2.0 * self.lambda(dir.chan) + self.mu(dir) - self.mu(dir.reverse())
    }

    pub fn forwarding_fee(&self, dir: DirectedChannel) -> Tokens {
        (self.t_fee * self.channel_price(dir)).max(0.0)
    }

    pub fn path_price(&self, hops: &[DirectedChannel]) -> f64 {
        (1.0 + self.t_fee) * hops.iter().map(|&d| self.channel_price(d)).sum::<f64>()
    }
}

/// Samples a path's price, failing if any hop no longer exists or no longer
/// connects consecutive nodes.
pub fn probe_path(state: &PriceState, graph: &PcnGraph, path: &Path) -> Result<f64> {
    let mut hops = Vec::with_capacity(path.len());
    for (i, &chan) in path.channels.iter().enumerate() {
        if chan.index() >= graph.channel_count() {
            return Err(RoutingError::BrokenPath { hop: i });
        }
        let ch = graph.channel(chan);
        let (from, to) = (path.hops[i], path.hops[i + 1]);
        if !((ch.a == from && ch.b == to) || (ch.b == from && ch.a == to)) {
            return Err(RoutingError::BrokenPath { hop: i });
        }
        hops.push(DirectedChannel { chan, forward: ch.a == from });
    }
    Ok(state.path_price(&hops))
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct PathRate {
    pub rate: f64,
    pub alpha: f64,
}

impl PathRate {
    /// One gradient step on the log utility of the pair's total rate.
    pub fn update(&mut self, path_price: f64, pair_total_rate: f64) -> f64 {
        self.update_floored(path_price, pair_total_rate, RATE_FLOOR)
    }

    /// As `update`, with the marginal utility evaluated at no less than `floor`.
    pub fn update_floored(&mut self, path_price: f64, pair_total_rate: f64, floor: f64) -> f64 {
        let marginal = 1.0 / pair_total_rate.max(floor).max(RATE_FLOOR);
        self.rate = (self.rate + self.alpha * (marginal - path_price)).max(0.0);
        self.rate
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Admission {
    Admitted,
    /// Parked in the channel queue (rate above processing cap or short on funds).
    Queued,
    /// Held at the source until the path window has room.
    Held,
    Rejected,
}

/// Snapshot of everything `admit_tu` looks at.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct AdmissionView {
    pub path_rate: f64,
    pub process_rate: f64,
    pub funds: Tokens,
    pub queue_amount: Tokens,
    pub queue_cap: Tokens,
    pub outstanding: Tokens,
    pub window: Tokens,
}

/// A TU that would overrun the window is held unless nothing is outstanding,
/// so a collapsed window still lets one unit probe the path.
pub fn admit_tu(view: &AdmissionView, amount: Tokens) -> Admission {
    if view.outstanding > 0.0 && view.outstanding + amount > view.window {
        return Admission::Held;
    }
    if view.path_rate > view.process_rate || view.funds < amount {
        if view.queue_amount + amount > view.queue_cap {
            return Admission::Rejected;
        }
        return Admission::Queued;
    }
    Admission::Admitted
}

pub fn should_mark(enqueued_at: f64, now: f64, threshold: f64) -> bool {
    now - enqueued_at > threshold
}

/// Congestion windows for the paths of one source-destination pair.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSet {
    pub windows: Vec<Tokens>,
    pub beta: f64,
    pub gamma: f64,
}

impl WindowSet {
    pub fn new(paths: usize, initial: Tokens, beta: f64, gamma: f64) -> Self {
        WindowSet { windows: vec![initial; paths], beta, gamma }
    }

    pub fn on_marked_abort(&mut self, path: usize) {
        let w = &mut self.windows[path];
        *w = (*w - self.beta).max(0.0);
    }

    /// Additive increase, applied only when the bottleneck queue is below the window.
    pub fn on_unmarked_success(&mut self, path: usize, queue_amount: Tokens) {
        if queue_amount < self.windows[path] {
            let total: f64 = self.windows.iter().sum();
            if total > 0.0 {
                self.windows[path] += self.gamma / total;
            }
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SchedulePolicy {
    Fifo,
    Lifo,
    Spf,
    Edf,
}

impl SchedulePolicy {
    pub const ALL: [SchedulePolicy; 4] =
        [SchedulePolicy::Fifo, SchedulePolicy::Lifo, SchedulePolicy::Spf, SchedulePolicy::Edf];

    pub fn name(self) -> &'static str {
        match self {
            SchedulePolicy::Fifo => "FIFO",
            SchedulePolicy::Lifo => "LIFO",
            SchedulePolicy::Spf => "SPF",
            SchedulePolicy::Edf => "EDF",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct QueuedTu {
    pub tuid: u64,
    pub amount: Tokens,
    pub deadline: f64,
    pub enqueued_at: f64,
}

/// Order-preserving key for nonnegative floats.
fn float_key(v: f64) -> u64 {
    let bits = v.to_bits();
    if v.is_sign_negative() {
        !bits
    } else {
        bits | (1 << 63)
    }
}

/// Channel queue served by a fixed policy. Ties resolve by tuid, except under
/// LIFO where the later insertion goes first.
#[derive(Clone, Debug)]
pub struct TuQueue {
    policy: SchedulePolicy,
    entries: BTreeMap<(u64, u64), QueuedTu>,
    keys: HashMap<u64, (u64, u64)>,
    seq: u64,
    amount: Tokens,
}

impl TuQueue {
    pub fn new(policy: SchedulePolicy) -> Self {
        TuQueue { policy, entries: BTreeMap::new(), keys: HashMap::new(), seq: 0, amount: 0.0 }
    }

    pub fn policy(&self) -> SchedulePolicy {
        self.policy
    }

    pub fn push(&mut self, tu: QueuedTu) {
        let primary = match self.policy {
            SchedulePolicy::Fifo => float_key(tu.enqueued_at),
            SchedulePolicy::Lifo => u64::MAX - float_key(tu.enqueued_at),
            SchedulePolicy::Spf => float_key(tu.amount),
            SchedulePolicy::Edf => float_key(tu.deadline),
        };
        self.seq += 1;
        let tie = if self.policy == SchedulePolicy::Lifo { u64::MAX - self.seq } else { tu.tuid };
        let key = (primary, tie);
        self.amount += tu.amount;
        self.keys.insert(tu.tuid, key);
        self.entries.insert(key, tu);
    }

    pub fn peek(&self) -> Option<&QueuedTu> {
        self.entries.values().next()
    }

    pub fn pop(&mut self) -> Result<QueuedTu> {
        let (_, tu) = self.entries.pop_first().ok_or(RoutingError::EmptyQueue)?;
        self.keys.remove(&tu.tuid);
        self.settle_amount(tu.amount);
        Ok(tu)
    }

    pub fn remove(&mut self, tuid: u64) -> Option<QueuedTu> {
        let key = self.keys.remove(&tuid)?;
        let tu = self.entries.remove(&key)?;
        self.settle_amount(tu.amount);
        Some(tu)
    }

    fn settle_amount(&mut self, amount: Tokens) {
        self.amount = if self.entries.is_empty() { 0.0 } else { (self.amount - amount).max(0.0) };
    }

    pub fn amount(&self) -> Tokens {
        self.amount
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueuedTu> {
        self.entries.values()
    }
}

/// Single-pick helper over a slice, same ordering rules as `TuQueue`.
pub fn schedule_queue(queue: &[QueuedTu], policy: SchedulePolicy) -> Result<usize> {
    if queue.is_empty() {
        return Err(RoutingError::EmptyQueue);
    }
    let mut q = TuQueue::new(policy);
    for tu in queue {
        q.push(*tu);
    }
    let tuid = q.pop()?.tuid;
    let idx = match policy {
        SchedulePolicy::Lifo => queue.iter().rposition(|t| t.tuid == tuid),
        _ => queue.iter().position(|t| t.tuid == tuid),
    };
    Ok(idx.expect("picked TU comes from the slice"))
}
