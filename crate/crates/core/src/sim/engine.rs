use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};

use crate::routing::{
    admit_tu, split_demand, Admission, AdmissionView, Demand, FlowStats, PathRate, PriceState, QueuedTu,
    SchedulePolicy, TuQueue, WindowSet,
};
use crate::topology::{
    assign_capacities, candidate_paths, generate_small_world, ChannelId, DirectedChannel, NodeId, NodeRole, Path,
    PcnGraph, Tokens,
};

use super::config::{ControlMode, NetworkSpec, SimConfig, WorkloadSpec};
use super::metrics::{compute_ntp, compute_tsr, LatencySummary};
use super::SimError;

/// Queue entries inspected when looking for a TU that fits the available funds.
const SERVE_SCAN: usize = 16;
/// Sum of path rates may exceed the pair's mean demand by this factor, so
/// bursts of a random workload do not pile up at the source.
const DEMAND_HEADROOM: f64 = 2.0;
/// Marginal utility is taken at no less than this share of the pair's demand,
/// which bounds the upward step when a rate has been driven to zero.
const UTILITY_FLOOR: f64 = 0.1;
const LOCK_EWMA: f64 = 0.1;
const CONSERVATION_TOL: f64 = 1e-6;
/// Trailing window with arrivals but no completions that flags a deadlock.
const DEADLOCK_WINDOW: f64 = 10.0;
/// Graphs up to this many channels get per-direction balances and prices traced.
const SMALL_GRAPH_CHANNELS: usize = 16;

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    EpochBoundary,
    PriceTick,
    ProbeTick,
    BatchWindow,
    TxArrival,
    MessageDelivery,
    QueueService,
    Timeout,
}

#[derive(Copy, Clone, Debug, PartialEq)]
enum Payload {
    Epoch,
    Price,
    Probe,
    Batch,
    Arrival,
    Hop { tu: usize, hop: usize },
    Settle { tu: usize },
    Unlock { tu: usize },
    Release { pair: usize, slot: usize },
    Service { slot: usize },
    Deadline { tx: usize },
}

impl Payload {
    fn kind(self) -> EventKind {
        match self {
            Payload::Epoch => EventKind::EpochBoundary,
            Payload::Price => EventKind::PriceTick,
            Payload::Probe => EventKind::ProbeTick,
            Payload::Batch => EventKind::BatchWindow,
            Payload::Arrival => EventKind::TxArrival,
            Payload::Hop { .. } | Payload::Settle { .. } | Payload::Unlock { .. } => EventKind::MessageDelivery,
            Payload::Release { .. } | Payload::Service { .. } => EventKind::QueueService,
            Payload::Deadline { .. } => EventKind::Timeout,
        }
    }
}

#[derive(Copy, Clone, Debug)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    seq: u64,
    payload: Payload,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl Ord for Event {
    /// Reversed so `BinaryHeap` pops the earliest event; ties by kind, then insertion.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.kind.cmp(&self.kind)).then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TracePoint {
    pub time: f64,
    pub completed: u64,
    pub completed_value: Tokens,
    /// Value delivered in the period for each traced pair.
    pub pair_value: Vec<Tokens>,
    /// Per-direction spendable balances (`slot` order), for small graphs only.
    pub balances: Vec<Tokens>,
    /// Summed path rates of each traced pair.
    pub pair_rate: Vec<f64>,
    /// Per-direction channel prices (`slot` order), for small graphs only.
    pub prices: Vec<f64>,
    /// Capacity prices per channel, for small graphs only.
    pub lambda: Vec<f64>,
    /// Imbalance prices per direction, for small graphs only.
    pub mu: Vec<f64>,
    /// Queued amount per direction, for small graphs only.
    pub queued: Vec<Tokens>,
    /// Summed congestion windows of each traced pair.
    pub pair_window: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ComplianceReport {
    pub samples: u64,
    pub capacity_violations: u64,
    pub balance_violations: u64,
}

impl ComplianceReport {
    pub fn capacity_rate(&self) -> f64 {
        ratio(self.capacity_violations, self.samples)
    }

    pub fn balance_rate(&self) -> f64 {
        ratio(self.balance_violations, self.samples)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TxRecord {
    pub tid: u64,
    pub source: NodeId,
    pub dest: NodeId,
    pub amount: Tokens,
    pub arrival: f64,
    pub end: f64,
    pub completed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOutcome {
    pub generated: u64,
    pub completed: u64,
    pub generated_value: Tokens,
    pub completed_value: Tokens,
    pub tsr: f64,
    pub ntp: f64,
    /// TSR and NTP over payments arriving after warm-up.
    pub steady_tsr: f64,
    pub steady_ntp: f64,
    pub latency: LatencySummary,
    pub trace: Vec<TracePoint>,
    pub traced_pairs: Vec<(NodeId, NodeId)>,
    pub compliance: ComplianceReport,
    pub min_balance: Vec<Tokens>,
    pub max_conservation_error: Tokens,
    pub deadlock: bool,
    pub fees: Tokens,
    pub records: Vec<TxRecord>,
    pub events: Vec<String>,
    pub final_graph: PcnGraph,
}

#[derive(Copy, Clone, Debug, PartialEq)]
enum TuLoc {
    Source { pair: usize, slot: usize },
    Queue { slot: usize },
    Transit,
    Arrived,
    Done,
}

struct TuState {
    tuid: u64,
    tx: usize,
    pair: usize,
    slot: usize,
    route: usize,
    amount: Tokens,
    locked: usize,
    lock_times: Vec<f64>,
    released: bool,
    marked: bool,
    enqueued_at: f64,
    loc: TuLoc,
}

struct TxState {
    tid: u64,
    pair: usize,
    amount: Tokens,
    arrival: f64,
    deadline: f64,
    tus: Vec<usize>,
    arrived: usize,
    end: Option<(f64, bool)>,
}

struct Route {
    hops: Vec<DirectedChannel>,
    channels: Vec<ChannelId>,
}

struct PathSlot {
    route: usize,
    rate: PathRate,
    outstanding: Tokens,
    hold: VecDeque<usize>,
    allowance: Tokens,
    allow_t: f64,
    release_pending: bool,
    active: bool,
}

struct PairState {
    source: NodeId,
    dest: NodeId,
    demand_rate: f64,
    slots: Vec<PathSlot>,
    windows: WindowSet,
    routed: bool,
    congested: bool,
    trace_idx: Option<usize>,
}

#[derive(Clone)]
struct DirState {
    queue: TuQueue,
    busy_until: f64,
    service_pending: bool,
    arrivals: Tokens,
    forwarded: Tokens,
    process_rate: f64,
    hub_link: Option<usize>,
}

struct Snapshot {
    epoch: i64,
    graph: PcnGraph,
}

struct Arrival {
    time: f64,
    pair: usize,
    amount: Tokens,
}

pub(super) struct Engine<'a> {
    cfg: &'a SimConfig,
    now: f64,
    seq: u64,
    heap: BinaryHeap<Event>,
    graph: PcnGraph,
    snapshot: Snapshot,
    prices: PriceState,
    dirs: Vec<DirState>,
    lock_delay: Vec<f64>,
    hub_busy: Vec<f64>,
    hubs: Vec<usize>,
    n_cc: usize,
    routes: Vec<Route>,
    pairs: Vec<PairState>,
    txs: Vec<TxState>,
    tus: Vec<TuState>,
    arrivals: Vec<Arrival>,
    next_arrival: usize,
    next_tuid: u64,
    history: Vec<VecDeque<(Tokens, Tokens)>>,
    compliance: ComplianceReport,
    trace: Vec<TracePoint>,
    period_completed: u64,
    period_value: Tokens,
    period_pair_value: Vec<Tokens>,
    min_balance: Vec<Tokens>,
    max_conservation_error: Tokens,
    fees: Tokens,
    events: Vec<String>,
    initial_funds: Tokens,
}

fn build_graph(cfg: &SimConfig) -> Result<(PcnGraph, usize), SimError> {
    match &cfg.network {
        NetworkSpec::SmallWorld { nodes, ring_degree, rewire_p, min_cap, mean_cap, median_cap } => {
            let g = generate_small_world(*nodes, *ring_degree, *rewire_p, cfg.seed)?;
            Ok((assign_capacities(g, *min_cap, *mean_cap, *median_cap, cfg.seed.wrapping_add(1))?, 1))
        }
        NetworkSpec::Explicit { nodes, channels } => {
            let mut g = PcnGraph::new();
            for _ in 0..*nodes {
                g.add_node(NodeRole::Client);
            }
            for c in channels {
                g.add_channel(NodeId(c.a), NodeId(c.b), c.balance_ab, c.balance_ba)?;
            }
            Ok((g, 1))
        }
        NetworkSpec::MultiStar { hubs, clients_per_hub, spoke_balance, hub_balance, n_cc } => {
            let mut g = PcnGraph::new().with_parallel_limit(*n_cc);
            for _ in 0..*hubs {
                g.add_node(NodeRole::ActiveHub);
            }
            for h in 0..*hubs {
                for _ in 0..*clients_per_hub {
                    let c = g.add_node(NodeRole::Client);
                    g.add_channel(c, NodeId(h as u32), *spoke_balance, *spoke_balance)?;
                }
            }
            let per = hub_balance / *n_cc as f64;
            for a in 0..*hubs {
                for b in a + 1..*hubs {
                    for _ in 0..*n_cc {
                        g.add_channel(NodeId(a as u32), NodeId(b as u32), per, per)?;
                    }
                }
            }
            Ok((g, *n_cc))
        }
    }
}

fn draw_pairs(
    cfg: &SimConfig,
    graph: &PcnGraph,
    count: usize,
    reciprocal: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<(NodeId, NodeId)> {
    let clients: Vec<NodeId> = graph.nodes().filter(|&n| graph.role(n) == NodeRole::Client).collect();
    let hub_of = |n: NodeId| graph.neighbors(n).first().map(|&(h, _)| h);
    let star = matches!(cfg.network, NetworkSpec::MultiStar { .. });
    let mut pairs = Vec::with_capacity(count);
    if clients.len() < 2 {
        return pairs;
    }
    let mut guard = 0;
    while pairs.len() < count && guard < count * 100 {
        guard += 1;
        let s = clients[rng.random_range(0..clients.len())];
        let e = clients[rng.random_range(0..clients.len())];
        if s == e || (star && hub_of(s) == hub_of(e)) {
            continue;
        }
        pairs.push((s, e));
        if reciprocal && pairs.len() < count {
            pairs.push((e, s));
        }
    }
    pairs
}

/// Expands each path into one variant per parallel lane so a pair can use
/// every hub-to-hub channel, keeping at most `k` paths.
fn spread_lanes(graph: &PcnGraph, paths: Vec<Path>, n_cc: usize, k: usize) -> Vec<Path> {
    let mut out = Vec::new();
    for path in paths {
        for lane in 0..n_cc {
            let channels: Vec<ChannelId> = path
                .hops
                .windows(2)
                .zip(&path.channels)
                .map(|(w, &c)| {
                    let lanes = graph.channels_between(w[0], w[1]);
                    if lanes.len() == n_cc {
                        lanes[lane]
                    } else {
                        c
                    }
                })
                .collect();
            if out.iter().any(|p: &Path| p.channels == channels) {
                continue;
            }
            let width =
                channels.iter().zip(&path.hops).map(|(&c, &u)| graph.balance_from(c, u)).fold(f64::INFINITY, f64::min);
            out.push(Path { hops: path.hops.clone(), channels, width });
        }
    }
    out.truncate(k.max(1));
    out
}

impl<'a> Engine<'a> {
    pub(super) fn new(cfg: &'a SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let (graph, n_cc) = build_graph(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
        let (pair_list, arrivals) = Self::workload(cfg, &graph, &mut rng)?;

        let mut trace_lookup = vec![None; pair_list.len()];
        for (ti, &(s, e)) in cfg.trace_pairs.iter().enumerate() {
            for (pi, p) in pair_list.iter().enumerate() {
                if p.0 == NodeId(s) && p.1 == NodeId(e) && trace_lookup[pi].is_none() {
                    trace_lookup[pi] = Some(ti);
                }
            }
        }
        let r = &cfg.routing;
        let pairs = pair_list
            .iter()
            .zip(trace_lookup)
            .map(|(&(source, dest, demand_rate), trace_idx)| PairState {
                source,
                dest,
                demand_rate,
                slots: Vec::new(),
                windows: WindowSet::new(0, r.initial_window, r.beta, r.gamma),
                routed: false,
                congested: false,
                trace_idx,
            })
            .collect();

        let hubs: Vec<usize> = graph.nodes().filter(|&n| graph.role(n).is_hub()).map(|n| n.index()).collect();
        let star = matches!(cfg.network, NetworkSpec::MultiStar { .. });
        let mut dirs = Vec::with_capacity(2 * graph.channel_count());
        for ch in graph.channels() {
            let hub_pair = graph.role(ch.a).is_hub() && graph.role(ch.b).is_hub();
            for (forward, from) in [(true, ch.a), (false, ch.b)] {
                let _ = forward;
                let process_rate = if star && !hub_pair { f64::INFINITY } else { r.process_rate };
                dirs.push(DirState {
                    queue: TuQueue::new(r.policy),
                    busy_until: 0.0,
                    service_pending: false,
                    arrivals: 0.0,
                    forwarded: 0.0,
                    process_rate,
                    hub_link: (hub_pair && cfg.contention.hub_rate > 0.0).then_some(from.index()),
                });
            }
        }
        let channels = graph.channel_count();
        let min_balance = graph.channels().iter().flat_map(|c| [c.balance_ab, c.balance_ba]).collect();
        let initial_funds = graph.total_funds();
        Ok(Engine {
            cfg,
            now: 0.0,
            seq: 0,
            heap: BinaryHeap::new(),
            snapshot: Snapshot { epoch: -1, graph: graph.clone() },
            prices: PriceState::new(channels, r.kappa, r.eta, r.t_fee),
            dirs,
            lock_delay: vec![r.delta_lockup; channels],
            hub_busy: vec![0.0; graph.node_count()],
            hubs,
            n_cc,
            graph,
            routes: Vec::new(),
            period_pair_value: vec![0.0; cfg.trace_pairs.len()],
            pairs,
            txs: Vec::new(),
            tus: Vec::new(),
            arrivals,
            next_arrival: 0,
            next_tuid: 0,
            history: vec![VecDeque::new(); channels],
            compliance: ComplianceReport::default(),
            trace: Vec::new(),
            period_completed: 0,
            period_value: 0.0,
            min_balance,
            max_conservation_error: 0.0,
            fees: 0.0,
            events: Vec::new(),
            initial_funds,
        })
    }

    #[allow(clippy::type_complexity)]
    fn workload(
        cfg: &SimConfig,
        graph: &PcnGraph,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<(NodeId, NodeId, f64)>, Vec<Arrival>), SimError> {
        let mut pairs = Vec::new();
        let mut arrivals = Vec::new();
        match &cfg.workload {
            WorkloadSpec::None => {}
            WorkloadSpec::Streams { streams } => {
                for (i, s) in streams.iter().enumerate() {
                    for n in [s.source, s.dest] {
                        if n as usize >= graph.node_count() {
                            return Err(SimError::Config(format!("stream endpoint {n} not in graph")));
                        }
                    }
                    pairs.push((NodeId(s.source), NodeId(s.dest), s.rate));
                    let gap = s.unit / s.rate;
                    let mut t = gap * (i as f64 + 1.0) / (streams.len() as f64 + 1.0);
                    while t < cfg.duration {
                        arrivals.push(Arrival { time: t, pair: i, amount: s.unit });
                        t += gap;
                    }
                }
            }
            WorkloadSpec::Poisson {
                pairs: count,
                reciprocal,
                tx_rate,
                amount_median,
                amount_mean,
                whale_fraction,
                whale_amount,
            } => {
                let sigma = (2.0 * (amount_mean / amount_median).ln()).sqrt();
                let amounts = LogNormal::new(amount_median.ln(), sigma)
                    .map_err(|e| SimError::Config(format!("amount distribution: {e}")))?;
                let gaps = Exp::new(*tx_rate).map_err(|e| SimError::Config(format!("arrival rate: {e}")))?;
                let mean_value = (1.0 - whale_fraction) * amount_mean + whale_fraction * whale_amount;
                for (i, (s, e)) in draw_pairs(cfg, graph, *count, *reciprocal, rng).into_iter().enumerate() {
                    pairs.push((s, e, tx_rate * mean_value));
                    let mut t = gaps.sample(rng);
                    while t < cfg.duration {
                        let amount = if rng.random::<f64>() < *whale_fraction {
                            *whale_amount
                        } else {
                            (amounts.sample(rng) * 100.0).round().max(1.0) / 100.0
                        };
                        arrivals.push(Arrival { time: t, pair: i, amount });
                        t += gaps.sample(rng);
                    }
                }
            }
        }
        arrivals.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.pair.cmp(&b.pair)));
        Ok((pairs, arrivals))
    }

    fn schedule(&mut self, time: f64, payload: Payload) {
        self.seq += 1;
        self.heap.push(Event { time, kind: payload.kind(), seq: self.seq, payload });
    }

    fn log(&mut self, msg: impl FnOnce() -> String) {
        if self.cfg.record_events {
            let line = format!("{:.6} {}", self.now, msg());
            self.events.push(line);
        }
    }

    fn share(&self) -> bool {
        self.cfg.control == ControlMode::Share
    }

    pub(super) fn run(mut self) -> Result<SimOutcome, SimError> {
        let r = &self.cfg.routing;
        self.schedule(0.0, Payload::Epoch);
        self.schedule(r.tau, Payload::Price);
        if self.cfg.contention.coherence > 0.0 && !self.hubs.is_empty() {
            self.schedule(self.cfg.contention.batch_window, Payload::Batch);
        }
        if let Some(a) = self.arrivals.first() {
            let t = a.time;
            self.schedule(t, Payload::Arrival);
        }
        while let Some(ev) = self.heap.pop() {
            debug_assert!(ev.time >= self.now);
            self.now = ev.time;
            match ev.payload {
                Payload::Epoch => self.on_epoch(),
                Payload::Price => self.on_price()?,
                Payload::Probe => self.on_probe(),
                Payload::Batch => self.on_batch(),
                Payload::Arrival => self.on_arrival()?,
                Payload::Hop { tu, hop } => self.on_hop(tu, hop)?,
                Payload::Settle { tu } => self.on_settle(tu)?,
                Payload::Unlock { tu } => self.on_unlock(tu)?,
                Payload::Release { pair, slot } => {
                    self.pairs[pair].slots[slot].release_pending = false;
                    self.try_release(pair, slot)?;
                }
                Payload::Service { slot } => {
                    self.dirs[slot].service_pending = false;
                    self.try_serve(slot)?;
                }
                Payload::Deadline { tx } => {
                    if self.txs[tx].end.is_none() {
                        self.abort(tx, "timeout")?;
                    }
                }
            }
        }
        self.check_conservation()?;
        if let Some(tx) = self.txs.iter().find(|t| t.end.is_none()) {
            return Err(SimError::Invariant(format!("payment {} never terminated", tx.tid)));
        }
        Ok(self.finish())
    }

    fn epoch_index(&self) -> i64 {
        (self.now / self.cfg.epoch + 1e-9).floor() as i64
    }

    fn on_epoch(&mut self) {
        self.snapshot = Snapshot { epoch: self.epoch_index() - 1, graph: self.graph.clone() };
        for p in 0..self.pairs.len() {
            if self.pairs[p].congested && self.share() {
                self.select_paths(p);
                self.pairs[p].congested = false;
            }
        }
        let next = self.now + self.cfg.epoch;
        if next < self.cfg.duration {
            self.schedule(next, Payload::Epoch);
        }
    }

    /// Path choice reads only the snapshot finalized at the previous epoch.
    fn select_paths(&mut self, p: usize) {
        assert_eq!(self.snapshot.epoch, self.epoch_index() - 1, "routing read state outside the finalized epoch");
        let r = &self.cfg.routing;
        let (s, e) = (self.pairs[p].source, self.pairs[p].dest);
        let mut paths = candidate_paths(&self.snapshot.graph, s, e, r.k, r.path_kind);
        if self.n_cc > 1 {
            paths = spread_lanes(&self.snapshot.graph, paths, self.n_cc, r.k);
        }
        let pair = &mut self.pairs[p];
        let active: Vec<f64> = pair.slots.iter().filter(|s| s.active).map(|s| s.rate.rate).collect();
        let seed_rate = if r.initial_rate > 0.0 {
            r.initial_rate
        } else if !active.is_empty() {
            active.iter().sum::<f64>() / active.len() as f64
        } else {
            pair.demand_rate / paths.len().max(1) as f64
        };
        for slot in &mut pair.slots {
            slot.active = false;
        }
        for path in paths {
            let existing = pair.slots.iter().position(|sl| self.routes[sl.route].channels == path.channels);
            match existing {
                Some(i) => pair.slots[i].active = true,
                None => {
                    let hops = path.directed(&self.snapshot.graph);
                    self.routes.push(Route { hops, channels: path.channels });
                    pair.slots.push(PathSlot {
                        route: self.routes.len() - 1,
                        rate: PathRate { rate: seed_rate, alpha: r.alpha },
                        outstanding: 0.0,
                        hold: VecDeque::new(),
                        allowance: r.max_tu,
                        allow_t: self.now,
                        release_pending: false,
                        active: true,
                    });
                    pair.windows.windows.push(r.initial_window);
                }
            }
        }
        pair.routed = true;
    }

    fn on_arrival(&mut self) -> Result<(), SimError> {
        let idx = self.next_arrival;
        self.next_arrival += 1;
        if let Some(next) = self.arrivals.get(self.next_arrival) {
            let t = next.time;
            self.schedule(t, Payload::Arrival);
        }
        let (pair, amount) = (self.arrivals[idx].pair, self.arrivals[idx].amount);
        if !self.pairs[pair].routed {
            self.select_paths(pair);
        }
        let tx = self.txs.len();
        let tid = tx as u64;
        let deadline = self.now + self.cfg.routing.timeout;
        self.txs.push(TxState {
            tid,
            pair,
            amount,
            arrival: self.now,
            deadline,
            tus: Vec::new(),
            arrived: 0,
            end: None,
        });
        let (s, e) = (self.pairs[pair].source, self.pairs[pair].dest);
        self.log(|| format!("arrive tid={tid} {s}->{e} amount={amount}"));
        self.schedule(deadline, Payload::Deadline { tx });

        let active: Vec<usize> =
            (0..self.pairs[pair].slots.len()).filter(|&i| self.pairs[pair].slots[i].active).collect();
        if active.is_empty() {
            return self.abort(tx, "no route");
        }
        let rates: Vec<f64> = active.iter().map(|&i| self.pairs[pair].slots[i].rate.rate).collect();
        let demand = Demand { tid, source: s, dest: e, amount, deadline };
        let r = &self.cfg.routing;
        let units = split_demand(&demand, r.min_tu, r.max_tu, &rates, &mut self.next_tuid)
            .map_err(|err| SimError::Invariant(err.to_string()))?;
        for unit in units {
            let slot = active[unit.path];
            let route = self.pairs[pair].slots[slot].route;
            let id = self.tus.len();
            self.tus.push(TuState {
                tuid: unit.tuid,
                tx,
                pair,
                slot,
                route,
                amount: unit.amount,
                locked: 0,
                lock_times: Vec::new(),
                released: false,
                marked: false,
                enqueued_at: 0.0,
                loc: TuLoc::Source { pair, slot },
            });
            self.txs[tx].tus.push(id);
            if self.share() {
                self.pairs[pair].slots[slot].hold.push_back(id);
            } else {
                self.send(id)?;
            }
        }
        if self.share() {
            for slot in active {
                self.try_release(pair, slot)?;
                if self.txs[tx].end.is_some() {
                    break;
                }
            }
        }
        Ok(())
    }

    fn refill(&mut self, pair: usize, slot: usize) {
        let max_tu = self.cfg.routing.max_tu;
        let burst_time = 5.0 * self.cfg.routing.tau;
        let sl = &mut self.pairs[pair].slots[slot];
        let cap = max_tu.max(sl.rate.rate * burst_time);
        sl.allowance = (sl.allowance + sl.rate.rate * (self.now - sl.allow_t)).min(cap);
        sl.allow_t = self.now;
    }

    /// Position of the held TU the scheduling policy sends next; a payment's
    /// units stay in tuid order.
    fn next_held(&self, pair: usize, slot: usize) -> Option<usize> {
        let hold = &self.pairs[pair].slots[slot].hold;
        let last = hold.len().checked_sub(1)?;
        let min_by = |key: &dyn Fn(usize) -> f64| {
            (0..hold.len()).min_by(|&a, &b| key(hold[a]).total_cmp(&key(hold[b])).then(a.cmp(&b)))
        };
        match self.cfg.routing.policy {
            SchedulePolicy::Fifo => Some(0),
            SchedulePolicy::Lifo => {
                let tx = self.tus[hold[last]].tx;
                Some((0..=last).rev().take_while(|&i| self.tus[hold[i]].tx == tx).last().unwrap_or(last))
            }
            SchedulePolicy::Spf => min_by(&|t| self.tus[t].amount),
            SchedulePolicy::Edf => min_by(&|t| self.txs[self.tus[t].tx].deadline),
        }
    }

    /// Releases held TUs subject to the window and the paced rate.
    fn try_release(&mut self, pair: usize, slot: usize) -> Result<(), SimError> {
        loop {
            let Some(pos) = self.next_held(pair, slot) else { return Ok(()) };
            let tu = self.pairs[pair].slots[slot].hold[pos];
            let amount = self.tus[tu].amount;
            let sl = &self.pairs[pair].slots[slot];
            let view = AdmissionView {
                path_rate: 0.0,
                process_rate: f64::INFINITY,
                funds: f64::INFINITY,
                queue_amount: 0.0,
                queue_cap: f64::INFINITY,
                outstanding: sl.outstanding,
                window: self.pairs[pair].windows.windows[slot],
            };
            if admit_tu(&view, amount) == Admission::Held {
                return Ok(());
            }
            self.refill(pair, slot);
            let sl = &mut self.pairs[pair].slots[slot];
            if sl.allowance + 1e-12 < amount {
                if sl.rate.rate > 0.0 && !sl.release_pending {
                    sl.release_pending = true;
                    let wait = (amount - sl.allowance) / sl.rate.rate;
                    self.schedule(self.now + wait, Payload::Release { pair, slot });
                }
                return Ok(());
            }
            sl.allowance -= amount;
            sl.outstanding += amount;
            sl.hold.remove(pos);
            self.tus[tu].released = true;
            self.send(tu)?;
        }
    }

    fn send(&mut self, tu: usize) -> Result<(), SimError> {
        self.tus[tu].released = true;
        self.tus[tu].loc = TuLoc::Transit;
        self.on_hop(tu, 0)
    }

    fn hop_free_at(&self, slot: usize) -> f64 {
        let d = &self.dirs[slot];
        match d.hub_link {
            Some(h) => d.busy_until.max(self.hub_busy[h]),
            None => d.busy_until,
        }
    }

    fn on_hop(&mut self, tu: usize, hop: usize) -> Result<(), SimError> {
        if self.tus[tu].loc == TuLoc::Done {
            return Ok(());
        }
        let route = self.tus[tu].route;
        if hop == self.routes[route].hops.len() {
            return self.on_delivered(tu);
        }
        let dir = self.routes[route].hops[hop];
        let slot = dir.slot();
        let amount = self.tus[tu].amount;
        self.dirs[slot].arrivals += amount;

        let busy = !self.dirs[slot].queue.is_empty() || self.hop_free_at(slot) > self.now;
        let ch = self.graph.channel(dir.chan);
        let funds = if ch.htlcs(dir.forward) >= ch.max_htlc { 0.0 } else { ch.balance(dir.forward) };
        let (pair, pslot) = (self.tus[tu].pair, self.tus[tu].slot);
        let path_rate = if self.share() { self.pairs[pair].slots[pslot].rate.rate } else { 0.0 };
        let r = &self.cfg.routing;
        let view = AdmissionView {
            path_rate,
            process_rate: self.dirs[slot].process_rate,
            funds: if busy { 0.0 } else { funds },
            queue_amount: self.dirs[slot].queue.amount(),
            queue_cap: r.queue_cap,
            outstanding: 0.0,
            window: f64::INFINITY,
        };
        match admit_tu(&view, amount) {
            Admission::Admitted => self.forward(tu, hop),
            Admission::Queued | Admission::Held => {
                self.tus[tu].loc = TuLoc::Queue { slot };
                self.tus[tu].enqueued_at = self.now;
                let deadline = self.txs[self.tus[tu].tx].deadline;
                let tuid = self.tus[tu].tuid;
                self.dirs[slot].queue.push(QueuedTu { tuid, amount, deadline, enqueued_at: self.now });
                self.try_serve(slot)
            }
            Admission::Rejected => {
                let tx = self.tus[tu].tx;
                self.abort(tx, "queue full")
            }
        }
    }

    fn forward(&mut self, tu: usize, hop: usize) -> Result<(), SimError> {
        let dir = self.routes[self.tus[tu].route].hops[hop];
        let slot = dir.slot();
        let amount = self.tus[tu].amount;
        self.graph.lock(dir, amount)?;
        let bal = self.graph.channel(dir.chan).balance(dir.forward);
        self.min_balance[slot] = self.min_balance[slot].min(bal);
        self.tus[tu].locked += 1;
        self.tus[tu].lock_times.push(self.now);
        self.tus[tu].loc = TuLoc::Transit;
        if self.share() {
            self.fees += amount * self.prices.forwarding_fee(dir);
        }
        let d = &mut self.dirs[slot];
        d.forwarded += amount;
        d.busy_until = self.now + amount / d.process_rate;
        if let Some(h) = d.hub_link {
            self.hub_busy[h] = self.hub_busy[h].max(self.now) + amount / self.cfg.contention.hub_rate;
        }
        let at = self.now + self.cfg.routing.hop_delay;
        self.schedule(at, Payload::Hop { tu, hop: hop + 1 });
        Ok(())
    }

    /// Serves queued TUs in policy order while the direction is free,
    /// skipping units the current funds cannot cover.
    fn try_serve(&mut self, slot: usize) -> Result<(), SimError> {
        loop {
            if self.dirs[slot].queue.is_empty() {
                return Ok(());
            }
            let free_at = self.hop_free_at(slot);
            if free_at > self.now {
                if !self.dirs[slot].service_pending {
                    self.dirs[slot].service_pending = true;
                    self.schedule(free_at, Payload::Service { slot });
                }
                return Ok(());
            }
            let chan = ChannelId((slot / 2) as u32);
            let forward = slot % 2 == 0;
            let ch = self.graph.channel(chan);
            if ch.htlcs(forward) >= ch.max_htlc {
                return Ok(());
            }
            let funds = ch.balance(forward);
            let pick = self.dirs[slot].queue.iter().take(SERVE_SCAN).find(|q| q.amount <= funds + 1e-9).map(|q| q.tuid);
            let Some(tuid) = pick else { return Ok(()) };
            self.dirs[slot].queue.remove(tuid).expect("picked entry is queued");
            let tu = self.tu_by_tuid(tuid);
            if self.now - self.tus[tu].enqueued_at > self.cfg.routing.mark_threshold {
                self.tus[tu].marked = true;
            }
            let hop = self.tus[tu].locked;
            self.forward(tu, hop)?;
        }
    }

    fn tu_by_tuid(&self, tuid: u64) -> usize {
        // TU ids are issued densely in creation order.
        let idx = tuid as usize;
        debug_assert_eq!(self.tus[idx].tuid, tuid);
        idx
    }

    fn on_delivered(&mut self, tu: usize) -> Result<(), SimError> {
        self.tus[tu].loc = TuLoc::Arrived;
        let tx = self.tus[tu].tx;
        self.txs[tx].arrived += 1;
        let t = &self.txs[tx];
        if t.end.is_none() && t.arrived == t.tus.len() && self.now <= t.deadline {
            self.complete(tx)?;
        }
        Ok(())
    }

    fn complete(&mut self, tx: usize) -> Result<(), SimError> {
        self.txs[tx].end = Some((self.now, true));
        let (tid, amount, pair) = (self.txs[tx].tid, self.txs[tx].amount, self.txs[tx].pair);
        self.log(|| format!("complete tid={tid} amount={amount}"));
        self.period_completed += 1;
        self.period_value += amount;
        if let Some(ti) = self.pairs[pair].trace_idx {
            self.period_pair_value[ti] += amount;
        }
        for i in 0..self.txs[tx].tus.len() {
            let tu = self.txs[tx].tus[i];
            let back = self.cfg.routing.hop_delay * self.routes[self.tus[tu].route].hops.len() as f64;
            self.schedule(self.now + back, Payload::Settle { tu });
        }
        Ok(())
    }

    fn on_settle(&mut self, tu: usize) -> Result<(), SimError> {
        let route = self.tus[tu].route;
        let amount = self.tus[tu].amount;
        for h in 0..self.tus[tu].locked {
            let dir = self.routes[route].hops[h];
            self.graph.settle(dir, amount)?;
            let held = self.now - self.tus[tu].lock_times[h];
            let d = &mut self.lock_delay[dir.chan.index()];
            *d += LOCK_EWMA * (held - *d);
        }
        self.tus[tu].loc = TuLoc::Done;
        let (pair, slot) = (self.tus[tu].pair, self.tus[tu].slot);
        if self.tus[tu].released {
            let sl = &mut self.pairs[pair].slots[slot];
            sl.outstanding = (sl.outstanding - amount).max(0.0);
        }
        if self.share() && !self.tus[tu].marked {
            let bottleneck =
                self.routes[route].hops.iter().map(|d| self.dirs[d.slot()].queue.amount()).fold(0.0, f64::max);
            self.pairs[pair].windows.on_unmarked_success(slot, bottleneck);
        }
        for h in 0..self.routes[route].hops.len() {
            let rev = self.routes[route].hops[h].reverse().slot();
            self.try_serve(rev)?;
        }
        if self.share() {
            self.try_release(pair, slot)?;
        }
        Ok(())
    }

    fn abort(&mut self, tx: usize, reason: &str) -> Result<(), SimError> {
        self.txs[tx].end = Some((self.now, false));
        let tid = self.txs[tx].tid;
        self.log(|| format!("abort tid={tid} reason={reason}"));
        let mut touched_pairs = Vec::new();
        for i in 0..self.txs[tx].tus.len() {
            let tu = self.txs[tx].tus[i];
            match self.tus[tu].loc {
                TuLoc::Source { pair, slot } => {
                    let hold = &mut self.pairs[pair].slots[slot].hold;
                    if let Some(pos) = hold.iter().position(|&x| x == tu) {
                        hold.remove(pos);
                    }
                }
                TuLoc::Queue { slot } => {
                    let tuid = self.tus[tu].tuid;
                    if self.dirs[slot].queue.remove(tuid).is_some()
                        && self.now - self.tus[tu].enqueued_at > self.cfg.routing.mark_threshold
                    {
                        self.tus[tu].marked = true;
                    }
                }
                TuLoc::Transit | TuLoc::Arrived => {}
                TuLoc::Done => continue,
            }
            self.tus[tu].loc = TuLoc::Done;
            if self.tus[tu].locked > 0 {
                // The failure travels back from the furthest lock before funds free up.
                let back = self.cfg.routing.hop_delay * self.tus[tu].locked as f64;
                self.schedule(self.now + back, Payload::Unlock { tu });
            } else {
                touched_pairs.extend(self.finish_failed(tu));
            }
        }
        if self.share() {
            touched_pairs.sort_unstable();
            touched_pairs.dedup();
            for (pair, slot) in touched_pairs {
                self.try_release(pair, slot)?;
            }
        }
        Ok(())
    }

    /// Source-side bookkeeping once a failed TU holds no locks.
    fn finish_failed(&mut self, tu: usize) -> Option<(usize, usize)> {
        if !self.tus[tu].released {
            return None;
        }
        let (pair, slot, amount) = (self.tus[tu].pair, self.tus[tu].slot, self.tus[tu].amount);
        let sl = &mut self.pairs[pair].slots[slot];
        sl.outstanding = (sl.outstanding - amount).max(0.0);
        if self.share() && self.tus[tu].marked {
            self.pairs[pair].windows.on_marked_abort(slot);
            self.pairs[pair].congested = true;
        }
        Some((pair, slot))
    }

    fn on_unlock(&mut self, tu: usize) -> Result<(), SimError> {
        let (route, amount) = (self.tus[tu].route, self.tus[tu].amount);
        let mut slots = Vec::with_capacity(self.tus[tu].locked);
        for h in 0..self.tus[tu].locked {
            let dir = self.routes[route].hops[h];
            self.graph.cancel(dir, amount)?;
            slots.push(dir.slot());
        }
        self.tus[tu].locked = 0;
        for slot in slots {
            self.try_serve(slot)?;
        }
        if let Some((pair, slot)) = self.finish_failed(tu) {
            if self.share() {
                self.try_release(pair, slot)?;
            }
        }
        Ok(())
    }

    fn on_batch(&mut self) {
        let stall = self.cfg.contention.coherence * self.n_cc as f64;
        for i in 0..self.hubs.len() {
            let h = self.hubs[i];
            self.hub_busy[h] = self.hub_busy[h].max(self.now) + stall;
        }
        let next = self.now + self.cfg.contention.batch_window;
        if next < self.cfg.duration {
            self.schedule(next, Payload::Batch);
        }
    }

    fn check_conservation(&mut self) -> Result<(), SimError> {
        let err = self.graph.conservation_error();
        let drift = (self.graph.total_funds() - self.initial_funds).abs();
        self.max_conservation_error = self.max_conservation_error.max(err).max(drift);
        if err > CONSERVATION_TOL || drift > CONSERVATION_TOL * self.initial_funds.max(1.0) {
            return Err(SimError::Invariant(format!(
                "conservation violated at t={}: channel error {err}, total drift {drift}",
                self.now
            )));
        }
        Ok(())
    }

    fn on_price(&mut self) -> Result<(), SimError> {
        self.check_conservation()?;
        let r = &self.cfg.routing;
        let tau = r.tau;
        let steady = self.now > self.cfg.warmup() + 1e-9;
        for c in 0..self.graph.channel_count() {
            let chan = ChannelId(c as u32);
            let (ab, ba) = (2 * c, 2 * c + 1);
            let delta = self.lock_delay[c];
            let (m_a, m_b) = (self.dirs[ab].arrivals, self.dirs[ba].arrivals);
            if self.share() {
                let stats = FlowStats { n_a: m_a / tau * delta, n_b: m_b / tau * delta, m_a, m_b, delta_lockup: delta };
                let capacity = self.graph.channel(chan).capacity;
                self.prices.update_capacity_price(chan, &stats, capacity);
                self.prices.update_imbalance_price(chan, &stats);
            }
            let hist = &mut self.history[c];
            hist.push_back((self.dirs[ab].forwarded, self.dirs[ba].forwarded));
            if hist.len() > r.balance_window {
                hist.pop_front();
            }
            if steady && hist.len() == r.balance_window {
                let span = r.balance_window as f64 * tau;
                let (fa, fb) = hist.iter().fold((0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
                if fa + fb > 0.0 {
                    let (ra, rb) = (fa / span, fb / span);
                    self.compliance.samples += 1;
                    if (ra + rb) * delta > 1.05 * self.graph.channel(chan).capacity {
                        self.compliance.capacity_violations += 1;
                    }
                    if (ra - rb).abs() > r.eps_bal {
                        self.compliance.balance_violations += 1;
                    }
                }
            }
            for s in [ab, ba] {
                self.dirs[s].arrivals = 0.0;
                self.dirs[s].forwarded = 0.0;
            }
        }
        let small = self.graph.channel_count() <= SMALL_GRAPH_CHANNELS;
        let (balances, prices, lambda, mu, queued) = if small {
            let dirs: Vec<DirectedChannel> = self
                .graph
                .channel_ids()
                .flat_map(|chan| [true, false].map(|forward| DirectedChannel { chan, forward }))
                .collect();
            (
                self.graph.channels().iter().flat_map(|c| [c.balance_ab, c.balance_ba]).collect(),
                dirs.iter().map(|&d| self.prices.channel_price(d)).collect(),
                self.prices.lambda.clone(),
                self.prices.mu.clone(),
                dirs.iter().map(|d| self.dirs[d.slot()].queue.amount()).collect(),
            )
        } else {
            Default::default()
        };
        let mut pair_rate = vec![0.0; self.cfg.trace_pairs.len()];
        let mut pair_window = vec![0.0; self.cfg.trace_pairs.len()];
        for p in &self.pairs {
            if let Some(ti) = p.trace_idx {
                pair_rate[ti] = p.slots.iter().filter(|s| s.active).map(|s| s.rate.rate).sum();
                pair_window[ti] =
                    p.slots.iter().zip(&p.windows.windows).filter(|(s, _)| s.active).map(|(_, w)| *w).sum();
            }
        }
        self.trace.push(TracePoint {
            time: self.now,
            completed: self.period_completed,
            completed_value: self.period_value,
            pair_value: std::mem::replace(&mut self.period_pair_value, vec![0.0; self.cfg.trace_pairs.len()]),
            balances,
            pair_rate,
            prices,
            lambda,
            mu,
            queued,
            pair_window,
        });
        self.period_completed = 0;
        self.period_value = 0.0;
        if self.share() {
            self.schedule(self.now, Payload::Probe);
        }
        let next = self.now + tau;
        if next <= self.cfg.duration + 1e-9 {
            self.schedule(next, Payload::Price);
        }
        Ok(())
    }

    /// Probes every active path at the fresh prices and steps the rates.
    fn on_probe(&mut self) {
        for p in 0..self.pairs.len() {
            let pair = &self.pairs[p];
            if !pair.routed {
                continue;
            }
            let total: f64 = pair.slots.iter().filter(|s| s.active).map(|s| s.rate.rate).sum();
            let prices: Vec<f64> = pair
                .slots
                .iter()
                .map(|s| if s.active { self.prices.path_price(&self.routes[s.route].hops) } else { 0.0 })
                .collect();
            for s in 0..self.pairs[p].slots.len() {
                self.refill(p, s);
            }
            let pair = &mut self.pairs[p];
            for (slot, price) in pair.slots.iter_mut().zip(prices) {
                if slot.active {
                    slot.rate.update_floored(price, total, UTILITY_FLOOR * pair.demand_rate);
                }
            }
            let sum: f64 = pair.slots.iter().filter(|s| s.active).map(|s| s.rate.rate).sum();
            let cap = DEMAND_HEADROOM * pair.demand_rate;
            if sum > cap && sum > 0.0 {
                for slot in pair.slots.iter_mut().filter(|s| s.active) {
                    slot.rate.rate *= cap / sum;
                }
            }
        }
        for p in 0..self.pairs.len() {
            for s in 0..self.pairs[p].slots.len() {
                if !self.pairs[p].slots[s].hold.is_empty() {
                    // Rates only changed; release errors surface on the next event.
                    let _ = self.try_release(p, s);
                }
            }
        }
    }

    fn finish(self) -> SimOutcome {
        let warm = self.cfg.warmup();
        let mut records = Vec::with_capacity(self.txs.len());
        let mut lat = Vec::new();
        let (mut generated_value, mut completed_value, mut completed) = (0.0, 0.0, 0u64);
        let (mut sg, mut sc, mut sgv, mut scv) = (0u64, 0u64, 0.0, 0.0);
        for t in &self.txs {
            let (end, ok) = t.end.expect("all payments terminated");
            let pair = &self.pairs[t.pair];
            records.push(TxRecord {
                tid: t.tid,
                source: pair.source,
                dest: pair.dest,
                amount: t.amount,
                arrival: t.arrival,
                end,
                completed: ok,
            });
            generated_value += t.amount;
            if ok {
                completed += 1;
                completed_value += t.amount;
                lat.push(end - t.arrival);
            }
            if t.arrival >= warm {
                sg += 1;
                sgv += t.amount;
                if ok {
                    sc += 1;
                    scv += t.amount;
                }
            }
        }
        let generated = self.txs.len() as u64;
        let horizon = self.cfg.duration;
        let recent: Vec<&TxRecord> =
            records.iter().filter(|r| r.arrival >= horizon - DEADLOCK_WINDOW - self.cfg.routing.timeout).collect();
        let deadlock = !recent.is_empty() && recent.iter().all(|r| !r.completed);
        SimOutcome {
            generated,
            completed,
            generated_value,
            completed_value,
            tsr: compute_tsr(completed, generated).unwrap_or(1.0),
            ntp: compute_ntp(completed_value, generated_value).unwrap_or(1.0),
            steady_tsr: compute_tsr(sc, sg).unwrap_or(1.0),
            steady_ntp: compute_ntp(scv, sgv).unwrap_or(1.0),
            latency: LatencySummary::from_samples(&lat),
            trace: self.trace,
            traced_pairs: self.cfg.trace_pairs.iter().map(|&(s, e)| (NodeId(s), NodeId(e))).collect(),
            compliance: self.compliance,
            min_balance: self.min_balance,
            max_conservation_error: self.max_conservation_error,
            deadlock,
            fees: self.fees,
            records,
            events: self.events,
            final_graph: self.graph,
        }
    }
}
