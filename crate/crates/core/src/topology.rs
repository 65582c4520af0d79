//! Payment channel graphs: construction, generators, hop distances and
//! candidate path enumeration.
//!
//! A [`PcnGraph`] is a multigraph of bidirectional channels. Each channel
//! tracks spendable balance per direction plus funds that are locked by
//! in-flight HTLC-style transfers, so that
//! `balance_ab + balance_ba + locked_ab + locked_ba == capacity` always holds.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::allocation::{AllocationInstance, AssignmentPlan, DeploymentPlan};

/// Token amounts. Fractional tokens are allowed (remainder transaction units).
pub type Tokens = f64;

/// Default per-direction limit on concurrently locked HTLCs.
pub const DEFAULT_MAX_HTLC: u32 = 483;

/// Retries for disconnected small-world draws before giving up.
const MAX_CONNECT_RETRIES: u64 = 64;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no connected graph after {0} attempts")]
    NeverConnected(u64),
    #[error("graph is disconnected: node {from} cannot reach node {to}")]
    Disconnected { from: NodeId, to: NodeId },
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("self channel on node {0}")]
    SelfChannel(NodeId),
    #[error("duplicate channel between {0} and {1}")]
    DuplicateChannel(NodeId, NodeId),
    #[error("client {client} assigned to undeployed hub {hub}")]
    UndeployedHub { client: NodeId, hub: NodeId },
    #[error("node ids must be dense 0..n, missing {0}")]
    SparseIds(u32),
    #[error("capacity parameters not fittable: {0}")]
    Unfittable(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("insufficient funds on channel {chan}: need {need}, have {have}")]
    InsufficientFunds { chan: ChannelId, need: Tokens, have: Tokens },
    #[error("htlc slots exhausted on channel {0}")]
    HtlcLimit(ChannelId),
    #[error("no locked funds to release on channel {0}")]
    NothingLocked(ChannelId),
}

pub type Result<T> = std::result::Result<T, TopologyError>;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChannelId(pub u32);

impl ChannelId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeRole {
    Client,
    HubCandidate,
    ActiveHub,
}

impl NodeRole {
    pub fn is_hub(self) -> bool {
        matches!(self, NodeRole::HubCandidate | NodeRole::ActiveHub)
    }

    fn as_str(self) -> &'static str {
        match self {
            NodeRole::Client => "client",
            NodeRole::HubCandidate => "candidate",
            NodeRole::ActiveHub => "hub",
        }
    }
}

impl FromStr for NodeRole {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "client" => Ok(NodeRole::Client),
            "candidate" => Ok(NodeRole::HubCandidate),
            "hub" => Ok(NodeRole::ActiveHub),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

/// A directed use of a channel: funds leave `from` and arrive at `to`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DirectedChannel {
    pub chan: ChannelId,
    /// True when the direction is `a -> b` of the underlying channel.
    pub forward: bool,
}

impl DirectedChannel {
    pub fn reverse(self) -> Self {
        DirectedChannel { chan: self.chan, forward: !self.forward }
    }

    /// Dense index into per-direction arrays (`2 * chan + dir`).
    pub fn slot(self) -> usize {
        self.chan.index() * 2 + usize::from(!self.forward)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub a: NodeId,
    pub b: NodeId,
    pub balance_ab: Tokens,
    pub balance_ba: Tokens,
    pub locked_ab: Tokens,
    pub locked_ba: Tokens,
    pub capacity: Tokens,
    pub max_htlc: u32,
    pub htlc_ab: u32,
    pub htlc_ba: u32,
}

impl Channel {
    pub fn new(a: NodeId, b: NodeId, balance_ab: Tokens, balance_ba: Tokens) -> Self {
        Channel {
            a,
            b,
            balance_ab,
            balance_ba,
            locked_ab: 0.0,
            locked_ba: 0.0,
            capacity: balance_ab + balance_ba,
            max_htlc: DEFAULT_MAX_HTLC,
            htlc_ab: 0,
            htlc_ba: 0,
        }
    }

    pub fn other(&self, node: NodeId) -> NodeId {
        if node == self.a {
            self.b
        } else {
            self.a
        }
    }

    /// Spendable balance in the given direction.
    pub fn balance(&self, forward: bool) -> Tokens {
        if forward {
            self.balance_ab
        } else {
            self.balance_ba
        }
    }

    pub fn locked(&self, forward: bool) -> Tokens {
        if forward {
            self.locked_ab
        } else {
            self.locked_ba
        }
    }

    pub fn htlcs(&self, forward: bool) -> u32 {
        if forward {
            self.htlc_ab
        } else {
            self.htlc_ba
        }
    }

    /// Sum of spendable and locked funds; equals `capacity` up to rounding.
    pub fn total(&self) -> Tokens {
        self.balance_ab + self.balance_ba + self.locked_ab + self.locked_ba
    }

    fn sides_mut(&mut self, forward: bool) -> (&mut Tokens, &mut Tokens, &mut u32, &mut Tokens) {
        if forward {
            (&mut self.balance_ab, &mut self.locked_ab, &mut self.htlc_ab, &mut self.balance_ba)
        } else {
            (&mut self.balance_ba, &mut self.locked_ba, &mut self.htlc_ba, &mut self.balance_ab)
        }
    }
}

/// A route: the node sequence together with the concrete channel used per hop.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub hops: Vec<NodeId>,
    pub channels: Vec<ChannelId>,
    pub width: Tokens,
}

impl Path {
    pub fn source(&self) -> NodeId {
        self.hops[0]
    }

    pub fn dest(&self) -> NodeId {
        *self.hops.last().expect("path has at least one node")
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    /// Directed channel uses in path order.
    pub fn directed(&self, graph: &PcnGraph) -> Vec<DirectedChannel> {
        self.channels
            .iter()
            .zip(&self.hops)
            .map(|(&chan, &from)| DirectedChannel { chan, forward: graph.channel(chan).a == from })
            .collect()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    /// Yen-style k shortest simple paths by hop count.
    Ksp,
    /// The k paths with the most total spendable funds among a shortest-path pool.
    Heuristic,
    /// Edge-disjoint widest paths.
    Edw,
    /// Edge-disjoint shortest paths.
    Eds,
}

impl PathKind {
    pub const ALL: [PathKind; 4] = [PathKind::Ksp, PathKind::Heuristic, PathKind::Edw, PathKind::Eds];

    pub fn name(self) -> &'static str {
        match self {
            PathKind::Ksp => "KSP",
            PathKind::Heuristic => "Heuristic",
            PathKind::Edw => "EDW",
            PathKind::Eds => "EDS",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PcnGraph {
    roles: Vec<NodeRole>,
    channels: Vec<Channel>,
    adj: Vec<Vec<(NodeId, ChannelId)>>,
    max_parallel: usize,
}

impl PcnGraph {
    pub fn new() -> Self {
        PcnGraph { max_parallel: 1, ..Default::default() }
    }

    /// Allow up to `n` parallel channels between two hub nodes.
    pub fn with_parallel_limit(mut self, n: usize) -> Self {
        self.max_parallel = n.max(1);
        self
    }

    pub fn add_node(&mut self, role: NodeRole) -> NodeId {
        self.roles.push(role);
        self.adj.push(Vec::new());
        NodeId(self.roles.len() as u32 - 1)
    }

    pub fn add_channel(&mut self, a: NodeId, b: NodeId, balance_ab: Tokens, balance_ba: Tokens) -> Result<ChannelId> {
        self.check_node(a)?;
        self.check_node(b)?;
        if a == b {
            return Err(TopologyError::SelfChannel(a));
        }
        if !(balance_ab >= 0.0 && balance_ba >= 0.0) {
            return Err(TopologyError::InvalidParameter(format!("negative balance on {a}-{b}")));
        }
        let existing = self.adj[a.index()].iter().filter(|(n, _)| *n == b).count();
        let limit =
            if self.roles[a.index()].is_hub() && self.roles[b.index()].is_hub() { self.max_parallel } else { 1 };
        if existing >= limit {
            return Err(TopologyError::DuplicateChannel(a, b));
        }
        let id = ChannelId(self.channels.len() as u32);
        self.channels.push(Channel::new(a, b, balance_ab, balance_ba));
        self.adj[a.index()].push((b, id));
        self.adj[b.index()].push((a, id));
        Ok(id)
    }

    fn check_node(&self, n: NodeId) -> Result<()> {
        if n.index() < self.roles.len() {
            Ok(())
        } else {
            Err(TopologyError::UnknownNode(n))
        }
    }

    pub fn node_count(&self) -> usize {
        self.roles.len()
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.roles.len() as u32).map(NodeId)
    }

    pub fn role(&self, n: NodeId) -> NodeRole {
        self.roles[n.index()]
    }

    pub fn set_role(&mut self, n: NodeId, role: NodeRole) {
        self.roles[n.index()] = role;
    }

    pub fn channel(&self, c: ChannelId) -> &Channel {
        &self.channels[c.index()]
    }

    pub fn channel_mut(&mut self, c: ChannelId) -> &mut Channel {
        &mut self.channels[c.index()]
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn channel_ids(&self) -> impl Iterator<Item = ChannelId> {
        (0..self.channels.len() as u32).map(ChannelId)
    }

    pub fn neighbors(&self, n: NodeId) -> &[(NodeId, ChannelId)] {
        &self.adj[n.index()]
    }

    pub fn degree(&self, n: NodeId) -> usize {
        self.adj[n.index()].len()
    }

    /// Channels joining `a` and `b`, in creation order.
    pub fn channels_between(&self, a: NodeId, b: NodeId) -> Vec<ChannelId> {
        self.adj[a.index()].iter().filter(|(n, _)| *n == b).map(|(_, c)| *c).collect()
    }

    pub fn directed(&self, chan: ChannelId, from: NodeId) -> DirectedChannel {
        DirectedChannel { chan, forward: self.channel(chan).a == from }
    }

    /// Spendable balance of `chan` in the direction leaving `from`.
    pub fn balance_from(&self, chan: ChannelId, from: NodeId) -> Tokens {
        let ch = self.channel(chan);
        ch.balance(ch.a == from)
    }

    pub fn total_funds(&self) -> Tokens {
        self.channels.iter().map(Channel::total).sum()
    }

    /// Moves `amount` from spendable to locked in direction `dir`.
    pub fn lock(&mut self, dir: DirectedChannel, amount: Tokens) -> Result<()> {
        let ch = &mut self.channels[dir.chan.index()];
        let max_htlc = ch.max_htlc;
        let (bal, locked, htlcs, _) = ch.sides_mut(dir.forward);
        if *bal + 1e-9 < amount {
            return Err(TopologyError::InsufficientFunds { chan: dir.chan, need: amount, have: *bal });
        }
        if *htlcs >= max_htlc {
            return Err(TopologyError::HtlcLimit(dir.chan));
        }
        *bal = (*bal - amount).max(0.0);
        *locked += amount;
        *htlcs += 1;
        Ok(())
    }

    /// Completes a locked transfer: the funds arrive on the far side.
    pub fn settle(&mut self, dir: DirectedChannel, amount: Tokens) -> Result<()> {
        let ch = &mut self.channels[dir.chan.index()];
        let (_, locked, htlcs, far) = ch.sides_mut(dir.forward);
        if *htlcs == 0 {
            return Err(TopologyError::NothingLocked(dir.chan));
        }
        *locked = (*locked - amount).max(0.0);
        *htlcs -= 1;
        *far += amount;
        Ok(())
    }

    /// Releases a locked transfer back to the sender side.
    pub fn cancel(&mut self, dir: DirectedChannel, amount: Tokens) -> Result<()> {
        let ch = &mut self.channels[dir.chan.index()];
        let (bal, locked, htlcs, _) = ch.sides_mut(dir.forward);
        if *htlcs == 0 {
            return Err(TopologyError::NothingLocked(dir.chan));
        }
        *locked = (*locked - amount).max(0.0);
        *htlcs -= 1;
        *bal += amount;
        Ok(())
    }

    /// Immediate transfer (lock and settle in one step).
    pub fn transfer(&mut self, dir: DirectedChannel, amount: Tokens) -> Result<()> {
        self.lock(dir, amount)?;
        self.settle(dir, amount)
    }

    /// Largest deviation of any channel from `balance + locked == capacity`.
    pub fn conservation_error(&self) -> Tokens {
        self.channels.iter().map(|c| (c.total() - c.capacity).abs()).fold(0.0, f64::max)
    }

    pub fn is_connected(&self) -> bool {
        if self.roles.is_empty() {
            return true;
        }
        bfs_distances(self, NodeId(0)).iter().all(|d| d.is_some())
    }

    /// Serializes into the line format `node <id> <role>` / `chan <a> <b> <bal_ab> <bal_ba>`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, role) in self.roles.iter().enumerate() {
            out.push_str(&format!("node {i} {}\n", role.as_str()));
        }
        for c in &self.channels {
            out.push_str(&format!("chan {} {} {} {}\n", c.a, c.b, c.balance_ab, c.balance_ba));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut graph = PcnGraph::new().with_parallel_limit(usize::MAX);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| TopologyError::Parse { line: lineno + 1, msg };
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["node", id, role] => {
                    let id: u32 = id.parse().map_err(|_| err(format!("bad node id {id:?}")))?;
                    if id as usize != graph.node_count() {
                        return Err(err(format!("node ids must be sequential, expected {}", graph.node_count())));
                    }
                    graph.add_node(role.parse().map_err(err)?);
                }
                ["chan", a, b, bab, bba] => {
                    let a: u32 = a.parse().map_err(|_| err(format!("bad node id {a:?}")))?;
                    let b: u32 = b.parse().map_err(|_| err(format!("bad node id {b:?}")))?;
                    let bab: f64 = bab.parse().map_err(|_| err(format!("bad balance {bab:?}")))?;
                    let bba: f64 = bba.parse().map_err(|_| err(format!("bad balance {bba:?}")))?;
                    graph.add_channel(NodeId(a), NodeId(b), bab, bba).map_err(|e| err(e.to_string()))?;
                }
                _ => return Err(err(format!("unrecognized line {line:?}"))),
            }
        }
        Ok(graph)
    }
}

/// Watts-Strogatz small-world graph. Disconnected draws are redrawn with the
/// next sub-seed, so the result is a pure function of the arguments.
pub fn generate_small_world(n: usize, ring_degree: usize, rewire_p: f64, seed: u64) -> Result<PcnGraph> {
    if n < 3 {
        return Err(TopologyError::InvalidParameter(format!("n = {n} must be at least 3")));
    }
    if ring_degree == 0 || ring_degree % 2 != 0 || ring_degree >= n {
        return Err(TopologyError::InvalidParameter(format!(
            "ring_degree = {ring_degree} must be even, positive and below n = {n}"
        )));
    }
    if !(0.0..=1.0).contains(&rewire_p) {
        return Err(TopologyError::InvalidParameter(format!("rewire_p = {rewire_p} outside [0, 1]")));
    }
    for attempt in 0..MAX_CONNECT_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        let edges = watts_strogatz_edges(n, ring_degree, rewire_p, &mut rng);
        let mut graph = PcnGraph::new();
        for _ in 0..n {
            graph.add_node(NodeRole::Client);
        }
        for (u, v) in edges {
            graph.add_channel(NodeId(u as u32), NodeId(v as u32), 0.0, 0.0)?;
        }
        if graph.is_connected() {
            return Ok(graph);
        }
    }
    Err(TopologyError::NeverConnected(MAX_CONNECT_RETRIES))
}

fn watts_strogatz_edges(n: usize, k: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for i in 0..n {
        for j in 1..=k / 2 {
            let t = (i + j) % n;
            adj[i].insert(t);
            adj[t].insert(i);
        }
    }
    for j in 1..=k / 2 {
        for i in 0..n {
            let t = (i + j) % n;
            if !adj[i].contains(&t) || rng.random::<f64>() >= p {
                continue;
            }
            if adj[i].len() >= n - 1 {
                continue;
            }
            let w = loop {
                let w = rng.random_range(0..n);
                if w != i && !adj[i].contains(&w) {
                    break w;
                }
            };
            adj[i].remove(&t);
            adj[t].remove(&i);
            adj[i].insert(w);
            adj[w].insert(i);
        }
    }
    let mut edges = Vec::with_capacity(n * k / 2);
    for (u, nbrs) in adj.iter().enumerate() {
        edges.extend(nbrs.iter().filter(|&&v| v > u).map(|&v| (u, v)));
    }
    edges
}

/// Log-normal with a floor clamp at `min_cap`, median `median_cap` and the
/// shape chosen so the clamped distribution's mean equals `mean_cap`.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct CapacityModel {
    pub min_cap: Tokens,
    pub mu: f64,
    pub sigma: f64,
}

impl CapacityModel {
    pub fn fit(min_cap: Tokens, mean_cap: Tokens, median_cap: Tokens) -> Result<Self> {
        if !(min_cap > 0.0 && min_cap < median_cap && median_cap < mean_cap) {
            return Err(TopologyError::Unfittable(format!(
                "need 0 < min ({min_cap}) < median ({median_cap}) < mean ({mean_cap})"
            )));
        }
        let mu = median_cap.ln();
        let clamped_mean = |s: f64| {
            let z = Normal::standard();
            let lc = min_cap.ln();
            min_cap * z.cdf((lc - mu) / s) + (mu + s * s / 2.0).exp() * z.cdf((mu + s * s - lc) / s)
        };
        let (mut lo, mut hi) = (1e-6, 1.0);
        while clamped_mean(hi) < mean_cap {
            hi *= 2.0;
            if hi > 64.0 {
                return Err(TopologyError::Unfittable("mean unreachable".into()));
            }
        }
        if clamped_mean(lo) > mean_cap {
            return Err(TopologyError::Unfittable("mean below clamped median".into()));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if clamped_mean(mid) < mean_cap {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(CapacityModel { min_cap, mu, sigma: 0.5 * (lo + hi) })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Tokens {
        let dist = LogNormal::new(self.mu, self.sigma).expect("sigma is positive");
        dist.sample(rng).max(self.min_cap).round()
    }
}

/// Redraws every channel's capacity from the heavy-tailed model and splits it
/// evenly between the two directions.
pub fn assign_capacities(
    mut graph: PcnGraph,
    min_cap: Tokens,
    mean_cap: Tokens,
    median_cap: Tokens,
    seed: u64,
) -> Result<PcnGraph> {
    let model = CapacityModel::fit(min_cap, mean_cap, median_cap)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for ch in &mut graph.channels {
        let cap = model.sample(&mut rng);
        *ch = Channel { max_htlc: ch.max_htlc, ..Channel::new(ch.a, ch.b, cap / 2.0, cap / 2.0) };
    }
    Ok(graph)
}

fn bfs_distances(graph: &PcnGraph, src: NodeId) -> Vec<Option<u32>> {
    let mut dist = vec![None; graph.node_count()];
    dist[src.index()] = Some(0);
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u.index()].unwrap_or(0);
        for &(v, _) in graph.neighbors(u) {
            if dist[v.index()].is_none() {
                dist[v.index()] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// All-pairs hop counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HopMatrix {
    n: usize,
    hops: Vec<u32>,
}

impl HopMatrix {
    pub fn get(&self, a: NodeId, b: NodeId) -> u32 {
        self.hops[a.index() * self.n + b.index()]
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

pub fn hop_matrix(graph: &PcnGraph) -> Result<HopMatrix> {
    let n = graph.node_count();
    let mut hops = vec![0u32; n * n];
    for src in graph.nodes() {
        for (j, d) in bfs_distances(graph, src).into_iter().enumerate() {
            hops[src.index() * n + j] = d.ok_or(TopologyError::Disconnected { from: src, to: NodeId(j as u32) })?;
        }
    }
    Ok(HopMatrix { n, hops })
}

/// How deployed hubs are wired to each other.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum HubMesh {
    #[default]
    Complete,
    Explicit(Vec<(NodeId, NodeId)>),
}

/// Funding used when materializing a multi-star network.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct StarFunding {
    /// Per-direction balance of each client-hub channel.
    pub spoke_balance: Tokens,
    /// Per-direction balance of each hub pair, split evenly over `n_cc` channels.
    pub hub_balance: Tokens,
    /// Parallel channels per hub pair.
    pub n_cc: usize,
}

impl Default for StarFunding {
    fn default() -> Self {
        StarFunding { spoke_balance: 100.0, hub_balance: 1000.0, n_cc: 1 }
    }
}

/// Builds the multi-star network for an allocation: every client gets one
/// channel to its assigned hub and deployed hubs are joined by `mesh`.
/// Undeployed candidates stay in the graph as isolated `HubCandidate` nodes.
pub fn build_multi_star(
    instance: &AllocationInstance,
    deployment: &DeploymentPlan,
    assignment: &AssignmentPlan,
    mesh: &HubMesh,
    funding: &StarFunding,
) -> Result<PcnGraph> {
    let mut roles: BTreeMap<u32, NodeRole> = BTreeMap::new();
    for &c in instance.clients() {
        roles.insert(c.0, NodeRole::Client);
    }
    for (idx, &h) in instance.candidates().iter().enumerate() {
        let role = if deployment.is_deployed(idx) { NodeRole::ActiveHub } else { NodeRole::HubCandidate };
        roles.insert(h.0, role);
    }
    if let Some(missing) = (0..roles.len() as u32).find(|i| !roles.contains_key(i)) {
        return Err(TopologyError::SparseIds(missing));
    }
    let mut graph = PcnGraph::new().with_parallel_limit(funding.n_cc);
    for role in roles.values() {
        graph.add_node(*role);
    }
    for (m, &client) in instance.clients().iter().enumerate() {
        let hub_idx = assignment.hub_of(m);
        let hub = instance.candidates()[hub_idx];
        if !deployment.is_deployed(hub_idx) {
            return Err(TopologyError::UndeployedHub { client, hub });
        }
        graph.add_channel(client, hub, funding.spoke_balance, funding.spoke_balance)?;
    }
    let hubs: Vec<NodeId> =
        instance.candidates().iter().enumerate().filter(|(i, _)| deployment.is_deployed(*i)).map(|(_, &h)| h).collect();
    let pairs: Vec<(NodeId, NodeId)> = match mesh {
        HubMesh::Complete => {
            hubs.iter().enumerate().flat_map(|(i, &a)| hubs[i + 1..].iter().map(move |&b| (a, b))).collect()
        }
        HubMesh::Explicit(edges) => {
            for &(a, b) in edges {
                for n in [a, b] {
                    if graph.check_node(n).is_err() || graph.role(n) != NodeRole::ActiveHub {
                        return Err(TopologyError::InvalidParameter(format!(
                            "mesh endpoint {n} is not a deployed hub"
                        )));
                    }
                }
            }
            edges.clone()
        }
    };
    let n_cc = funding.n_cc.max(1);
    let per_channel = funding.hub_balance / n_cc as f64;
    for (a, b) in pairs {
        for _ in 0..n_cc {
            graph.add_channel(a, b, per_channel, per_channel)?;
        }
    }
    Ok(graph)
}

/// Candidate paths from `s` to `e` of the requested kind, at most `k`.
/// Returns an empty list when `e` is unreachable.
pub fn candidate_paths(graph: &PcnGraph, s: NodeId, e: NodeId, k: usize, kind: PathKind) -> Vec<Path> {
    if s == e || k == 0 || s.index() >= graph.node_count() || e.index() >= graph.node_count() {
        return Vec::new();
    }
    match kind {
        PathKind::Ksp => yen_k_shortest(graph, s, e, k),
        PathKind::Heuristic => {
            let mut pool = yen_k_shortest(graph, s, e, (3 * k).max(10));
            let funds = |p: &Path| -> Tokens {
                p.channels.iter().zip(&p.hops).map(|(&c, &from)| graph.balance_from(c, from)).sum()
            };
            pool.sort_by(|x, y| funds(y).total_cmp(&funds(x)).then(x.len().cmp(&y.len())));
            pool.truncate(k);
            pool
        }
        PathKind::Edw => disjoint_paths(graph, s, e, k, widest_path),
        PathKind::Eds => disjoint_paths(graph, s, e, k, shortest_path),
    }
}

type Finder = fn(&PcnGraph, NodeId, NodeId, &BTreeSet<ChannelId>, &BTreeSet<NodeId>) -> Option<Path>;

fn disjoint_paths(graph: &PcnGraph, s: NodeId, e: NodeId, k: usize, find: Finder) -> Vec<Path> {
    let mut removed = BTreeSet::new();
    let mut out = Vec::new();
    while out.len() < k {
        let Some(path) = find(graph, s, e, &removed, &BTreeSet::new()) else { break };
        removed.extend(path.channels.iter().copied());
        out.push(path);
    }
    out
}

/// The usable channel from `u` to `v` with the most spendable balance.
fn best_channel(graph: &PcnGraph, u: NodeId, v: NodeId, removed: &BTreeSet<ChannelId>) -> Option<ChannelId> {
    graph
        .neighbors(u)
        .iter()
        .filter(|(n, c)| *n == v && !removed.contains(c))
        .max_by(|(_, c1), (_, c2)| graph.balance_from(*c1, u).total_cmp(&graph.balance_from(*c2, u)).then(c2.cmp(c1)))
        .map(|(_, c)| *c)
}

fn make_path(graph: &PcnGraph, hops: Vec<NodeId>, removed: &BTreeSet<ChannelId>) -> Path {
    let channels: Vec<ChannelId> =
        hops.windows(2).map(|w| best_channel(graph, w[0], w[1], removed).expect("hop has a channel")).collect();
    let width = channels.iter().zip(&hops).map(|(&c, &from)| graph.balance_from(c, from)).fold(f64::INFINITY, f64::min);
    Path { hops, channels, width }
}

fn sorted_neighbors(graph: &PcnGraph, u: NodeId, removed: &BTreeSet<ChannelId>) -> Vec<NodeId> {
    let mut nbrs: Vec<NodeId> =
        graph.neighbors(u).iter().filter(|(_, c)| !removed.contains(c)).map(|(n, _)| *n).collect();
    nbrs.sort_unstable();
    nbrs.dedup();
    nbrs
}

fn shortest_path(
    graph: &PcnGraph,
    s: NodeId,
    e: NodeId,
    removed: &BTreeSet<ChannelId>,
    banned: &BTreeSet<NodeId>,
) -> Option<Path> {
    let n = graph.node_count();
    let mut parent: Vec<Option<NodeId>> = vec![None; n];
    let mut seen = vec![false; n];
    seen[s.index()] = true;
    let mut queue = VecDeque::from([s]);
    while let Some(u) = queue.pop_front() {
        if u == e {
            break;
        }
        for v in sorted_neighbors(graph, u, removed) {
            if !seen[v.index()] && !banned.contains(&v) {
                seen[v.index()] = true;
                parent[v.index()] = Some(u);
                queue.push_back(v);
            }
        }
    }
    if !seen[e.index()] {
        return None;
    }
    let mut hops = vec![e];
    let mut cur = e;
    while let Some(p) = parent[cur.index()] {
        hops.push(p);
        cur = p;
    }
    hops.reverse();
    Some(make_path(graph, hops, removed))
}

#[derive(PartialEq)]
struct WidestEntry {
    width: Tokens,
    hops: u32,
    node: NodeId,
}

impl Eq for WidestEntry {}

impl Ord for WidestEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.width.total_cmp(&other.width).then(other.hops.cmp(&self.hops)).then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for WidestEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Maximum-bottleneck path; ties go to fewer hops.
fn widest_path(
    graph: &PcnGraph,
    s: NodeId,
    e: NodeId,
    removed: &BTreeSet<ChannelId>,
    banned: &BTreeSet<NodeId>,
) -> Option<Path> {
    let n = graph.node_count();
    let mut best: Vec<(Tokens, u32)> = vec![(f64::NEG_INFINITY, u32::MAX); n];
    let mut parent: Vec<Option<(NodeId, ChannelId)>> = vec![None; n];
    let mut done = vec![false; n];
    best[s.index()] = (f64::INFINITY, 0);
    let mut heap = BinaryHeap::from([WidestEntry { width: f64::INFINITY, hops: 0, node: s }]);
    while let Some(WidestEntry { width, hops, node: u }) = heap.pop() {
        if done[u.index()] {
            continue;
        }
        done[u.index()] = true;
        if u == e {
            break;
        }
        for &(v, c) in graph.neighbors(u) {
            if removed.contains(&c) || banned.contains(&v) || done[v.index()] {
                continue;
            }
            let w = width.min(graph.balance_from(c, u));
            let cand = (w, hops + 1);
            let cur = best[v.index()];
            if cand.0 > cur.0 || (cand.0 == cur.0 && cand.1 < cur.1) {
                best[v.index()] = cand;
                parent[v.index()] = Some((u, c));
                heap.push(WidestEntry { width: w, hops: hops + 1, node: v });
            }
        }
    }
    if !done[e.index()] {
        return None;
    }
    let mut hops = vec![e];
    let mut channels = Vec::new();
    let mut cur = e;
    while let Some((p, c)) = parent[cur.index()] {
        hops.push(p);
        channels.push(c);
        cur = p;
    }
    hops.reverse();
    channels.reverse();
    Some(Path { width: best[e.index()].0, hops, channels })
}

/// Yen's algorithm over the simple graph underlying `graph` (unit weights).
fn yen_k_shortest(graph: &PcnGraph, s: NodeId, e: NodeId, k: usize) -> Vec<Path> {
    let none = BTreeSet::new();
    let Some(first) = shortest_path(graph, s, e, &none, &BTreeSet::new()) else { return Vec::new() };
    let mut accepted: Vec<Vec<NodeId>> = vec![first.hops];
    let mut candidates: BTreeSet<(usize, Vec<NodeId>)> = BTreeSet::new();
    while accepted.len() < k {
        let last = accepted.last().expect("nonempty").clone();
        for i in 0..last.len() - 1 {
            let spur = last[i];
            let root = &last[..=i];
            let mut removed = BTreeSet::new();
            for p in &accepted {
                if p.len() > i && &p[..=i] == root {
                    removed.extend(graph.channels_between(p[i], p[i + 1]));
                }
            }
            let banned: BTreeSet<NodeId> = root[..i].iter().copied().collect();
            if let Some(spur_path) = shortest_path(graph, spur, e, &removed, &banned) {
                let mut total = root[..i].to_vec();
                total.extend(spur_path.hops);
                if !accepted.contains(&total) {
                    candidates.insert((total.len(), total));
                }
            }
        }
        match candidates.pop_first() {
            Some((_, next)) => accepted.push(next),
            None => break,
        }
    }
    accepted.into_iter().map(|hops| make_path(graph, hops, &none)).collect()
}
