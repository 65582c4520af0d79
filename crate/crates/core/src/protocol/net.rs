//! Event-driven payment protocol between clients and hubs: initialization,
//! TU processing with per-hop locks, consolidated delivery and the
//! acknowledgment chain, over a transport an adversary may tamper with.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    decrypt, digest, encrypt, payment_succ, AppendResult, Attestation, BatchCommitter, Gatt, Hash32, Ias, KeyScope,
    Kmg, Ledger, MockCiphertext, PaymentStateRecord, Program, ProtocolError, PublicKey, Result, StateUpdate, TxStatus,
    VerificationProof,
};
use crate::routing::{split_demand, Demand};
use crate::topology::{candidate_paths, DirectedChannel, NodeId, NodeRole, PathKind, PcnGraph, Tokens};

const AMOUNT_TOL: Tokens = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub session: u64,
    pub hubs: usize,
    pub clients_per_hub: usize,
    /// Funds on each side of a client-hub channel.
    pub client_balance: Tokens,
    /// Funds on each side of a hub-hub channel.
    pub hub_balance: Tokens,
    /// Hubs serving key requests.
    pub kmg_size: usize,
    /// One-way message latency per hop.
    pub link_delay: f64,
    /// Time after the sender funds a payment at which it is rolled back
    /// unless settled.
    pub timeout: f64,
    pub min_tu: Tokens,
    pub max_tu: Tokens,
    pub k: usize,
    pub path_kind: PathKind,
    pub batch_window: f64,
    /// Counter increments allowed per second.
    pub counter_rate: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            session: 1,
            hubs: 2,
            clients_per_hub: 2,
            client_balance: 100.0,
            hub_balance: 200.0,
            kmg_size: 1,
            link_delay: 0.01,
            timeout: 1.0,
            min_tu: 1.0,
            max_tu: 4.0,
            k: 3,
            path_kind: PathKind::Edw,
            batch_window: 0.1,
            counter_rate: 20,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ProtocolError::Config(m));
        if self.hubs < 2 || self.clients_per_hub == 0 {
            return bad("need at least 2 hubs and 1 client per hub".into());
        }
        if self.kmg_size == 0 || self.kmg_size > self.hubs {
            return bad(format!("kmg_size {} outside 1..={}", self.kmg_size, self.hubs));
        }
        for (name, v) in [
            ("client_balance", self.client_balance),
            ("hub_balance", self.hub_balance),
            ("timeout", self.timeout),
            ("min_tu", self.min_tu),
            ("batch_window", self.batch_window),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        if !(self.link_delay >= 0.0) || self.max_tu < self.min_tu || self.k == 0 || self.counter_rate == 0 {
            return bad("link_delay, TU bounds, k or counter_rate out of range".into());
        }
        Ok(())
    }

    pub fn hub_ids(&self) -> Vec<NodeId> {
        (0..self.hubs as u32).map(NodeId).collect()
    }

    pub fn client_ids(&self) -> Vec<NodeId> {
        (self.hubs as u32..(self.hubs + self.hubs * self.clients_per_hub) as u32).map(NodeId).collect()
    }

    pub fn hub_of(&self, client: NodeId) -> Option<NodeId> {
        let i = client.index().checked_sub(self.hubs)?;
        (i < self.hubs * self.clients_per_hub).then(|| NodeId((i / self.clients_per_hub) as u32))
    }

    /// Hubs first, then each hub's clients; hubs form a complete mesh.
    pub fn build_graph(&self) -> Result<PcnGraph> {
        self.validate()?;
        let mut g = PcnGraph::new();
        for _ in 0..self.hubs {
            g.add_node(NodeRole::ActiveHub);
        }
        let to_cfg = |e: crate::topology::TopologyError| ProtocolError::Config(e.to_string());
        for h in 0..self.hubs {
            for _ in 0..self.clients_per_hub {
                let c = g.add_node(NodeRole::Client);
                g.add_channel(c, NodeId(h as u32), self.client_balance, self.client_balance).map_err(to_cfg)?;
            }
        }
        for a in 0..self.hubs {
            for b in a + 1..self.hubs {
                g.add_channel(NodeId(a as u32), NodeId(b as u32), self.hub_balance, self.hub_balance)
                    .map_err(to_cfg)?;
            }
        }
        Ok(g)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaymentRequest {
    pub sender: NodeId,
    pub recipient: NodeId,
    pub amount: Tokens,
    /// Distinguishes otherwise identical requests.
    pub nonce: u64,
    pub at: f64,
}

impl PaymentRequest {
    pub fn pay_req(&self) -> Vec<u8> {
        let mut b = b"payreq".to_vec();
        b.extend_from_slice(&self.sender.0.to_le_bytes());
        b.extend_from_slice(&self.recipient.0.to_le_bytes());
        b.extend_from_slice(&self.amount.to_bits().to_le_bytes());
        b.extend_from_slice(&self.nonce.to_le_bytes());
        b
    }

    pub fn tid(&self) -> Hash32 {
        digest(&[&self.pay_req()])
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsgType {
    Init,
    InitReply,
    PayT,
    PayTu,
    AckTu,
    Receipt,
    Notify,
    AckTid,
    Done,
}

impl MsgType {
    pub const ALL: [MsgType; 9] = [
        MsgType::Init,
        MsgType::InitReply,
        MsgType::PayT,
        MsgType::PayTu,
        MsgType::AckTu,
        MsgType::Receipt,
        MsgType::Notify,
        MsgType::AckTid,
        MsgType::Done,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MsgType::Init => "init",
            MsgType::InitReply => "init_reply",
            MsgType::PayT => "pay_t",
            MsgType::PayTu => "pay_tu",
            MsgType::AckTu => "ack_tu",
            MsgType::Receipt => "receipt",
            MsgType::Notify => "notify",
            MsgType::AckTid => "ack_tid",
            MsgType::Done => "done",
        }
    }
}

/// The `occurrence`-th message of `kind` put on the wire (0-based).
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MsgSel {
    pub kind: MsgType,
    pub occurrence: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryAction {
    Drop(MsgSel),
    Delay(MsgSel, f64),
    /// Delivers the message normally and once more `dt` later.
    Replay(MsgSel, f64),
}

#[derive(Clone, Debug)]
enum Body {
    Init { pay_req: Vec<u8> },
    InitReply { tid: Hash32, pk: PublicKey, mpk: PublicKey, state: PaymentStateRecord },
    PayT { tid: Hash32, inp: MockCiphertext },
    PayTu { tuid: Hash32, inp: MockCiphertext, amount: Tokens },
    AckTu { tuid: Hash32 },
    Receipt { tid: Hash32, inp: MockCiphertext },
    Notify { tid: Hash32, amount: Tokens },
    AckTid { tid: Hash32 },
    Done { tid: Hash32, att: Option<Attestation> },
}

impl Body {
    fn kind(&self) -> MsgType {
        match self {
            Body::Init { .. } => MsgType::Init,
            Body::InitReply { .. } => MsgType::InitReply,
            Body::PayT { .. } => MsgType::PayT,
            Body::PayTu { .. } => MsgType::PayTu,
            Body::AckTu { .. } => MsgType::AckTu,
            Body::Receipt { .. } => MsgType::Receipt,
            Body::Notify { .. } => MsgType::Notify,
            Body::AckTid { .. } => MsgType::AckTid,
            Body::Done { .. } => MsgType::Done,
        }
    }

    fn id(&self) -> Option<Hash32> {
        match self {
            Body::Init { pay_req } => Some(digest(&[pay_req])),
            Body::InitReply { tid, .. }
            | Body::PayT { tid, .. }
            | Body::Receipt { tid, .. }
            | Body::Notify { tid, .. }
            | Body::AckTid { tid }
            | Body::Done { tid, .. } => Some(*tid),
            Body::PayTu { tuid, .. } | Body::AckTu { tuid } => Some(*tuid),
        }
    }
}

#[derive(Clone, Debug)]
struct Message {
    from: NodeId,
    to: NodeId,
    body: Body,
}

#[derive(Clone, Debug)]
enum Event {
    Request(usize),
    Deliver(Message),
    Expire(Hash32),
    /// Key round trip for the units of a payment has finished.
    UnitKeys(Hash32),
    BatchTick(NodeId),
}

/// One protocol log line.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceLine {
    pub time: f64,
    pub actor: String,
    pub msg: String,
    pub id: String,
    pub outcome: String,
}

impl fmt::Display for TraceLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} {} {} {} {}", self.time, self.actor, self.msg, self.id, self.outcome)
    }
}

/// What a watcher of one hub-to-hub channel sees of a passing unit.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedTu {
    pub chan: DirectedChannel,
    pub tuid: Hash32,
    pub leak_len: usize,
    pub amount: Tokens,
    pub payload: Vec<u8>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaymentStatus {
    Completed,
    RolledBack,
    /// Never funded: rejected at initialization or its messages were lost.
    NotStarted,
}

impl PaymentStatus {
    pub fn name(self) -> &'static str {
        match self {
            PaymentStatus::Completed => "completed",
            PaymentStatus::RolledBack => "rolled_back",
            PaymentStatus::NotStarted => "not_started",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PaymentRecord {
    pub request: PaymentRequest,
    pub tid: Hash32,
    pub status: PaymentStatus,
    pub units: usize,
    /// Present when the sender received the final acknowledgment.
    pub proof: Option<VerificationProof>,
    pub proof_valid: bool,
}

#[derive(Clone, Debug)]
pub struct ProtocolOutcome {
    pub payments: Vec<PaymentRecord>,
    pub trace: Vec<TraceLine>,
    /// Safety invariant failures; empty on a correct run.
    pub violations: Vec<String>,
    pub observed: Vec<ObservedTu>,
    pub counter_increments: u64,
    pub kmg_forwarded: u64,
    /// Every attestation the hubs' enclaves produced.
    pub attestations: Vec<Attestation>,
    /// The run's attestation functionality, for verifying `attestations`.
    pub gatt: Gatt,
    pub initial: PcnGraph,
    pub graph: PcnGraph,
}

impl ProtocolOutcome {
    pub fn trace_text(&self) -> String {
        self.trace.iter().map(|l| format!("{l}\n")).collect()
    }
}

#[derive(Clone, Debug)]
struct LockRec {
    dir: DirectedChannel,
    amount: Tokens,
    tuid: Option<Hash32>,
}

#[derive(Clone, Debug)]
struct Unit {
    tuid: Hash32,
    amount: Tokens,
    path: Vec<DirectedChannel>,
}

#[derive(Clone, Debug)]
struct SenderTx {
    request: usize,
    hub: NodeId,
    recipient_hub: NodeId,
    client: NodeId,
    keys_pk: PublicKey,
    d: Vec<u8>,
    amount: Tokens,
    state: PaymentStateRecord,
    funded: bool,
    units: Vec<Unit>,
    attestation: Option<Attestation>,
    done_sent: bool,
}

#[derive(Clone, Debug, Default)]
struct RecipientTx {
    received: BTreeMap<Hash32, Tokens>,
    consolidated: bool,
}

struct Net<'a> {
    cfg: &'a ProtocolConfig,
    requests: &'a [PaymentRequest],
    graph: PcnGraph,
    gatt: Gatt,
    ias: Ias,
    ledger: Ledger,
    kmg: Kmg,
    eids: BTreeMap<NodeId, Hash32>,
    batchers: BTreeMap<NodeId, BatchCommitter>,
    ticking: BTreeSet<NodeId>,
    senders: BTreeMap<Hash32, SenderTx>,
    unit_owner: BTreeMap<Hash32, Hash32>,
    recipients: BTreeMap<Hash32, RecipientTx>,
    seen_units: BTreeSet<Hash32>,
    client_replied: BTreeSet<Hash32>,
    client_notified: BTreeSet<Hash32>,
    client_done: BTreeMap<Hash32, VerificationProof>,
    locks: BTreeMap<Hash32, Vec<LockRec>>,
    resolved: BTreeMap<Hash32, TxStatus>,
    transfers: BTreeMap<Hash32, Vec<(DirectedChannel, Tokens)>>,
    now: f64,
    seq: u64,
    queue: BinaryHeap<Reverse<(u64, u64)>>,
    events: BTreeMap<u64, Event>,
    adversary: &'a [AdversaryAction],
    sent: BTreeMap<MsgType, usize>,
    trace: Vec<TraceLine>,
    observed: Vec<ObservedTu>,
    attestations: Vec<Attestation>,
}

fn actor(n: NodeId, cfg: &ProtocolConfig) -> String {
    if n.index() < cfg.hubs {
        format!("S{}", n.0)
    } else {
        format!("P{}", n.0)
    }
}

fn encode_demand(tid: &Hash32, sender: NodeId, recipient: NodeId, amount: Tokens) -> Vec<u8> {
    let mut b = b"D".to_vec();
    b.extend_from_slice(tid.as_bytes());
    b.extend_from_slice(&sender.0.to_le_bytes());
    b.extend_from_slice(&recipient.0.to_le_bytes());
    b.extend_from_slice(&amount.to_bits().to_le_bytes());
    b
}

fn decode_demand(b: &[u8]) -> Result<(Hash32, NodeId, NodeId, Tokens)> {
    if b.len() != 49 || b[0] != b'D' {
        return Err(ProtocolError::Malformed);
    }
    let tid = Hash32(b[1..33].try_into().expect("32 bytes"));
    let s = u32::from_le_bytes(b[33..37].try_into().expect("4 bytes"));
    let r = u32::from_le_bytes(b[37..41].try_into().expect("4 bytes"));
    let v = f64::from_bits(u64::from_le_bytes(b[41..49].try_into().expect("8 bytes")));
    Ok((tid, NodeId(s), NodeId(r), v))
}

fn encode_unit(tid: &Hash32, recipient_hub: NodeId, amount: Tokens, index: u32) -> Vec<u8> {
    let mut b = b"U".to_vec();
    b.extend_from_slice(tid.as_bytes());
    b.extend_from_slice(&recipient_hub.0.to_le_bytes());
    b.extend_from_slice(&amount.to_bits().to_le_bytes());
    b.extend_from_slice(&index.to_le_bytes());
    b
}

fn decode_unit(b: &[u8]) -> Result<(Hash32, NodeId, Tokens)> {
    if b.len() != 49 || b[0] != b'U' {
        return Err(ProtocolError::Malformed);
    }
    let tid = Hash32(b[1..33].try_into().expect("32 bytes"));
    let hub = u32::from_le_bytes(b[33..37].try_into().expect("4 bytes"));
    let v = f64::from_bits(u64::from_le_bytes(b[37..45].try_into().expect("8 bytes")));
    Ok((tid, NodeId(hub), v))
}

fn head(graph: &PcnGraph, dir: DirectedChannel) -> NodeId {
    let c = graph.channel(dir.chan);
    if dir.forward {
        c.b
    } else {
        c.a
    }
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

impl<'a> Net<'a> {
    fn new(cfg: &'a ProtocolConfig, requests: &'a [PaymentRequest], adversary: &'a [AdversaryAction]) -> Result<Self> {
        let graph = cfg.build_graph()?;
        let hubs = cfg.hub_ids();
        let mut gatt = Gatt::new(cfg.session);
        let mut eids = BTreeMap::new();
        let mut batchers = BTreeMap::new();
        for &h in &hubs {
            gatt.register(h, true);
            eids.insert(h, gatt.install(h, cfg.session, Program::Routing)?);
            batchers.insert(h, BatchCommitter::new(h, cfg.batch_window, cfg.counter_rate));
        }
        let kmg = Kmg::new(hubs.iter().copied(), cfg.kmg_size)?;
        for r in requests {
            let (hs, hr) = match (cfg.hub_of(r.sender), cfg.hub_of(r.recipient)) {
                (Some(a), Some(b)) => (a, b),
                (None, _) => return Err(ProtocolError::NoHubChannel(r.sender)),
                (_, None) => return Err(ProtocolError::NoHubChannel(r.recipient)),
            };
            if hs == hr {
                return Err(ProtocolError::Request(format!("{} and {} share hub {hs}", r.sender, r.recipient)));
            }
            if !(r.amount.is_finite() && r.amount > 0.0 && r.at.is_finite() && r.at >= 0.0) {
                return Err(ProtocolError::Request(format!("amount {} at {}", r.amount, r.at)));
            }
        }
        let mut net = Net {
            cfg,
            requests,
            graph,
            gatt,
            ias: Ias::default(),
            ledger: Ledger::default(),
            kmg,
            eids,
            batchers,
            ticking: BTreeSet::new(),
            senders: BTreeMap::new(),
            unit_owner: BTreeMap::new(),
            recipients: BTreeMap::new(),
            seen_units: BTreeSet::new(),
            client_replied: BTreeSet::new(),
            client_notified: BTreeSet::new(),
            client_done: BTreeMap::new(),
            locks: BTreeMap::new(),
            resolved: BTreeMap::new(),
            transfers: BTreeMap::new(),
            now: 0.0,
            seq: 0,
            queue: BinaryHeap::new(),
            events: BTreeMap::new(),
            adversary,
            sent: BTreeMap::new(),
            trace: Vec::new(),
            observed: Vec::new(),
            attestations: Vec::new(),
        };
        for (i, r) in requests.iter().enumerate() {
            net.schedule(r.at, Event::Request(i));
        }
        Ok(net)
    }

    fn schedule(&mut self, at: f64, ev: Event) {
        self.seq += 1;
        self.events.insert(self.seq, ev);
        self.queue.push(Reverse((at.max(0.0).to_bits(), self.seq)));
    }

    fn log(&mut self, actor: String, msg: &str, id: Option<Hash32>, outcome: &str) {
        let id = id.map_or_else(|| "-".to_string(), |h| h.to_string());
        self.trace.push(TraceLine { time: self.now, actor, msg: msg.into(), id, outcome: outcome.into() });
    }

    fn hub_name(&self, n: NodeId) -> String {
        actor(n, self.cfg)
    }

    /// Puts a message on the wire after `extra` local processing time.
    fn send(&mut self, from: NodeId, to: NodeId, body: Body, hops: usize, extra: f64) {
        let kind = body.kind();
        let occurrence = {
            let c = self.sent.entry(kind).or_insert(0);
            *c += 1;
            *c - 1
        };
        let mut at = self.now + extra + self.cfg.link_delay * hops.max(1) as f64;
        let mut replay = None;
        for a in self.adversary {
            match *a {
                AdversaryAction::Drop(s) if s.kind == kind && s.occurrence == occurrence => {
                    self.log("adv".into(), kind.name(), body.id(), "dropped");
                    return;
                }
                AdversaryAction::Delay(s, dt) if s.kind == kind && s.occurrence == occurrence => {
                    self.log("adv".into(), kind.name(), body.id(), &format!("delayed {dt:.3}"));
                    at += dt.max(0.0);
                }
                AdversaryAction::Replay(s, dt) if s.kind == kind && s.occurrence == occurrence => {
                    replay = Some(dt.max(0.0));
                }
                _ => {}
            }
        }
        let msg = Message { from, to, body };
        if let Some(dt) = replay {
            self.log("adv".into(), kind.name(), msg.body.id(), &format!("replay at +{dt:.3}"));
            self.schedule(at + dt, Event::Deliver(msg.clone()));
        }
        self.schedule(at, Event::Deliver(msg));
    }

    fn run(mut self) -> ProtocolOutcome {
        let initial = self.graph.clone();
        while let Some(Reverse((t, seq))) = self.queue.pop() {
            self.now = f64::from_bits(t);
            let ev = self.events.remove(&seq).expect("event stored");
            match ev {
                Event::Request(i) => self.on_request(i),
                Event::Deliver(m) => self.on_deliver(m),
                Event::Expire(tid) => self.on_expire(tid),
                Event::UnitKeys(tid) => self.on_unit_keys(tid),
                Event::BatchTick(h) => self.on_batch_tick(h),
            }
        }
        let violations = self.check(&initial);
        let payments = self
            .requests
            .iter()
            .map(|r| {
                let tid = r.tid();
                let status = match self.resolved.get(&tid) {
                    Some(TxStatus::Settled) => PaymentStatus::Completed,
                    Some(_) => PaymentStatus::RolledBack,
                    None => PaymentStatus::NotStarted,
                };
                let proof = self.client_done.get(&tid).copied();
                PaymentRecord {
                    request: r.clone(),
                    tid,
                    status,
                    units: self.senders.get(&tid).map_or(0, |s| s.units.len()),
                    proof,
                    proof_valid: proof.is_some_and(|p| p.b && self.ias.check(&p)),
                }
            })
            .collect();
        ProtocolOutcome {
            payments,
            trace: self.trace,
            violations,
            observed: self.observed,
            counter_increments: self.batchers.values().map(BatchCommitter::counter).sum(),
            kmg_forwarded: self.kmg.forwarded(),
            attestations: self.attestations,
            gatt: self.gatt,
            initial,
            graph: self.graph,
        }
    }

    fn on_request(&mut self, i: usize) {
        let r = &self.requests[i];
        let hub = self.cfg.hub_of(r.sender).expect("validated");
        let body = Body::Init { pay_req: r.pay_req() };
        let sender = r.sender;
        self.log(self.hub_name(sender), "request", body.id(), "sent");
        self.send(sender, hub, body, 1, 0.0);
    }

    fn on_deliver(&mut self, m: Message) {
        let to_hub = m.to.index() < self.cfg.hubs;
        match m.body {
            Body::Init { pay_req } => self.hub_init(m.from, m.to, pay_req),
            Body::InitReply { tid, pk, mpk, state } => self.client_init_reply(m.to, tid, pk, mpk, state),
            Body::PayT { tid, inp } => self.hub_pay_t(m.to, tid, inp),
            Body::PayTu { tuid, inp, amount } => self.hub_pay_tu(m.from, m.to, tuid, inp, amount),
            Body::AckTu { tuid } => self.hub_ack_tu(m.to, tuid),
            Body::Receipt { tid, inp } => self.hub_receipt(m.to, tid, inp),
            Body::Notify { tid, amount } => self.client_notify(m.from, m.to, tid, amount),
            Body::AckTid { tid } if to_hub && m.from.index() >= self.cfg.hubs => self.recipient_hub_ack(m.to, tid),
            Body::AckTid { tid } => self.sender_hub_ack(m.to, tid),
            Body::Done { tid, att } => self.client_done(m.to, tid, att),
        }
    }

    fn reject(&mut self, at: NodeId, kind: MsgType, id: Hash32, why: &str) {
        self.log(self.hub_name(at), kind.name(), Some(id), why);
    }

    fn hub_init(&mut self, client: NodeId, hub: NodeId, pay_req: Vec<u8>) {
        let tid = digest(&[&pay_req]);
        if self.senders.contains_key(&tid) {
            return self.reject(hub, MsgType::Init, tid, "duplicate");
        }
        let Some(request) = self.requests.iter().position(|r| r.pay_req() == pay_req) else {
            return self.reject(hub, MsgType::Init, tid, "unknown request");
        };
        let r = &self.requests[request];
        if self.cfg.hub_of(r.sender) != Some(hub) || r.sender != client {
            return self.reject(hub, MsgType::Init, tid, "not our client");
        }
        let grant = self.kmg.keygen(hub, KeyScope::Transaction, &tid).expect("hub requester");
        let recipient_hub = self.cfg.hub_of(r.recipient).expect("validated");
        let d = encode_demand(&tid, r.sender, r.recipient, r.amount);
        let state = PaymentStateRecord::new(tid);
        self.senders.insert(
            tid,
            SenderTx {
                request,
                hub,
                recipient_hub,
                client,
                keys_pk: grant.pair.pk,
                d,
                amount: r.amount,
                state: state.clone(),
                funded: false,
                units: Vec::new(),
                attestation: None,
                done_sent: false,
            },
        );
        self.log(self.hub_name(hub), MsgType::Init.name(), Some(tid), "ok");
        let body = Body::InitReply { tid, pk: grant.pair.pk, mpk: self.gatt.mpk(), state };
        self.send(hub, client, body, 1, 2.0 * self.cfg.link_delay);
    }

    fn client_init_reply(
        &mut self,
        client: NodeId,
        tid: Hash32,
        pk: PublicKey,
        mpk: PublicKey,
        state: PaymentStateRecord,
    ) {
        let me = self.hub_name(client);
        if !self.client_replied.insert(tid) {
            return self.log(me, MsgType::InitReply.name(), Some(tid), "duplicate");
        }
        let Some(tx) = self.senders.get(&tid) else {
            return self.log(me, MsgType::InitReply.name(), Some(tid), "unknown");
        };
        if state.theta || mpk != self.gatt.mpk() {
            return self.log(me, MsgType::InitReply.name(), Some(tid), "bad state");
        }
        let r = &self.requests[tx.request];
        let hub = tx.hub;
        let d = encode_demand(&tid, r.sender, r.recipient, r.amount);
        let amount = r.amount;
        let chan = self.graph.channels_between(client, hub)[0];
        let dir = self.graph.directed(chan, client);
        if self.graph.lock(dir, amount).is_err() {
            return self.log(me, MsgType::InitReply.name(), Some(tid), "insufficient funds");
        }
        self.locks.entry(tid).or_default().push(LockRec { dir, amount, tuid: None });
        self.senders.get_mut(&tid).expect("present").funded = true;
        self.log(me, MsgType::InitReply.name(), Some(tid), "funded");
        self.schedule(self.now + self.cfg.timeout, Event::Expire(tid));
        let inp = encrypt(&pk, &d);
        self.send(client, hub, Body::PayT { tid, inp }, 1, 0.0);
    }

    fn received_from(&self, tid: &Hash32, tuid: Option<Hash32>, to: NodeId) -> Tokens {
        self.locks
            .get(tid)
            .into_iter()
            .flatten()
            .filter(|l| l.tuid == tuid && head(&self.graph, l.dir) == to)
            .map(|l| l.amount)
            .sum()
    }

    fn hub_pay_t(&mut self, hub: NodeId, tid: Hash32, inp: MockCiphertext) {
        let Some(tx) = self.senders.get(&tid) else {
            return self.reject(hub, MsgType::PayT, tid, "unknown");
        };
        if tx.hub != hub || !tx.units.is_empty() || self.ledger.read(&tid).is_some() {
            return self.reject(hub, MsgType::PayT, tid, "replay rejected");
        }
        let grant = self.kmg.keygen(hub, KeyScope::Transaction, &tid).expect("hub requester");
        let Ok((dtid, s, r, val)) = decrypt(grant.pair.sk(), &inp).and_then(|p| decode_demand(&p)) else {
            return self.reject(hub, MsgType::PayT, tid, "undecryptable");
        };
        if dtid != tid || s != tx.client || (self.received_from(&tid, None, hub) - val).abs() > AMOUNT_TOL {
            return self.reject(hub, MsgType::PayT, tid, "funds mismatch");
        }
        if self.ledger.append(tid, TxStatus::Open.as_bytes(), hub, payment_succ) == AppendResult::Failure {
            return self.reject(hub, MsgType::PayT, tid, "ledger rejected");
        }
        let recipient_hub = tx.recipient_hub;
        let paths: Vec<Vec<DirectedChannel>> =
            candidate_paths(&self.graph, hub, recipient_hub, self.cfg.k, self.cfg.path_kind)
                .iter()
                .map(|p| p.directed(&self.graph))
                .collect();
        let demand = Demand { tid: tid.prefix_u64(), source: s, dest: r, amount: val, deadline: self.now };
        let mut next = 0;
        let units = match split_demand(&demand, self.cfg.min_tu, self.cfg.max_tu, &vec![1.0; paths.len()], &mut next) {
            Ok(u) => u,
            Err(_) => {
                self.reject(hub, MsgType::PayT, tid, "no route");
                return self.roll_back(tid, hub);
            }
        };
        let d = encode_demand(&tid, s, r, val);
        let tx = self.senders.get_mut(&tid).expect("present");
        for (i, u) in units.iter().enumerate() {
            let tuid = digest(&[&d, &(i as u32).to_le_bytes()]);
            tx.units.push(Unit { tuid, amount: u.amount, path: paths[u.path].clone() });
            tx.state.issue(tuid);
            self.unit_owner.insert(tuid, tid);
        }
        let n = tx.units.len();
        self.log(self.hub_name(hub), MsgType::PayT.name(), Some(tid), &format!("split {n}"));
        self.schedule(self.now + 2.0 * self.cfg.link_delay, Event::UnitKeys(tid));
    }

    fn on_unit_keys(&mut self, tid: Hash32) {
        let tx = self.senders[&tid].clone();
        if self.resolved.contains_key(&tid) {
            return self.reject(tx.hub, MsgType::PayTu, tid, "already resolved");
        }
        for (i, u) in tx.units.iter().enumerate() {
            let mut done = Vec::new();
            for &dir in &u.path {
                if self.graph.lock(dir, u.amount).is_err() {
                    for &d in &done {
                        self.graph.cancel(d, u.amount).expect("just locked");
                    }
                    self.reject(tx.hub, MsgType::PayTu, u.tuid, "insufficient funds");
                    return self.roll_back(tid, tx.hub);
                }
                done.push(dir);
            }
            self.locks.entry(tid).or_default().extend(u.path.iter().map(|&dir| LockRec {
                dir,
                amount: u.amount,
                tuid: Some(u.tuid),
            }));
            let grant = self.kmg.keygen(tx.hub, KeyScope::TransactionUnit, &u.tuid).expect("hub requester");
            let inp = encrypt(&grant.pair.pk, &encode_unit(&tid, tx.recipient_hub, u.amount, i as u32));
            for &dir in &u.path {
                self.observed.push(ObservedTu {
                    chan: dir,
                    tuid: u.tuid,
                    leak_len: inp.leak_len(),
                    amount: u.amount,
                    payload: inp.payload.clone(),
                });
            }
            let body = Body::PayTu { tuid: u.tuid, inp, amount: u.amount };
            self.send(tx.hub, tx.recipient_hub, body, u.path.len(), 0.0);
        }
    }

    fn hub_pay_tu(&mut self, from: NodeId, hub: NodeId, tuid: Hash32, inp: MockCiphertext, amount: Tokens) {
        if !self.seen_units.insert(tuid) {
            return self.reject(hub, MsgType::PayTu, tuid, "replay rejected");
        }
        let grant = self.kmg.keygen(hub, KeyScope::TransactionUnit, &tuid).expect("hub requester");
        let Ok((tid, dest, val)) = decrypt(grant.pair.sk(), &inp).and_then(|p| decode_unit(&p)) else {
            return self.reject(hub, MsgType::PayTu, tuid, "undecryptable");
        };
        if dest != hub || (val - amount).abs() > AMOUNT_TOL {
            return self.reject(hub, MsgType::PayTu, tuid, "bad unit");
        }
        if self.resolved.contains_key(&tid) {
            return self.reject(hub, MsgType::PayTu, tuid, "already resolved");
        }
        if (self.received_from(&tid, Some(tuid), hub) - val).abs() > AMOUNT_TOL {
            return self.reject(hub, MsgType::PayTu, tuid, "funds missing");
        }
        self.recipients.entry(tid).or_default().received.insert(tuid, val);
        self.reject(hub, MsgType::PayTu, tuid, "ok");
        self.send(hub, from, Body::AckTu { tuid }, 1, 0.0);
    }

    fn hub_ack_tu(&mut self, hub: NodeId, tuid: Hash32) {
        let Some(&tid) = self.unit_owner.get(&tuid) else {
            return self.reject(hub, MsgType::AckTu, tuid, "unknown");
        };
        if self.resolved.contains_key(&tid) {
            return self.reject(hub, MsgType::AckTu, tuid, "late");
        }
        let tx = self.senders.get_mut(&tid).expect("owner known");
        if !tx.state.ack(&tuid) {
            return self.reject(hub, MsgType::AckTu, tuid, "duplicate");
        }
        let theta = tx.state.theta;
        self.push_update(hub, StateUpdate { tid, tuid: Some(tuid), theta: true });
        self.reject(hub, MsgType::AckTu, tuid, if theta { "theta set" } else { "ok" });
        if !theta {
            return;
        }
        self.push_update(hub, StateUpdate { tid, tuid: None, theta: true });
        let tx = &self.senders[&tid];
        let (state, recipient_hub, pk, d) = (tx.state.to_bytes(), tx.recipient_hub, tx.keys_pk, tx.d.clone());
        let eid = self.eids[&hub];
        let (_, att) = self.gatt.resume(hub, eid, &state).expect("own enclave");
        self.attestations.push(att.clone());
        self.senders.get_mut(&tid).expect("present").attestation = Some(att);
        self.send(hub, recipient_hub, Body::Receipt { tid, inp: encrypt(&pk, &d) }, 1, 0.0);
    }

    fn hub_receipt(&mut self, hub: NodeId, tid: Hash32, inp: MockCiphertext) {
        let grant = self.kmg.keygen(hub, KeyScope::Transaction, &tid).expect("hub requester");
        let Ok((dtid, _, r, val)) = decrypt(grant.pair.sk(), &inp).and_then(|p| decode_demand(&p)) else {
            return self.reject(hub, MsgType::Receipt, tid, "undecryptable");
        };
        if dtid != tid || self.cfg.hub_of(r) != Some(hub) {
            return self.reject(hub, MsgType::Receipt, tid, "not ours");
        }
        let rec = self.recipients.entry(tid).or_default();
        if rec.consolidated {
            return self.reject(hub, MsgType::Receipt, tid, "replay rejected");
        }
        let got: Tokens = rec.received.values().sum();
        if (got - val).abs() > AMOUNT_TOL {
            return self.reject(hub, MsgType::Receipt, tid, "funds missing");
        }
        if self.resolved.contains_key(&tid) {
            return self.reject(hub, MsgType::Receipt, tid, "already resolved");
        }
        let chan = self.graph.channels_between(hub, r)[0];
        let dir = self.graph.directed(chan, hub);
        if self.graph.lock(dir, val).is_err() {
            return self.reject(hub, MsgType::Receipt, tid, "insufficient funds");
        }
        self.locks.entry(tid).or_default().push(LockRec { dir, amount: val, tuid: None });
        self.recipients.get_mut(&tid).expect("present").consolidated = true;
        self.reject(hub, MsgType::Receipt, tid, "consolidated");
        self.send(hub, r, Body::Notify { tid, amount: val }, 1, 0.0);
    }

    fn client_notify(&mut self, hub: NodeId, client: NodeId, tid: Hash32, amount: Tokens) {
        if !self.client_notified.insert(tid) {
            return self.reject(client, MsgType::Notify, tid, "duplicate");
        }
        if (self.received_from(&tid, None, client) - amount).abs() > AMOUNT_TOL {
            return self.reject(client, MsgType::Notify, tid, "funds missing");
        }
        self.reject(client, MsgType::Notify, tid, "ok");
        self.send(client, hub, Body::AckTid { tid }, 1, 0.0);
    }

    fn recipient_hub_ack(&mut self, hub: NodeId, tid: Hash32) {
        if self.ledger.append(tid, TxStatus::Settled.as_bytes(), hub, payment_succ) == AppendResult::Failure {
            return self.reject(hub, MsgType::AckTid, tid, "ledger rejected");
        }
        self.resolve(tid, TxStatus::Settled);
        self.reject(hub, MsgType::AckTid, tid, "settled");
        let sender_hub = self.senders.get(&tid).map(|t| t.hub).expect("settled payments were initialized");
        self.send(hub, sender_hub, Body::AckTid { tid }, 1, 0.0);
    }

    fn sender_hub_ack(&mut self, hub: NodeId, tid: Hash32) {
        let Some(tx) = self.senders.get_mut(&tid) else {
            return self.reject(hub, MsgType::AckTid, tid, "unknown");
        };
        if tx.done_sent {
            return self.reject(hub, MsgType::AckTid, tid, "duplicate");
        }
        tx.done_sent = true;
        let (client, att) = (tx.client, tx.attestation.clone());
        self.reject(hub, MsgType::AckTid, tid, "relayed");
        self.send(hub, client, Body::Done { tid, att }, 1, 0.0);
    }

    fn client_done(&mut self, client: NodeId, tid: Hash32, att: Option<Attestation>) {
        if self.client_done.contains_key(&tid) {
            return self.reject(client, MsgType::Done, tid, "duplicate");
        }
        let Some(att) = att else {
            return self.reject(client, MsgType::Done, tid, "no attestation");
        };
        let proof = self.ias.prove(&self.gatt, &self.gatt.mpk(), &att);
        self.client_done.insert(tid, proof);
        self.reject(client, MsgType::Done, tid, if proof.b { "verified" } else { "unverified" });
    }

    fn on_expire(&mut self, tid: Hash32) {
        if self.resolved.contains_key(&tid) {
            return;
        }
        let client = self.senders[&tid].client;
        self.roll_back(tid, client);
    }

    fn roll_back(&mut self, tid: Hash32, party: NodeId) {
        let who = self.hub_name(party);
        if self.ledger.append(tid, TxStatus::RolledBack.as_bytes(), party, payment_succ) == AppendResult::Success {
            self.resolve(tid, TxStatus::RolledBack);
            self.log(who, "rollback", Some(tid), "rolled back");
        } else {
            self.log(who, "rollback", Some(tid), "ledger rejected");
        }
    }

    fn resolve(&mut self, tid: Hash32, status: TxStatus) {
        self.resolved.insert(tid, status);
        let locks = self.locks.remove(&tid).unwrap_or_default();
        let moved = self.transfers.entry(tid).or_default();
        for l in locks {
            if status == TxStatus::Settled {
                self.graph.settle(l.dir, l.amount).expect("lock held");
                moved.push((l.dir, l.amount));
            } else {
                self.graph.cancel(l.dir, l.amount).expect("lock held");
            }
        }
    }

    fn push_update(&mut self, hub: NodeId, u: StateUpdate) {
        self.batchers.get_mut(&hub).expect("hub").push(u, self.now);
        if self.ticking.insert(hub) {
            self.schedule(self.now + self.cfg.batch_window, Event::BatchTick(hub));
        }
    }

    fn on_batch_tick(&mut self, hub: NodeId) {
        self.ticking.remove(&hub);
        let b = self.batchers.get_mut(&hub).expect("hub");
        match b.commit(self.now) {
            Ok(Some(batch)) => {
                b.apply(&batch).expect("fresh counter");
                let outcome = format!("counter {} updates {}", batch.counter, batch.updates.len());
                self.log(self.hub_name(hub), "batch", None, &outcome);
            }
            Ok(None) => {}
            Err(_) => {
                self.log(self.hub_name(hub), "batch", None, "rate limited");
                if self.ticking.insert(hub) {
                    self.schedule(self.now + self.cfg.batch_window, Event::BatchTick(hub));
                }
            }
        }
    }

    fn check(&self, initial: &PcnGraph) -> Vec<String> {
        let mut v = Vec::new();
        if self.graph.conservation_error() > 1e-9 {
            v.push(format!("channel conservation error {}", self.graph.conservation_error()));
        }
        if (self.graph.total_funds() - initial.total_funds()).abs() > 1e-6 {
            v.push(format!("total funds {} vs {}", self.graph.total_funds(), initial.total_funds()));
        }
        for (tid, locks) in &self.locks {
            if !locks.is_empty() {
                v.push(format!("{tid}: {} locks left unresolved", locks.len()));
            }
        }
        // Replay the settled transfers on the starting balances.
        let mut expect: Vec<(Tokens, Tokens)> =
            initial.channels().iter().map(|c| (c.balance_ab, c.balance_ba)).collect();
        for moves in self.transfers.values() {
            for (dir, amount) in moves {
                let e = &mut expect[dir.chan.index()];
                if dir.forward {
                    e.0 -= amount;
                    e.1 += amount;
                } else {
                    e.1 -= amount;
                    e.0 += amount;
                }
            }
        }
        for (c, e) in self.graph.channels().iter().zip(&expect) {
            if (c.balance_ab - e.0).abs() > 1e-6
                || (c.balance_ba - e.1).abs() > 1e-6
                || c.locked_ab + c.locked_ba > 1e-9
            {
                v.push(format!("channel {}-{} balances differ from settled transfers", c.a, c.b));
            }
        }
        for (tid, status) in &self.resolved {
            let tx = &self.senders[tid];
            let moves = self.transfers.get(tid).map_or(&[][..], Vec::as_slice);
            match status {
                TxStatus::Settled => {
                    let r = self.requests[tx.request].recipient;
                    let paid: Tokens = moves.iter().filter(|(d, _)| head(&self.graph, *d) == r).map(|m| m.1).sum();
                    let spent: Tokens =
                        moves.iter().filter(|(d, _)| head(&self.graph, d.reverse()) == tx.client).map(|m| m.1).sum();
                    if (paid - tx.amount).abs() > AMOUNT_TOL || (spent - tx.amount).abs() > AMOUNT_TOL {
                        v.push(format!("{tid}: settled with recipient +{paid}, sender -{spent}, value {}", tx.amount));
                    }
                    if !tx.state.theta {
                        v.push(format!("{tid}: settled with theta unset"));
                    }
                }
                _ => {
                    if !moves.is_empty() {
                        v.push(format!("{tid}: rolled back but moved funds"));
                    }
                }
            }
        }
        for (tid, tx) in &self.senders {
            if !tx.state.is_consistent() {
                v.push(format!("{tid}: theta is not the conjunction of unit states"));
            }
            if tx.funded && !self.resolved.contains_key(tid) {
                v.push(format!("{tid}: funded but never resolved"));
            }
        }
        let tids: BTreeSet<Hash32> = self.senders.keys().copied().collect();
        let mut units = BTreeSet::new();
        for tx in self.senders.values() {
            for u in &tx.units {
                if !units.insert(u.tuid) || tids.contains(&u.tuid) {
                    v.push(format!("unit id {} reused", u.tuid));
                }
            }
        }
        for o in &self.observed {
            let tid = self.unit_owner[&o.tuid];
            let tx = &self.senders[&tid];
            let r = &self.requests[tx.request];
            let plain = tx
                .units
                .iter()
                .position(|u| u.tuid == o.tuid)
                .map(|i| encode_unit(&tid, tx.recipient_hub, o.amount, i as u32));
            if contains(&o.payload, tid.as_bytes())
                || plain.is_some_and(|p| o.payload == p)
                || contains(&o.payload, &encode_demand(&tid, r.sender, r.recipient, r.amount))
            {
                v.push(format!("observer on channel {} links unit {} to its payment", o.chan.chan, o.tuid));
            }
        }
        v
    }
}

/// Runs the requests to completion under the adversary's actions.
pub fn run_protocol(
    cfg: &ProtocolConfig,
    requests: &[PaymentRequest],
    adversary: &[AdversaryAction],
) -> Result<ProtocolOutcome> {
    Ok(Net::new(cfg, requests, adversary)?.run())
}

/// Random cross-hub payments and adversary actions for stress runs.
pub fn random_scenario(
    cfg: &ProtocolConfig,
    seed: u64,
    payments: usize,
    actions: usize,
) -> (Vec<PaymentRequest>, Vec<AdversaryAction>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clients = cfg.client_ids();
    let mut requests = Vec::with_capacity(payments);
    while requests.len() < payments {
        let s = clients[rng.random_range(0..clients.len())];
        let r = clients[rng.random_range(0..clients.len())];
        if cfg.hub_of(s) == cfg.hub_of(r) {
            continue;
        }
        let amount = (rng.random_range(0.5..3.0 * cfg.max_tu) * 100.0).round() / 100.0;
        let nonce = requests.len() as u64;
        let at = (rng.random_range(0.0..cfg.timeout) * 1000.0).round() / 1000.0;
        requests.push(PaymentRequest { sender: s, recipient: r, amount, nonce, at });
    }
    let adversary = (0..actions)
        .map(|_| {
            let sel = MsgSel {
                kind: MsgType::ALL[rng.random_range(0..MsgType::ALL.len())],
                occurrence: rng.random_range(0..payments.max(1) * 2),
            };
            let dt = rng.random_range(0.0..2.0 * cfg.timeout);
            match rng.random_range(0..3) {
                0 => AdversaryAction::Drop(sel),
                1 => AdversaryAction::Delay(sel, dt),
                _ => AdversaryAction::Replay(sel, dt),
            }
        })
        .collect();
    (requests, adversary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(amount: Tokens) -> Vec<PaymentRequest> {
        vec![PaymentRequest { sender: NodeId(2), recipient: NodeId(4), amount, nonce: 0, at: 0.0 }]
    }

    fn nth(kind: MsgType, occurrence: usize) -> MsgSel {
        MsgSel { kind, occurrence }
    }

    #[test]
    fn honest_payment_completes() {
        let cfg = ProtocolConfig::default();
        let out = run_protocol(&cfg, &one(10.0), &[]).unwrap();
        assert!(out.violations.is_empty(), "{:?}", out.violations);
        let p = &out.payments[0];
        assert_eq!(p.status, PaymentStatus::Completed);
        assert_eq!(p.units, 3);
        assert!(p.proof_valid);
        let spoke = |g: &PcnGraph, c: u32| {
            let ch = g.channels_between(NodeId(c), NodeId(cfg.hub_of(NodeId(c)).unwrap().0))[0];
            g.balance_from(ch, NodeId(c))
        };
        assert_eq!(spoke(&out.graph, 2), 90.0);
        assert_eq!(spoke(&out.graph, 4), 110.0);
        assert!(out.counter_increments >= 1);
    }

    #[test]
    fn same_request_twice_is_a_duplicate() {
        let cfg = ProtocolConfig::default();
        let mut reqs = one(5.0);
        reqs.push(PaymentRequest { at: 0.001, ..reqs[0].clone() });
        assert_eq!(reqs[0].tid(), reqs[1].tid());
        let out = run_protocol(&cfg, &reqs, &[]).unwrap();
        assert!(out.trace.iter().any(|l| l.msg == "init" && l.outcome == "duplicate"));
        assert!(out.violations.is_empty());
        let other = PaymentRequest { nonce: 1, ..reqs[0].clone() };
        assert_ne!(other.tid(), reqs[0].tid());
    }

    #[test]
    fn dropped_unit_ack_rolls_back() {
        let cfg = ProtocolConfig::default();
        let out = run_protocol(&cfg, &one(10.0), &[AdversaryAction::Drop(nth(MsgType::AckTu, 1))]).unwrap();
        assert!(out.violations.is_empty(), "{:?}", out.violations);
        assert_eq!(out.payments[0].status, PaymentStatus::RolledBack);
        for (a, b) in out.graph.channels().iter().zip(out.initial.channels()) {
            assert_eq!((a.balance_ab, a.balance_ba), (b.balance_ab, b.balance_ba));
        }
    }

    #[test]
    fn replayed_unit_rejected() {
        let cfg = ProtocolConfig::default();
        let out = run_protocol(&cfg, &one(10.0), &[AdversaryAction::Replay(nth(MsgType::PayTu, 0), 0.05)]).unwrap();
        assert!(out.trace.iter().any(|l| l.msg == "pay_tu" && l.outcome == "replay rejected"));
        assert_eq!(out.payments[0].status, PaymentStatus::Completed);
        assert!(out.violations.is_empty());
    }

    #[test]
    fn short_delay_still_completes_long_delay_rolls_back() {
        let cfg = ProtocolConfig::default();
        let short = run_protocol(&cfg, &one(10.0), &[AdversaryAction::Delay(nth(MsgType::AckTu, 0), 0.2)]).unwrap();
        assert_eq!(short.payments[0].status, PaymentStatus::Completed);
        let long = run_protocol(&cfg, &one(10.0), &[AdversaryAction::Delay(nth(MsgType::AckTid, 0), 5.0)]).unwrap();
        assert_eq!(long.payments[0].status, PaymentStatus::RolledBack);
        assert!(long.violations.is_empty(), "{:?}", long.violations);
    }

    #[test]
    fn underfunded_sender_never_starts() {
        let cfg = ProtocolConfig::default();
        let out = run_protocol(&cfg, &one(500.0), &[]).unwrap();
        assert_eq!(out.payments[0].status, PaymentStatus::NotStarted);
        assert!(out.violations.is_empty());
    }

    #[test]
    fn rejects_bad_requests() {
        let cfg = ProtocolConfig::default();
        let same_hub = vec![PaymentRequest { sender: NodeId(2), recipient: NodeId(3), amount: 1.0, nonce: 0, at: 0.0 }];
        assert!(matches!(run_protocol(&cfg, &same_hub, &[]), Err(ProtocolError::Request(_))));
        let hub = vec![PaymentRequest { sender: NodeId(0), recipient: NodeId(4), amount: 1.0, nonce: 0, at: 0.0 }];
        assert_eq!(run_protocol(&cfg, &hub, &[]).unwrap_err(), ProtocolError::NoHubChannel(NodeId(0)));
    }

    #[test]
    fn non_member_hub_forwards_key_requests() {
        let cfg = ProtocolConfig { hubs: 3, ..ProtocolConfig::default() };
        let reqs = vec![PaymentRequest { sender: NodeId(7), recipient: NodeId(3), amount: 6.0, nonce: 0, at: 0.0 }];
        let out = run_protocol(&cfg, &reqs, &[]).unwrap();
        assert_eq!(out.payments[0].status, PaymentStatus::Completed);
        assert!(out.kmg_forwarded > 0);
    }
}
