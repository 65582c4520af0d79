//! Mock attested execution, append-only ledger, key management group and
//! batched state commits. The payment state machine built on them lives in
//! [`net`].

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::topology::NodeId;

pub mod net;

pub use net::{
    random_scenario, run_protocol, AdversaryAction, MsgSel, MsgType, ObservedTu, PaymentRecord, PaymentRequest,
    PaymentStatus, ProtocolConfig, ProtocolOutcome, TraceLine,
};

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("party {0} is not registered")]
    Unregistered(NodeId),
    #[error("install index {idx} does not match session {sid}")]
    SessionMismatch { idx: u64, sid: u64 },
    #[error("unknown enclave {0}")]
    UnknownEnclave(Hash32),
    #[error("party {0} is not a hub")]
    NotHub(NodeId),
    #[error("ciphertext was made for a different key")]
    WrongKey,
    #[error("ciphertext failed its integrity tag")]
    Tampered,
    #[error("malformed plaintext")]
    Malformed,
    #[error("monotonic counter rate limit reached")]
    RateLimited,
    #[error("stale batch counter {got}, last applied {last}")]
    StaleBatch { got: u64, last: u64 },
    #[error("node {0} has no hub channel")]
    NoHubChannel(NodeId),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid payment request: {0}")]
    Request(String),
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

/// A 32-byte digest used for ids, keys and signatures.
#[derive(Copy, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Hash32(pub [u8; 32]);

impl Hash32 {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    /// Leading eight bytes as an integer.
    pub fn prefix_u64(&self) -> u64 {
        u64::from_le_bytes(self.0[..8].try_into().expect("8 bytes"))
    }
}

impl fmt::Display for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0[..6] {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash32({self})")
    }
}

/// Length-prefixed SHA-256 over the parts.
pub fn digest(parts: &[&[u8]]) -> Hash32 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    Hash32(h.finalize().into())
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KeyScope {
    Processor,
    Transaction,
    TransactionUnit,
}

impl KeyScope {
    fn tag(self) -> &'static [u8] {
        match self {
            KeyScope::Processor => b"processor",
            KeyScope::Transaction => b"transaction",
            KeyScope::TransactionUnit => b"unit",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct PublicKey {
    pub id: Hash32,
    pub scope: KeyScope,
}

/// Never serialized; its Debug output is redacted.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey {
    key_id: Hash32,
    secret: Hash32,
    scope: KeyScope,
}

impl SecretKey {
    pub fn key_id(&self) -> Hash32 {
        self.key_id
    }

    pub fn scope(&self) -> KeyScope {
        self.scope
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecretKey({}, <redacted>)", self.key_id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MockKeypair {
    pub pk: PublicKey,
    sk: SecretKey,
}

impl MockKeypair {
    /// Both halves are derived from the same nonce.
    pub fn derive(scope: KeyScope, nonce: &[u8]) -> Self {
        let id = digest(&[b"pk", scope.tag(), nonce]);
        let secret = digest(&[b"sk", scope.tag(), nonce]);
        MockKeypair { pk: PublicKey { id, scope }, sk: SecretKey { key_id: id, secret, scope } }
    }

    pub fn sk(&self) -> &SecretKey {
        &self.sk
    }

    pub fn scope(&self) -> KeyScope {
        self.pk.scope
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MockCiphertext {
    pub key_id: Hash32,
    pub payload: Vec<u8>,
    tag: Hash32,
}

impl MockCiphertext {
    /// Bytes an observer learns about the plaintext.
    pub fn leak_len(&self) -> usize {
        self.payload.len()
    }
}

fn keystream_xor(key_id: &Hash32, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len());
    for (block, chunk) in data.chunks(32).enumerate() {
        let pad = digest(&[b"stream", key_id.as_bytes(), &(block as u64).to_le_bytes()]);
        out.extend(chunk.iter().zip(pad.0.iter()).map(|(a, b)| a ^ b));
    }
    out
}

pub fn encrypt(pk: &PublicKey, plaintext: &[u8]) -> MockCiphertext {
    MockCiphertext {
        key_id: pk.id,
        payload: keystream_xor(&pk.id, plaintext),
        tag: digest(&[b"tag", pk.id.as_bytes(), plaintext]),
    }
}

pub fn decrypt(sk: &SecretKey, ct: &MockCiphertext) -> Result<Vec<u8>> {
    if sk.key_id != ct.key_id {
        return Err(ProtocolError::WrongKey);
    }
    let plain = keystream_xor(&ct.key_id, &ct.payload);
    if digest(&[b"tag", ct.key_id.as_bytes(), &plain]) != ct.tag {
        return Err(ProtocolError::Tampered);
    }
    Ok(plain)
}

/// Keyed digest standing in for a signature.
pub fn mock_sign(sk: &SecretKey, payload: &[u8]) -> Hash32 {
    digest(&[b"sig", sk.secret.as_bytes(), payload])
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Program {
    /// Appends each input to the enclave memory and reports the record count
    /// with a digest of everything seen so far.
    Routing,
    /// Counts resumes.
    Counter,
}

impl Program {
    pub fn name(self) -> &'static str {
        match self {
            Program::Routing => "routing",
            Program::Counter => "counter",
        }
    }

    pub fn hash(self) -> Hash32 {
        digest(&[b"prog", self.name().as_bytes()])
    }

    fn step(self, memory: &mut Vec<u8>, inp: &[u8]) -> Vec<u8> {
        match self {
            Program::Routing => {
                let count = if memory.len() >= 8 {
                    u64::from_le_bytes(memory[..8].try_into().expect("8 bytes")) + 1
                } else {
                    memory.extend_from_slice(&[0; 8]);
                    1
                };
                memory[..8].copy_from_slice(&count.to_le_bytes());
                memory.extend_from_slice(&(inp.len() as u64).to_le_bytes());
                memory.extend_from_slice(inp);
                let mut out = count.to_le_bytes().to_vec();
                out.extend_from_slice(digest(&[memory]).as_bytes());
                out
            }
            Program::Counter => {
                let count = match memory.get(..8) {
                    Some(b) => u64::from_le_bytes(b.try_into().expect("8 bytes")) + 1,
                    None => 1,
                };
                memory.clear();
                memory.extend_from_slice(&count.to_le_bytes());
                count.to_le_bytes().to_vec()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Attestation {
    pub idx: u64,
    pub eid: Hash32,
    pub prog_hash: Hash32,
    pub outp: Vec<u8>,
    pub sigma: Hash32,
}

impl Attestation {
    pub fn signed_payload(idx: u64, eid: &Hash32, prog_hash: &Hash32, outp: &[u8]) -> Vec<u8> {
        let mut p = idx.to_le_bytes().to_vec();
        p.extend_from_slice(eid.as_bytes());
        p.extend_from_slice(prog_hash.as_bytes());
        p.extend_from_slice(outp);
        p
    }

    pub fn payload(&self) -> Vec<u8> {
        Self::signed_payload(self.idx, &self.eid, &self.prog_hash, &self.outp)
    }
}

#[derive(Clone, Debug)]
struct Enclave {
    owner: NodeId,
    idx: u64,
    prog: Program,
    memory: Vec<u8>,
}

/// Attested execution functionality: one processor key pair, a registry of
/// parties and the installed enclaves.
#[derive(Clone, Debug)]
pub struct Gatt {
    sid: u64,
    keys: MockKeypair,
    registered: BTreeMap<NodeId, bool>,
    enclaves: BTreeMap<Hash32, Enclave>,
    nonce: u64,
}

impl Gatt {
    pub fn new(sid: u64) -> Self {
        let keys = MockKeypair::derive(KeyScope::Processor, &sid.to_le_bytes());
        Gatt { sid, keys, registered: BTreeMap::new(), enclaves: BTreeMap::new(), nonce: 0 }
    }

    pub fn sid(&self) -> u64 {
        self.sid
    }

    pub fn mpk(&self) -> PublicKey {
        self.keys.pk
    }

    pub fn register(&mut self, party: NodeId, honest: bool) {
        self.registered.insert(party, honest);
    }

    pub fn install(&mut self, party: NodeId, idx: u64, prog: Program) -> Result<Hash32> {
        let honest = *self.registered.get(&party).ok_or(ProtocolError::Unregistered(party))?;
        if honest && idx != self.sid {
            return Err(ProtocolError::SessionMismatch { idx, sid: self.sid });
        }
        self.nonce += 1;
        let eid = digest(&[b"eid", self.keys.pk.id.as_bytes(), &self.nonce.to_le_bytes(), &party.0.to_le_bytes()]);
        self.enclaves.insert(eid, Enclave { owner: party, idx, prog, memory: Vec::new() });
        Ok(eid)
    }

    pub fn resume(&mut self, party: NodeId, eid: Hash32, inp: &[u8]) -> Result<(Vec<u8>, Attestation)> {
        let enclave = match self.enclaves.get_mut(&eid) {
            Some(e) if e.owner == party => e,
            _ => return Err(ProtocolError::UnknownEnclave(eid)),
        };
        let outp = enclave.prog.step(&mut enclave.memory, inp);
        let prog_hash = enclave.prog.hash();
        let sigma = mock_sign(&self.keys.sk, &Attestation::signed_payload(enclave.idx, &eid, &prog_hash, &outp));
        let att = Attestation { idx: enclave.idx, eid, prog_hash, outp: outp.clone(), sigma };
        Ok((outp, att))
    }

    pub fn verify(&self, mpk: &PublicKey, att: &Attestation) -> bool {
        mpk.id == self.keys.pk.id && mock_sign(&self.keys.sk, &att.payload()) == att.sigma
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct VerificationProof {
    pub b: bool,
    pub sigma: Hash32,
    pub sigma_ias: Hash32,
}

/// Mock attestation service: checks a quote against the processor key and
/// co-signs the verdict.
#[derive(Clone, Debug)]
pub struct Ias {
    keys: MockKeypair,
}

impl Default for Ias {
    fn default() -> Self {
        Ias { keys: MockKeypair::derive(KeyScope::Processor, b"ias") }
    }
}

impl Ias {
    fn cosign(&self, b: bool, sigma: &Hash32) -> Hash32 {
        mock_sign(&self.keys.sk, &[&[u8::from(b)][..], sigma.as_bytes()].concat())
    }

    pub fn prove(&self, gatt: &Gatt, mpk: &PublicKey, att: &Attestation) -> VerificationProof {
        let b = gatt.verify(mpk, att);
        VerificationProof { b, sigma: att.sigma, sigma_ias: self.cosign(b, &att.sigma) }
    }

    pub fn check(&self, proof: &VerificationProof) -> bool {
        proof.sigma_ias == self.cosign(proof.b, &proof.sigma)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum AppendResult {
    Success,
    Failure,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerEntry {
    pub tid: Hash32,
    pub inp: Vec<u8>,
    pub appender: NodeId,
    pub seq: u64,
}

/// Decides whether `new` may replace `old` (absent when the tid is unseen).
pub type SuccFn = fn(Option<&[u8]>, &[u8]) -> bool;

/// Append-only store keyed by tid.
#[derive(Clone, Debug, Default)]
pub struct Ledger {
    latest: BTreeMap<Hash32, LedgerEntry>,
    history: Vec<LedgerEntry>,
}

impl Ledger {
    pub fn append(&mut self, tid: Hash32, inp: &[u8], party: NodeId, succ: SuccFn) -> AppendResult {
        let old = self.latest.get(&tid).map(|e| e.inp.as_slice());
        if !succ(old, inp) {
            return AppendResult::Failure;
        }
        let entry = LedgerEntry { tid, inp: inp.to_vec(), appender: party, seq: self.history.len() as u64 };
        self.history.push(entry.clone());
        self.latest.insert(tid, entry);
        AppendResult::Success
    }

    pub fn read(&self, tid: &Hash32) -> Option<&LedgerEntry> {
        self.latest.get(tid)
    }

    pub fn history(&self) -> &[LedgerEntry] {
        &self.history
    }
}

/// Ledger states of a payment.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxStatus {
    Open,
    Settled,
    RolledBack,
}

impl TxStatus {
    pub fn as_bytes(self) -> &'static [u8] {
        match self {
            TxStatus::Open => b"open",
            TxStatus::Settled => b"settled",
            TxStatus::RolledBack => b"rolled_back",
        }
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        [TxStatus::Open, TxStatus::Settled, TxStatus::RolledBack].into_iter().find(|s| s.as_bytes() == b)
    }
}

/// Unseen or open payments may be rolled back; only open ones may settle.
pub fn payment_succ(old: Option<&[u8]>, new: &[u8]) -> bool {
    let new = TxStatus::from_bytes(new);
    match (old.map(TxStatus::from_bytes), new) {
        (None, Some(TxStatus::Open | TxStatus::RolledBack)) => true,
        (Some(Some(TxStatus::Open)), Some(TxStatus::Settled | TxStatus::RolledBack)) => true,
        _ => false,
    }
}

/// Key management group: `members` answer key requests; other hubs forward
/// through the lowest-id member.
#[derive(Clone, Debug)]
pub struct Kmg {
    members: BTreeSet<NodeId>,
    hubs: BTreeSet<NodeId>,
    cache: BTreeMap<(KeyScope, Hash32), MockKeypair>,
    forwarded: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyGrant {
    pub pair: MockKeypair,
    /// Member that served the request.
    pub via: NodeId,
}

impl Kmg {
    pub fn new(hubs: impl IntoIterator<Item = NodeId>, size: usize) -> Result<Self> {
        let hubs: BTreeSet<NodeId> = hubs.into_iter().collect();
        if size == 0 || size > hubs.len() {
            return Err(ProtocolError::Config(format!("group size {size} with {} hubs", hubs.len())));
        }
        let members = hubs.iter().copied().take(size).collect();
        Ok(Kmg { members, hubs, cache: BTreeMap::new(), forwarded: 0 })
    }

    pub fn is_member(&self, n: NodeId) -> bool {
        self.members.contains(&n)
    }

    /// Requests routed through another member so far.
    pub fn forwarded(&self) -> u64 {
        self.forwarded
    }

    pub fn keygen(&mut self, requester: NodeId, scope: KeyScope, id: &Hash32) -> Result<KeyGrant> {
        if !self.hubs.contains(&requester) {
            return Err(ProtocolError::NotHub(requester));
        }
        let via = if self.members.contains(&requester) {
            requester
        } else {
            self.forwarded += 1;
            *self.members.iter().next().expect("nonempty group")
        };
        let pair = self
            .cache
            .entry((scope, *id))
            .or_insert_with(|| MockKeypair::derive(scope, &[b"kmg".as_slice(), id.as_bytes()].concat()))
            .clone();
        Ok(KeyGrant { pair, via })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaymentStateRecord {
    pub tid: Hash32,
    pub theta: bool,
    pub tu_states: BTreeMap<Hash32, bool>,
}

impl PaymentStateRecord {
    pub fn new(tid: Hash32) -> Self {
        PaymentStateRecord { tid, theta: false, tu_states: BTreeMap::new() }
    }

    pub fn issue(&mut self, tuid: Hash32) {
        self.tu_states.insert(tuid, false);
        self.refresh();
    }

    /// Marks a unit acknowledged; false when it was already set or unknown.
    pub fn ack(&mut self, tuid: &Hash32) -> bool {
        match self.tu_states.get_mut(tuid) {
            Some(s) if !*s => {
                *s = true;
                self.refresh();
                true
            }
            _ => false,
        }
    }

    fn refresh(&mut self) {
        self.theta = !self.tu_states.is_empty() && self.tu_states.values().all(|&s| s);
    }

    pub fn is_consistent(&self) -> bool {
        self.theta == (!self.tu_states.is_empty() && self.tu_states.values().all(|&s| s))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = self.tid.0.to_vec();
        b.push(u8::from(self.theta));
        for (t, s) in &self.tu_states {
            b.extend_from_slice(t.as_bytes());
            b.push(u8::from(*s));
        }
        b
    }
}

/// Counter with a cap on increments per trailing second.
#[derive(Clone, Debug)]
pub struct MonotonicCounter {
    value: u64,
    rate_cap: usize,
    recent: VecDeque<f64>,
}

impl MonotonicCounter {
    pub fn new(rate_cap: usize) -> Self {
        MonotonicCounter { value: 0, rate_cap, recent: VecDeque::new() }
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn increment(&mut self, now: f64) -> Result<u64> {
        while self.recent.front().is_some_and(|&t| now - t >= 1.0) {
            self.recent.pop_front();
        }
        if self.recent.len() >= self.rate_cap {
            return Err(ProtocolError::RateLimited);
        }
        self.recent.push_back(now);
        self.value += 1;
        Ok(self.value)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateUpdate {
    pub tid: Hash32,
    pub tuid: Option<Hash32>,
    pub theta: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub hub: NodeId,
    pub counter: u64,
    pub updates: Vec<StateUpdate>,
}

/// Collects a hub's state updates and commits them once per window, each
/// commit consuming one counter increment.
#[derive(Clone, Debug)]
pub struct BatchCommitter {
    hub: NodeId,
    window: f64,
    counter: MonotonicCounter,
    pending: Vec<StateUpdate>,
    opened_at: Option<f64>,
    last_applied: u64,
    sealed: BTreeMap<Hash32, PaymentStateRecord>,
}

impl BatchCommitter {
    pub fn new(hub: NodeId, window: f64, rate_cap: usize) -> Self {
        BatchCommitter {
            hub,
            window,
            counter: MonotonicCounter::new(rate_cap),
            pending: Vec::new(),
            opened_at: None,
            last_applied: 0,
            sealed: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, update: StateUpdate, now: f64) {
        if self.pending.is_empty() {
            self.opened_at = Some(now);
        }
        self.pending.push(update);
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn due(&self, now: f64) -> bool {
        self.opened_at.is_some_and(|t| now - t >= self.window - 1e-12)
    }

    /// Cuts a batch when the window has elapsed and updates are pending.
    pub fn commit(&mut self, now: f64) -> Result<Option<Batch>> {
        if self.pending.is_empty() || !self.due(now) {
            return Ok(None);
        }
        let counter = self.counter.increment(now)?;
        self.opened_at = None;
        Ok(Some(Batch { hub: self.hub, counter, updates: std::mem::take(&mut self.pending) }))
    }

    pub fn apply(&mut self, batch: &Batch) -> Result<()> {
        if batch.counter <= self.last_applied {
            return Err(ProtocolError::StaleBatch { got: batch.counter, last: self.last_applied });
        }
        for u in &batch.updates {
            let rec = self.sealed.entry(u.tid).or_insert_with(|| PaymentStateRecord::new(u.tid));
            match u.tuid {
                Some(t) => {
                    rec.tu_states.insert(t, u.theta);
                }
                None => rec.theta = u.theta,
            }
        }
        self.last_applied = batch.counter;
        Ok(())
    }

    pub fn counter(&self) -> u64 {
        self.counter.value()
    }

    pub fn sealed(&self, tid: &Hash32) -> Option<&PaymentStateRecord> {
        self.sealed.get(tid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(s: &str) -> Hash32 {
        digest(&[s.as_bytes()])
    }

    #[test]
    fn encryption_round_trip_and_wrong_key() {
        let a = MockKeypair::derive(KeyScope::Transaction, b"a");
        let b = MockKeypair::derive(KeyScope::Transaction, b"b");
        let ct = encrypt(&a.pk, b"hello payment");
        assert_eq!(ct.leak_len(), 13);
        assert_ne!(ct.payload, b"hello payment");
        assert_eq!(decrypt(a.sk(), &ct).unwrap(), b"hello payment");
        assert_eq!(decrypt(b.sk(), &ct), Err(ProtocolError::WrongKey));
        let mut bad = ct.clone();
        bad.payload[0] ^= 1;
        assert_eq!(decrypt(a.sk(), &bad), Err(ProtocolError::Tampered));
    }

    #[test]
    fn install_and_resume() {
        let mut g = Gatt::new(7);
        let p = NodeId(0);
        assert_eq!(g.install(p, 7, Program::Routing), Err(ProtocolError::Unregistered(p)));
        g.register(p, true);
        assert_eq!(g.install(p, 3, Program::Routing), Err(ProtocolError::SessionMismatch { idx: 3, sid: 7 }));
        let e1 = g.install(p, 7, Program::Routing).unwrap();
        let e2 = g.install(p, 7, Program::Routing).unwrap();
        assert_ne!(e1, e2);
        let (o1, a1) = g.resume(p, e1, b"x").unwrap();
        let (o2, a2) = g.resume(p, e1, b"y").unwrap();
        assert_eq!(&o1[..8], &1u64.to_le_bytes());
        assert_eq!(&o2[..8], &2u64.to_le_bytes());
        assert!(g.verify(&g.mpk(), &a1) && g.verify(&g.mpk(), &a2));
        let mut t = a2.clone();
        t.outp[9] ^= 0x10;
        assert!(!g.verify(&g.mpk(), &t));
        assert_eq!(g.resume(p, h("nope"), b"x").unwrap_err(), ProtocolError::UnknownEnclave(h("nope")));
        assert!(g.resume(NodeId(9), e1, b"x").is_err());
        // A dishonest party may pick any index.
        g.register(NodeId(1), false);
        assert!(g.install(NodeId(1), 99, Program::Counter).is_ok());
    }

    #[test]
    fn foreign_processor_key_rejected() {
        let mut g = Gatt::new(1);
        g.register(NodeId(0), true);
        let e = g.install(NodeId(0), 1, Program::Counter).unwrap();
        let (_, att) = g.resume(NodeId(0), e, b"").unwrap();
        assert!(!g.verify(&Gatt::new(2).mpk(), &att));
        let ias = Ias::default();
        let proof = ias.prove(&g, &g.mpk(), &att);
        assert!(proof.b && ias.check(&proof));
        let forged = VerificationProof { b: true, ..ias.prove(&g, &Gatt::new(2).mpk(), &att) };
        assert!(!ias.check(&forged));
    }

    #[test]
    fn ledger_append_and_read() {
        let mut l = Ledger::default();
        let t = h("t");
        assert!(l.read(&t).is_none());
        assert_eq!(l.append(t, b"open", NodeId(0), payment_succ), AppendResult::Success);
        assert_eq!(l.append(t, b"open", NodeId(1), payment_succ), AppendResult::Failure);
        assert_eq!(l.read(&t).unwrap().inp, b"open");
        assert_eq!(l.append(t, b"settled", NodeId(1), payment_succ), AppendResult::Success);
        assert_eq!(l.append(t, b"rolled_back", NodeId(1), payment_succ), AppendResult::Failure);
        let e = l.read(&t).unwrap();
        assert_eq!((e.inp.as_slice(), e.appender, e.seq), (&b"settled"[..], NodeId(1), 1));
        assert_eq!(l.append(h("u"), b"settled", NodeId(0), payment_succ), AppendResult::Failure);
    }

    #[test]
    fn kmg_caches_and_forwards() {
        let mut k = Kmg::new([NodeId(0), NodeId(1), NodeId(2)], 1).unwrap();
        let t = h("tid");
        let a = k.keygen(NodeId(0), KeyScope::Transaction, &t).unwrap();
        let b = k.keygen(NodeId(2), KeyScope::Transaction, &t).unwrap();
        assert_eq!(a.pair, b.pair);
        assert_eq!((a.via, b.via, k.forwarded()), (NodeId(0), NodeId(0), 1));
        let other = k.keygen(NodeId(0), KeyScope::Transaction, &h("other")).unwrap();
        assert_ne!(other.pair.pk, a.pair.pk);
        let ct = encrypt(&a.pair.pk, b"d");
        assert_eq!(decrypt(b.pair.sk(), &ct).unwrap(), b"d");
        assert_eq!(k.keygen(NodeId(5), KeyScope::Transaction, &t).unwrap_err(), ProtocolError::NotHub(NodeId(5)));
        assert!(Kmg::new([NodeId(0)], 2).is_err());
    }

    #[test]
    fn batching_and_counter() {
        let mut b = BatchCommitter::new(NodeId(0), 0.1, 10);
        assert_eq!(b.commit(1.0).unwrap(), None);
        for i in 0..10 {
            b.push(StateUpdate { tid: h("t"), tuid: Some(h(&i.to_string())), theta: true }, 1.0 + i as f64 * 0.005);
        }
        assert_eq!(b.commit(1.05).unwrap(), None);
        let batch = b.commit(1.1).unwrap().unwrap();
        assert_eq!((batch.counter, batch.updates.len(), b.counter()), (1, 10, 1));
        b.apply(&batch).unwrap();
        assert_eq!(b.sealed(&h("t")).unwrap().tu_states.len(), 10);
        assert_eq!(b.apply(&batch), Err(ProtocolError::StaleBatch { got: 1, last: 1 }));
        assert_eq!(b.commit(2.0).unwrap(), None);
        assert_eq!(b.counter(), 1);
    }

    #[test]
    fn counter_rate_cap() {
        let mut c = MonotonicCounter::new(2);
        assert_eq!(c.increment(0.0).unwrap(), 1);
        assert_eq!(c.increment(0.5).unwrap(), 2);
        assert_eq!(c.increment(0.9), Err(ProtocolError::RateLimited));
        assert_eq!(c.increment(1.0).unwrap(), 3);
    }

    #[test]
    fn theta_is_conjunction() {
        let mut r = PaymentStateRecord::new(h("t"));
        assert!(!r.theta);
        r.issue(h("a"));
        r.issue(h("b"));
        assert!(r.ack(&h("a")) && !r.theta);
        assert!(!r.ack(&h("a")));
        assert!(r.ack(&h("b")) && r.theta && r.is_consistent());
    }
}
