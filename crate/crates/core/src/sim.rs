//! Discrete-event simulation of every role over the key network.
//!
//! Roles are single-threaded actors that react to delivered messages.
//! Events are ordered by `(simulated time, insertion order)`, so a fixed
//! configuration and seed always replay the same transcript. Wall-clock
//! time is measured per message handler for benchmark reports only and
//! never enters the transcript.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{FieldElement, FieldRef};
use crate::keynet::{KeyNetwork, SecureChannels, SecureEnvelope};
use crate::random::{RandomSource, SeededRandom};
use crate::renewal::{
    apply_renewal, gen_renewal, renewal_deltas, track_degrees, verify_renewal, GroupRef, RenewalPacket, RenewalShares,
};
use crate::scenario::{PhaseKind, Resolved, ScenarioConfig};
use crate::spss::{
    precompute_contributions, spss_recover, spss_register, spss_request, MaskedResponse, Password,
    PrecomputeContribution, ReconstructionRequest, ShareFragment, SpssParams,
};
use crate::stores::{CalculatorStore, HolderStore, RecordKind, VerifierStore};
use crate::tpv::{
    calc_register, calc_tag, cs_digest, judge_check, judge_refute, verifier_accept, Outcome, Phase, TpvMode,
    VerdictEvent,
};
use crate::wire::{
    get_contribution, get_fragment, get_packet, get_renewal_shares, get_request, get_response, put_contribution,
    put_fragment, put_packet, put_renewal_shares, put_request, put_response, Reader, Writer,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Owner,
    Calculator,
    Verifier,
    EndUser,
    Holder(u64),
}

impl Role {
    pub fn name(self) -> String {
        match self {
            Role::Owner => "owner".into(),
            Role::Calculator => "calculator".into(),
            Role::Verifier => "verifier".into(),
            Role::EndUser => "enduser".into(),
            Role::Holder(i) => format!("holder{i}"),
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        Some(match s {
            "owner" => Role::Owner,
            "calculator" => Role::Calculator,
            "verifier" => Role::Verifier,
            "enduser" => Role::EndUser,
            _ => Role::Holder(s.strip_prefix("holder")?.parse().ok()?),
        })
    }
}

/// Where wall-clock time is booked in benchmark reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BenchPhase {
    Registration,
    Communication,
    Reconstruction,
    Renewal,
    Verification,
}

impl BenchPhase {
    pub const REPORTED: [BenchPhase; 4] = [
        BenchPhase::Registration,
        BenchPhase::Communication,
        BenchPhase::Renewal,
        BenchPhase::Reconstruction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchPhase::Registration => "registration",
            BenchPhase::Communication => "communication",
            BenchPhase::Reconstruction => "reconstruction",
            BenchPhase::Renewal => "renewal",
            BenchPhase::Verification => "verification",
        }
    }
}

fn phase_code(p: Phase) -> u8 {
    p as u8
}

fn phase_from(c: u8) -> Result<Phase> {
    Ok(match c {
        0 => Phase::Registration,
        1 => Phase::Reconstruction,
        2 => Phase::IntegrityCheck,
        3 => Phase::Refutation,
        4 => Phase::Renewal,
        _ => return Err(Error::Malformed(format!("phase code {c}"))),
    })
}

/// Protocol messages. The first payload byte is the kind.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Msg {
    RegisterRequest { data: Vec<u8>, password: Vec<u8> },
    Fragment(ShareFragment),
    StoredAck { id: u64 },
    RecordTag { id: u64, t1: u64, tag: Vec<u8> },
    Registered { id: u64, t1: u64 },
    CsRecord { id: u64, t1: u64, digest: Vec<u8> },
    ReconstructRequest { id: u64, password: Vec<u8> },
    Ping { session: u64, id: u64 },
    Pong { session: u64, blocks: u64, watermark: u64 },
    PrecomputeStart { session: u64, first_round: u64, count: u64, participants: Vec<u64> },
    PrecomputeBatch { session: u64, contributions: Vec<PrecomputeContribution> },
    PrecomputeDone { session: u64 },
    Request { session: u64, req: ReconstructionRequest },
    Response { session: u64, resp: MaskedResponse },
    Recovered { id: u64, data: Vec<u8> },
    Failed { id: u64, phase: Phase, outcome: Outcome, reason: String },
    Deliver { id: u64, t1: u64, data: Vec<u8> },
    CheckRequest { id: u64, t1: u64, data: Vec<u8>, refute: bool },
    TagCheck { id: u64, t1: u64, tag: Option<Vec<u8>>, refute: bool },
    CsCheck { id: u64, t1: u64, digest: Vec<u8>, refute: bool },
    Verdict { id: u64, phase: Phase, outcome: Outcome },
    Claim { id: u64, t1: u64, data: Vec<u8> },
    RenewStart { round: u64 },
    RenewOffer { packet: RenewalPacket, shares: RenewalShares },
    RenewVote { round: u64, accused: Option<u64> },
    RenewCommit { round: u64, apply: bool },
}

const KIND_NAMES: [&str; 26] = [
    "register-request",
    "fragment",
    "stored-ack",
    "record-tag",
    "registered",
    "cs-record",
    "reconstruct-request",
    "ping",
    "pong",
    "precompute-start",
    "precompute-batch",
    "precompute-done",
    "request",
    "response",
    "recovered",
    "failed",
    "deliver",
    "check-request",
    "tag-check",
    "cs-check",
    "verdict",
    "claim",
    "renew-start",
    "renew-offer",
    "renew-vote",
    "renew-commit",
];

fn kind_name(kind: u8) -> &'static str {
    KIND_NAMES.get(kind as usize).copied().unwrap_or("unknown")
}

fn kind_bench(kind: u8) -> BenchPhase {
    match kind {
        0..=5 => BenchPhase::Registration,
        7..=11 => BenchPhase::Communication,
        6 | 12..=16 => BenchPhase::Reconstruction,
        22..=25 => BenchPhase::Renewal,
        _ => BenchPhase::Verification,
    }
}

fn opt_u64(w: &mut Writer, v: Option<u64>) {
    match v {
        Some(x) => w.u8(1).u64(x),
        None => w.u8(0),
    };
}

impl Msg {
    pub fn kind(&self) -> u8 {
        match self {
            Msg::RegisterRequest { .. } => 0,
            Msg::Fragment(_) => 1,
            Msg::StoredAck { .. } => 2,
            Msg::RecordTag { .. } => 3,
            Msg::Registered { .. } => 4,
            Msg::CsRecord { .. } => 5,
            Msg::ReconstructRequest { .. } => 6,
            Msg::Ping { .. } => 7,
            Msg::Pong { .. } => 8,
            Msg::PrecomputeStart { .. } => 9,
            Msg::PrecomputeBatch { .. } => 10,
            Msg::PrecomputeDone { .. } => 11,
            Msg::Request { .. } => 12,
            Msg::Response { .. } => 13,
            Msg::Recovered { .. } => 14,
            Msg::Failed { .. } => 15,
            Msg::Deliver { .. } => 16,
            Msg::CheckRequest { .. } => 17,
            Msg::TagCheck { .. } => 18,
            Msg::CsCheck { .. } => 19,
            Msg::Verdict { .. } => 20,
            Msg::Claim { .. } => 21,
            Msg::RenewStart { .. } => 22,
            Msg::RenewOffer { .. } => 23,
            Msg::RenewVote { .. } => 24,
            Msg::RenewCommit { .. } => 25,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u8(self.kind());
        match self {
            Msg::RegisterRequest { data, password } => {
                w.bytes(data).bytes(password);
            }
            Msg::Fragment(f) => put_fragment(&mut w, f),
            Msg::StoredAck { id } => {
                w.u64(*id);
            }
            Msg::RecordTag { id, t1, tag } => {
                w.u64(*id).u64(*t1).raw(tag);
            }
            Msg::Registered { id, t1 } => {
                w.u64(*id).u64(*t1);
            }
            Msg::CsRecord { id, t1, digest } => {
                w.u64(*id).u64(*t1).raw(digest);
            }
            Msg::ReconstructRequest { id, password } => {
                w.u64(*id).bytes(password);
            }
            Msg::Ping { session, id } => {
                w.u64(*session).u64(*id);
            }
            Msg::Pong { session, blocks, watermark } => {
                w.u64(*session).u64(*blocks).u64(*watermark);
            }
            Msg::PrecomputeStart { session, first_round, count, participants } => {
                w.u64(*session).u64(*first_round).u64(*count).u64s(participants);
            }
            Msg::PrecomputeBatch { session, contributions } => {
                w.u64(*session).u32(contributions.len() as u32);
                for c in contributions {
                    put_contribution(&mut w, c);
                }
            }
            Msg::PrecomputeDone { session } => {
                w.u64(*session);
            }
            Msg::Request { session, req } => {
                w.u64(*session);
                put_request(&mut w, req);
            }
            Msg::Response { session, resp } => {
                w.u64(*session);
                put_response(&mut w, resp);
            }
            Msg::Recovered { id, data } => {
                w.u64(*id).bytes(data);
            }
            Msg::Failed { id, phase, outcome, reason } => {
                w.u64(*id).u8(phase_code(*phase)).u8(outcome.code()).str(reason);
            }
            Msg::Deliver { id, t1, data } | Msg::Claim { id, t1, data } => {
                w.u64(*id).u64(*t1).bytes(data);
            }
            Msg::CheckRequest { id, t1, data, refute } => {
                w.u64(*id).u64(*t1).u8(*refute as u8).bytes(data);
            }
            Msg::TagCheck { id, t1, tag, refute } => {
                w.u64(*id).u64(*t1).u8(*refute as u8);
                match tag {
                    Some(t) => w.u8(1).bytes(t),
                    None => w.u8(0),
                };
            }
            Msg::CsCheck { id, t1, digest, refute } => {
                w.u64(*id).u64(*t1).u8(*refute as u8).bytes(digest);
            }
            Msg::Verdict { id, phase, outcome } => {
                w.u64(*id).u8(phase_code(*phase)).u8(outcome.code());
            }
            Msg::RenewStart { round } => {
                w.u64(*round);
            }
            Msg::RenewOffer { packet, shares } => {
                put_packet(&mut w, packet);
                put_renewal_shares(&mut w, shares);
            }
            Msg::RenewVote { round, accused } => {
                w.u64(*round);
                opt_u64(&mut w, *accused);
            }
            Msg::RenewCommit { round, apply } => {
                w.u64(*round).u8(*apply as u8);
            }
        }
        w.finish()
    }

    /// Decode a payload. `tag_bytes` is the fixed size of a verifier
    /// record's tag or digest.
    pub fn decode(bytes: &[u8], field: &FieldRef, tag_bytes: usize) -> Result<Msg> {
        let mut r = Reader::new(bytes);
        let flag = |v: u8| -> Result<bool> {
            match v {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::Malformed(format!("flag byte {v}"))),
            }
        };
        let msg = match r.u8()? {
            0 => Msg::RegisterRequest {
                data: r.bytes()?.to_vec(),
                password: r.bytes()?.to_vec(),
            },
            1 => Msg::Fragment(get_fragment(&mut r, field)?),
            2 => Msg::StoredAck { id: r.u64()? },
            3 => Msg::RecordTag {
                id: r.u64()?,
                t1: r.u64()?,
                tag: r.take(tag_bytes)?.to_vec(),
            },
            4 => Msg::Registered { id: r.u64()?, t1: r.u64()? },
            5 => Msg::CsRecord {
                id: r.u64()?,
                t1: r.u64()?,
                digest: r.take(tag_bytes)?.to_vec(),
            },
            6 => Msg::ReconstructRequest {
                id: r.u64()?,
                password: r.bytes()?.to_vec(),
            },
            7 => Msg::Ping {
                session: r.u64()?,
                id: r.u64()?,
            },
            8 => Msg::Pong {
                session: r.u64()?,
                blocks: r.u64()?,
                watermark: r.u64()?,
            },
            9 => Msg::PrecomputeStart {
                session: r.u64()?,
                first_round: r.u64()?,
                count: r.u64()?,
                participants: r.u64s()?,
            },
            10 => {
                let session = r.u64()?;
                let n = r.u32()? as usize;
                let per = 24 + 2 * field.byte_len();
                if n.saturating_mul(per) > r.remaining() {
                    return Err(Error::Malformed("contribution count overruns message".into()));
                }
                let contributions = (0..n).map(|_| get_contribution(&mut r, field)).collect::<Result<_>>()?;
                Msg::PrecomputeBatch { session, contributions }
            }
            11 => Msg::PrecomputeDone { session: r.u64()? },
            12 => Msg::Request {
                session: r.u64()?,
                req: get_request(&mut r, field)?,
            },
            13 => Msg::Response {
                session: r.u64()?,
                resp: get_response(&mut r, field)?,
            },
            14 => Msg::Recovered {
                id: r.u64()?,
                data: r.bytes()?.to_vec(),
            },
            15 => Msg::Failed {
                id: r.u64()?,
                phase: phase_from(r.u8()?)?,
                outcome: Outcome::from_code(r.u8()?)?,
                reason: r.str()?,
            },
            16 => Msg::Deliver {
                id: r.u64()?,
                t1: r.u64()?,
                data: r.bytes()?.to_vec(),
            },
            17 => {
                let (id, t1, refute) = (r.u64()?, r.u64()?, flag(r.u8()?)?);
                Msg::CheckRequest {
                    id,
                    t1,
                    refute,
                    data: r.bytes()?.to_vec(),
                }
            }
            18 => {
                let (id, t1, refute) = (r.u64()?, r.u64()?, flag(r.u8()?)?);
                let tag = if flag(r.u8()?)? { Some(r.bytes()?.to_vec()) } else { None };
                Msg::TagCheck { id, t1, tag, refute }
            }
            19 => {
                let (id, t1, refute) = (r.u64()?, r.u64()?, flag(r.u8()?)?);
                Msg::CsCheck {
                    id,
                    t1,
                    refute,
                    digest: r.bytes()?.to_vec(),
                }
            }
            20 => Msg::Verdict {
                id: r.u64()?,
                phase: phase_from(r.u8()?)?,
                outcome: Outcome::from_code(r.u8()?)?,
            },
            21 => Msg::Claim {
                id: r.u64()?,
                t1: r.u64()?,
                data: r.bytes()?.to_vec(),
            },
            22 => Msg::RenewStart { round: r.u64()? },
            23 => Msg::RenewOffer {
                packet: get_packet(&mut r)?,
                shares: get_renewal_shares(&mut r, field)?,
            },
            24 => {
                let round = r.u64()?;
                let accused = if flag(r.u8()?)? { Some(r.u64()?) } else { None };
                Msg::RenewVote { round, accused }
            }
            25 => Msg::RenewCommit {
                round: r.u64()?,
                apply: flag(r.u8()?)?,
            },
            k => return Err(Error::Malformed(format!("message kind {k}"))),
        };
        r.done()?;
        Ok(msg)
    }

    /// Transcript summary: identifiers only, never payload contents.
    fn summary(&self) -> String {
        match self {
            Msg::RegisterRequest { data, .. } => format!("len={}", data.len()),
            Msg::Fragment(f) => format!("id={} blocks={}", f.secret_id, f.data_shares.len()),
            Msg::StoredAck { id } | Msg::Registered { id, .. } | Msg::Recovered { id, .. } => format!("id={id}"),
            Msg::RecordTag { id, t1, .. } | Msg::CsRecord { id, t1, .. } => format!("id={id} t1={t1}"),
            Msg::ReconstructRequest { id, .. } => format!("id={id}"),
            Msg::Ping { session, id } => format!("session={session} id={id}"),
            Msg::Pong { session, blocks, .. } => format!("session={session} blocks={blocks}"),
            Msg::PrecomputeStart { session, first_round, count, participants } => {
                format!("session={session} rounds={first_round}+{count} participants={participants:?}")
            }
            Msg::PrecomputeBatch { session, contributions } => {
                format!("session={session} contributions={}", contributions.len())
            }
            Msg::PrecomputeDone { session } => format!("session={session}"),
            Msg::Request { session, req } => format!("session={session} subset={:?}", req.subset),
            Msg::Response { session, resp } => format!("session={session} values={}", resp.values.len()),
            Msg::Failed { id, phase, outcome, .. } => format!("id={id} phase={phase} outcome={outcome}"),
            Msg::Deliver { id, t1, .. } | Msg::Claim { id, t1, .. } => format!("id={id} t1={t1}"),
            Msg::CheckRequest { id, t1, refute, .. }
            | Msg::TagCheck { id, t1, refute, .. }
            | Msg::CsCheck { id, t1, refute, .. } => format!("id={id} t1={t1} refute={refute}"),
            Msg::Verdict { id, phase, outcome } => format!("id={id} phase={phase} outcome={outcome}"),
            Msg::RenewStart { round } | Msg::RenewCommit { round, .. } => format!("round={round}"),
            Msg::RenewOffer { packet, .. } => format!("round={} tracks={}", packet.round, packet.commitments.len()),
            Msg::RenewVote { round, accused } => format!("round={round} accused={accused:?}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Timeout {
    Registration(u64),
    Ping(u64),
    Precompute(u64),
    Respond(u64),
    RenewVotes(u64),
}

enum Event {
    Deliver {
        from: Role,
        to: Role,
        env: Option<SecureEnvelope>,
        local: Vec<u8>,
    },
    Send {
        from: Role,
        to: Role,
        payload: Vec<u8>,
    },
    Timeout(Timeout),
}

struct OwnerState {
    data: Vec<u8>,
    password: Vec<u8>,
    registered: Option<(u64, u64)>,
}

struct RegPending {
    id: u64,
    t1: u64,
    acks: BTreeSet<u64>,
    done: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    Ping,
    Precompute,
    Respond,
    Finished,
}

struct RecSession {
    session: u64,
    id: u64,
    attempt: Password,
    stage: Stage,
    pongs: BTreeMap<u64, (u64, u64)>,
    participants: Vec<u64>,
    subset: Vec<u64>,
    first_round: u64,
    count: u64,
    done_from: BTreeSet<u64>,
    responses: Vec<MaskedResponse>,
}

struct RenewSession {
    round: u64,
    votes: BTreeMap<u64, Option<u64>>,
    finished: bool,
}

struct CalcState {
    store: CalculatorStore,
    next_id: u64,
    next_round: u64,
    next_session: u64,
    next_renewal: u64,
    reg: Option<RegPending>,
    rec: Option<RecSession>,
    renew: Option<RenewSession>,
}

#[derive(Default)]
struct PrePending {
    start: Option<(u64, u64, Vec<u64>)>,
    batches: BTreeMap<u64, Vec<PrecomputeContribution>>,
}

#[derive(Default)]
struct RenewPending {
    degrees: Option<Vec<usize>>,
    received: BTreeMap<u64, (RenewalPacket, RenewalShares)>,
    deltas: Option<Vec<FieldElement>>,
    voted: bool,
}

struct HolderState {
    store: HolderStore,
    pre: BTreeMap<u64, PrePending>,
    renew: BTreeMap<u64, RenewPending>,
}

#[derive(Default)]
struct EndUserState {
    received: Option<(u64, u64, Vec<u8>)>,
}

/// Per-run results.
#[derive(Clone, Debug)]
pub struct SimReport {
    pub verdicts: Vec<VerdictEvent>,
    pub transcript: String,
    pub transcript_id: String,
    /// One entry per reconstruction that reached the owner: whether the
    /// recovered data equal the registered data bit for bit.
    pub recovered_exact: Vec<bool>,
    pub wall: BTreeMap<BenchPhase, Duration>,
    pub exit_code: i32,
}

/// 0 when every verdict is what an honest run produces or the owner won a
/// refutation, 2 on any abort, 1 otherwise.
pub fn exit_code(verdicts: &[VerdictEvent]) -> i32 {
    if verdicts.iter().any(|v| v.outcome == Outcome::Abort) {
        2
    } else if verdicts
        .iter()
        .all(|v| matches!(v.outcome, Outcome::Success | Outcome::RefutationSuccess))
    {
        0
    } else {
        1
    }
}

pub struct Simulation {
    cfg: ScenarioConfig,
    params: SpssParams,
    group: Option<GroupRef>,
    net: KeyNetwork,
    channels: SecureChannels,
    nodes: BTreeMap<Role, usize>,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<(u64, u64)>>,
    events: BTreeMap<u64, Event>,
    last_delivery: BTreeMap<(Role, Role), u64>,
    sent_count: BTreeMap<(Role, Role), u64>,
    phase: Option<PhaseKind>,
    transcript: String,
    verdicts: Vec<VerdictEvent>,
    recovered_exact: Vec<bool>,
    wall: BTreeMap<BenchPhase, Duration>,
    received: BTreeMap<(Role, &'static str), u64>,
    attack_rng: SeededRandom,
    owner: OwnerState,
    calc: CalcState,
    holders: BTreeMap<u64, HolderState>,
    verifier: VerifierStore,
    enduser: EndUserState,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self> {
        let Resolved { field, group, params } = cfg.resolve()?;
        let topo = &cfg.topology;
        let mut nodes = BTreeMap::new();
        nodes.insert(Role::Owner, topo.node(&cfg.placement.owner)?);
        nodes.insert(Role::Calculator, topo.node(&cfg.placement.calculator)?);
        nodes.insert(Role::Verifier, topo.node(&cfg.placement.verifier)?);
        nodes.insert(Role::EndUser, topo.node(&cfg.placement.end_user)?);
        for (i, n) in cfg.placement.holders.iter().enumerate() {
            nodes.insert(Role::Holder(i as u64 + 1), topo.node(n)?);
        }
        let net = KeyNetwork::new(cfg.topology.clone(), cfg.seed)?;
        let dir = cfg.output.store_dir.clone();
        if let Some(d) = &dir {
            std::fs::create_dir_all(d)?;
        }
        let calc_store = match &dir {
            Some(d) => CalculatorStore::open(&d.join("calculator.bin"), cfg.tpv.scheme, cfg.tpv.k)?,
            None => CalculatorStore::in_memory(cfg.tpv.scheme, cfg.tpv.k),
        };
        let verifier = match &dir {
            Some(d) => VerifierStore::open(&d.join("verifier.log"))?,
            None => VerifierStore::in_memory(),
        };
        let mut holders = BTreeMap::new();
        for i in 1..=cfg.holders as u64 {
            let store = match &dir {
                Some(d) => HolderStore::open(&d.join(format!("holder-{i}")), i, field.clone())?,
                None => HolderStore::in_memory(i, field.clone()),
            };
            holders.insert(
                i,
                HolderState {
                    store,
                    pre: BTreeMap::new(),
                    renew: BTreeMap::new(),
                },
            );
        }
        let data = match &cfg.data.content {
            Some(c) => c.as_bytes().to_vec(),
            None => SeededRandom::derive(cfg.seed, "data").next_bytes(cfg.data.size_bytes)?,
        };
        // A persisted verifier log fixes the epoch: clocks resume after it.
        let epoch_us = verifier.records().iter().map(|r| r.t2 + 1).max().unwrap_or(0) * 1000;
        let next_id = calc_store.records().map(|r| r.id + 1).max().unwrap_or(0);
        let mut sim = Simulation {
            params,
            group,
            channels: SecureChannels::new(cfg.channel),
            nodes,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            events: BTreeMap::new(),
            last_delivery: BTreeMap::new(),
            sent_count: BTreeMap::new(),
            phase: None,
            transcript: String::new(),
            verdicts: Vec::new(),
            recovered_exact: Vec::new(),
            wall: BTreeMap::new(),
            received: BTreeMap::new(),
            attack_rng: SeededRandom::derive(cfg.seed, "attacks"),
            owner: OwnerState {
                password: cfg.data.password.as_bytes().to_vec(),
                data,
                registered: None,
            },
            calc: CalcState {
                store: calc_store,
                next_id,
                next_round: 0,
                next_session: 0,
                next_renewal: 0,
                reg: None,
                rec: None,
                renew: None,
            },
            holders,
            verifier,
            enduser: EndUserState::default(),
            net,
            cfg,
        };
        sim.now = sim.cfg.timing.warmup_us;
        sim.net.advance_to(sim.now);
        sim.clock_base(epoch_us);
        let header = format!(
            "scenario seed={} field={}bits group={} threshold={}/{} tpv={:?}/{:?}/k={} channel={:?}/k={}",
            sim.cfg.seed,
            sim.params.field().bits(),
            sim.group.as_ref().map(|g| g.name().to_string()).unwrap_or_else(|| "none".into()),
            sim.cfg.threshold,
            sim.cfg.holders,
            sim.cfg.tpv.mode,
            sim.cfg.tpv.scheme,
            sim.cfg.tpv.k,
            sim.cfg.channel.scheme,
            sim.cfg.channel.k
        );
        sim.log(&header);
        Ok(sim)
    }

    fn clock_base(&mut self, epoch_us: u64) {
        if epoch_us > self.now {
            self.now = epoch_us;
            self.net.advance_to(epoch_us);
        }
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn params(&self) -> &SpssParams {
        &self.params
    }

    pub fn network(&self) -> &KeyNetwork {
        &self.net
    }

    pub fn calculator_store(&self) -> &CalculatorStore {
        &self.calc.store
    }

    pub fn verifier_store(&self) -> &VerifierStore {
        &self.verifier
    }

    pub fn holder_store(&self, i: u64) -> Option<&HolderStore> {
        self.holders.get(&i).map(|h| &h.store)
    }

    pub fn owner_data(&self) -> &[u8] {
        &self.owner.data
    }

    pub fn registration(&self) -> Option<(u64, u64)> {
        self.owner.registered
    }

    pub fn end_user_received(&self) -> Option<&(u64, u64, Vec<u8>)> {
        self.enduser.received.as_ref()
    }

    /// Payload bytes a role received during phases of the given name.
    pub fn received_bytes(&self, role: Role, phase: PhaseKind) -> u64 {
        self.received.get(&(role, phase.name())).copied().unwrap_or(0)
    }

    pub fn now_us(&self) -> u64 {
        self.now
    }

    fn log(&mut self, line: &str) {
        let _ = writeln!(self.transcript, "{:>14} {line}", self.now);
    }

    fn clock_ms(&self, role: Role) -> u64 {
        let skew = self.cfg.clock_skew_us.get(&role.name()).copied().unwrap_or(0);
        (self.now as i64 + skew).max(0) as u64 / 1000
    }

    fn tag_bytes(&self) -> usize {
        match self.cfg.tpv.mode {
            TpvMode::Its => self.cfg.tpv.k.div_ceil(8),
            TpvMode::Computational => self.cfg.tpv.digest_bits.div_ceil(8),
        }
    }

    fn offline(&self, role: Role) -> bool {
        match role {
            Role::Holder(i) => {
                self.phase != Some(PhaseKind::Register) && self.cfg.attacks.drop_holders.contains(&i)
            }
            _ => false,
        }
    }

    fn schedule(&mut self, at: u64, ev: Event) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse((at, seq)));
        self.events.insert(seq, ev);
    }

    fn emit(&mut self, secret_id: u64, phase: Phase, outcome: Outcome, detail: &str) {
        let v = VerdictEvent {
            secret_id,
            phase,
            outcome,
            detail: detail.replace(' ', "_"),
        };
        self.log(&v.to_string());
        self.verdicts.push(v);
    }

    fn processing_us(&self, len: usize) -> u64 {
        self.cfg.timing.processing_us + self.cfg.timing.processing_us_per_kb * len as u64 / 1024
    }

    fn send(&mut self, from: Role, to: Role, msg: &Msg) {
        let payload = msg.encode();
        self.log(&format!(
            "send {}->{} {} {} bytes={}",
            from.name(),
            to.name(),
            kind_name(msg.kind()),
            msg.summary(),
            payload.len()
        ));
        self.attempt_send(from, to, payload);
    }

    fn attempt_send(&mut self, from: Role, to: Role, payload: Vec<u8>) {
        let (a, b) = (self.nodes[&from], self.nodes[&to]);
        let proc = self.processing_us(payload.len());
        if a == b {
            let at = self.fifo(from, to, self.now + proc);
            self.schedule(
                at,
                Event::Deliver {
                    from,
                    to,
                    env: None,
                    local: payload,
                },
            );
            return;
        }
        let (fname, tname) = (from.name(), to.name());
        let need = self.channels.config().message_key_bytes(&fname, &tname, payload.len());
        match self.net.wait_estimate_us(a, b, need) {
            None => {
                self.log(&format!("undeliverable {fname}->{tname}: key supply cannot cover {need} bytes"));
            }
            Some(0) => match self.channels.secure_send(&mut self.net, &fname, a, &tname, b, &payload) {
                Ok(mut env) => {
                    let n = self.sent_count.entry((from, to)).or_insert(0);
                    *n += 1;
                    let nth = *n;
                    if let Some(tap) = &self.cfg.attacks.bit_flip_channel {
                        if tap.from == fname && tap.to == tname && tap.nth == nth {
                            let bit = self.attack_rng.next_u64() as usize;
                            env.flip_bit(bit);
                            self.log(&format!("tap flipped a ciphertext bit on {fname}->{tname} seq={}", env.seq));
                        }
                    }
                    let topo = self.net.topology();
                    let km = topo.path(a, b).map(|p| topo.path_km(&p)).unwrap_or(0.0);
                    let latency = (km * self.cfg.timing.latency_us_per_km).ceil() as u64;
                    let at = self.fifo(from, to, self.now + latency + proc);
                    self.schedule(
                        at,
                        Event::Deliver {
                            from,
                            to,
                            env: Some(env),
                            local: Vec::new(),
                        },
                    );
                }
                Err(Error::KeySupply { .. }) => {
                    let at = self.now + 1000;
                    self.schedule(at, Event::Send { from, to, payload });
                }
                Err(e) => self.log(&format!("send failed {fname}->{tname}: {e}")),
            },
            Some(wait) => {
                self.log(&format!("wait {fname}->{tname} key={need} bytes for {wait}us"));
                let at = self.now + wait;
                self.schedule(at, Event::Send { from, to, payload });
            }
        }
    }

    /// Deliveries on one directed pair keep their sending order.
    fn fifo(&mut self, from: Role, to: Role, at: u64) -> u64 {
        let last = self.last_delivery.entry((from, to)).or_insert(0);
        let at = at.max(*last + 1);
        *last = at;
        at
    }

    fn set_timeout(&mut self, t: Timeout) {
        let at = self.now + self.cfg.timing.timeout_us;
        self.schedule(at, Event::Timeout(t));
    }

    fn timeout_live(&self, t: Timeout) -> bool {
        let rec = |s: u64, stage: Stage| {
            self.calc
                .rec
                .as_ref()
                .is_some_and(|r| r.session == s && r.stage == stage)
        };
        match t {
            Timeout::Registration(id) => self.calc.reg.as_ref().is_some_and(|r| r.id == id && !r.done),
            Timeout::Ping(s) => rec(s, Stage::Ping),
            Timeout::Precompute(s) => rec(s, Stage::Precompute),
            Timeout::Respond(s) => rec(s, Stage::Respond),
            Timeout::RenewVotes(round) => self.calc.renew.as_ref().is_some_and(|r| r.round == round && !r.finished),
        }
    }

    /// Process events until none remain.
    fn drain(&mut self) {
        while let Some(Reverse((at, seq))) = self.queue.pop() {
            let ev = self.events.remove(&seq).expect("scheduled event");
            if let Event::Timeout(t) = ev {
                if !self.timeout_live(t) {
                    continue;
                }
                self.now = at;
                self.net.advance_to(at);
                self.on_timeout(t);
                continue;
            }
            self.now = at;
            self.net.advance_to(at);
            match ev {
                Event::Send { from, to, payload } => {
                    let started = Instant::now();
                    let kind = payload[0];
                    self.attempt_send(from, to, payload);
                    *self.wall.entry(kind_bench(kind)).or_default() += started.elapsed();
                }
                Event::Deliver { from, to, env, local } => self.deliver(from, to, env, local),
                Event::Timeout(_) => unreachable!(),
            }
        }
    }

    fn deliver(&mut self, from: Role, to: Role, env: Option<SecureEnvelope>, local: Vec<u8>) {
        let started = Instant::now();
        let payload = match env {
            Some(env) => match self.channels.secure_recv(&mut self.net, &env) {
                Ok(p) => p,
                Err(e) => {
                    self.log(&format!("reject {}->{}: {e}", from.name(), to.name()));
                    return;
                }
            },
            None => local,
        };
        let kind = payload[0];
        if self.offline(to) {
            self.log(&format!("drop {}->{} {}: recipient offline", from.name(), to.name(), kind_name(kind)));
            return;
        }
        let msg = match Msg::decode(&payload, self.params.field(), self.tag_bytes()) {
            Ok(m) => m,
            Err(e) => {
                self.log(&format!("malformed {}->{}: {e}", from.name(), to.name()));
                return;
            }
        };
        if let Some(p) = self.phase {
            *self.received.entry((to, p.name())).or_insert(0) += payload.len() as u64;
        }
        self.log(&format!("recv {}->{} {}", from.name(), to.name(), kind_name(kind)));
        self.handle(from, to, msg);
        *self.wall.entry(kind_bench(kind)).or_default() += started.elapsed();
    }

    /// Run one phase to quiescence and return its verdict.
    pub fn run_phase(&mut self, kind: PhaseKind) -> VerdictEvent {
        let before = self.verdicts.len();
        self.phase = Some(kind);
        self.log(&format!("phase {} start", kind.name()));
        let started = Instant::now();
        self.start_phase(kind);
        if kind == PhaseKind::Register {
            *self.wall.entry(BenchPhase::Registration).or_default() += started.elapsed();
        }
        self.drain();
        let phase = match kind {
            PhaseKind::Register => Phase::Registration,
            PhaseKind::Reconstruct => Phase::Reconstruction,
            PhaseKind::Verify => Phase::IntegrityCheck,
            PhaseKind::Refute => Phase::Refutation,
            PhaseKind::Renew => Phase::Renewal,
        };
        if !self.verdicts[before..].iter().any(|v| v.phase == phase) {
            let id = self.owner.registered.map(|r| r.0).unwrap_or(0);
            self.emit(id, phase, Outcome::Abort, "phase stalled");
        }
        self.log(&format!("phase {} end", kind.name()));
        self.verdicts[before..]
            .iter()
            .rev()
            .find(|v| v.phase == phase)
            .cloned()
            .expect("pushed above")
    }

    /// Run every configured phase and summarize.
    pub fn run(mut self) -> (SimReport, Self) {
        let phases = self.cfg.phases.clone();
        for p in phases {
            self.run_phase(p);
        }
        let report = self.report();
        (report, self)
    }

    pub fn report(&mut self) -> SimReport {
        let ledger = self.net.ledger_text();
        for line in ledger.lines() {
            let line = format!("ledger {line}");
            self.log(&line);
        }
        let conservation = match (self.net.check_conservation(), self.net.check_no_reuse()) {
            (Ok(()), Ok(())) => "ok".to_string(),
            (a, b) => format!("{:?} {:?}", a.err(), b.err()),
        };
        self.log(&format!("ledger-check {conservation}"));
        let transcript = self.transcript.clone();
        let transcript_id = hex::encode(&Sha256::digest(transcript.as_bytes())[..8]);
        SimReport {
            verdicts: self.verdicts.clone(),
            exit_code: exit_code(&self.verdicts),
            transcript,
            transcript_id,
            recovered_exact: self.recovered_exact.clone(),
            wall: self.wall.clone(),
        }
    }

    fn start_phase(&mut self, kind: PhaseKind) {
        let registered = self.owner.registered;
        match kind {
            PhaseKind::Register => {
                let msg = Msg::RegisterRequest {
                    data: self.owner.data.clone(),
                    password: self.owner.password.clone(),
                };
                self.send(Role::Owner, Role::Calculator, &msg);
            }
            PhaseKind::Reconstruct => match registered {
                None => self.emit(0, Phase::Reconstruction, Outcome::Abort, "nothing registered"),
                Some((id, _)) => {
                    let password = self
                        .cfg
                        .data
                        .attempt
                        .clone()
                        .unwrap_or_else(|| self.cfg.data.password.clone())
                        .into_bytes();
                    self.send(Role::Owner, Role::Calculator, &Msg::ReconstructRequest { id, password });
                }
            },
            PhaseKind::Verify => match self.enduser.received.clone() {
                None => self.emit(0, Phase::IntegrityCheck, Outcome::Abort, "nothing delivered"),
                Some((id, t1, data)) => match self.cfg.tpv.mode {
                    TpvMode::Its => self.send(
                        Role::EndUser,
                        Role::Calculator,
                        &Msg::CheckRequest {
                            id,
                            t1,
                            data,
                            refute: false,
                        },
                    ),
                    TpvMode::Computational => {
                        let digest = cs_digest(t1, &data, self.cfg.tpv.digest_bits);
                        self.send(
                            Role::EndUser,
                            Role::Verifier,
                            &Msg::CsCheck {
                                id,
                                t1,
                                digest,
                                refute: false,
                            },
                        );
                    }
                },
            },
            PhaseKind::Refute => match self.enduser.received.clone() {
                None => self.emit(0, Phase::Refutation, Outcome::Abort, "nothing delivered"),
                Some((id, t1, mut data)) => {
                    if self.cfg.attacks.false_claim_user {
                        self.corrupt_bytes(&mut data);
                        self.log("enduser claims altered data");
                    }
                    self.send(Role::EndUser, Role::Owner, &Msg::Claim { id, t1, data });
                }
            },
            PhaseKind::Renew => {
                let round = self.calc.next_renewal;
                self.calc.next_renewal += 1;
                self.calc.renew = Some(RenewSession {
                    round,
                    votes: BTreeMap::new(),
                    finished: false,
                });
                for i in 1..=self.cfg.holders as u64 {
                    self.send(Role::Calculator, Role::Holder(i), &Msg::RenewStart { round });
                }
                self.set_timeout(Timeout::RenewVotes(round));
            }
        }
    }

    fn corrupt_bytes(&mut self, data: &mut [u8]) {
        if data.is_empty() {
            return;
        }
        let r = self.attack_rng.next_u64();
        let pos = (r % data.len() as u64) as usize;
        data[pos] ^= 1 << ((r >> 32) % 8);
    }

    fn on_timeout(&mut self, t: Timeout) {
        self.log(&format!("timeout {t:?}"));
        match t {
            Timeout::Registration(id) => {
                let acks = self.calc.reg.as_ref().map(|r| r.acks.len()).unwrap_or(0);
                if let Some(r) = self.calc.reg.as_mut() {
                    r.done = true;
                }
                let reason = format!("{acks} of {} holders stored shares", self.cfg.holders);
                self.fail(Role::Calculator, id, Phase::Registration, Outcome::Abort, &reason);
            }
            Timeout::Ping(_) => self.begin_precompute(),
            Timeout::Precompute(_) => {
                let rec = self.calc.rec.as_ref().expect("live session");
                if rec.subset.iter().all(|m| rec.done_from.contains(m)) {
                    self.send_requests();
                } else {
                    let reason = format!("precompute finished at {} holders", rec.done_from.len());
                    self.finish_reconstruction(Outcome::Abort, &reason);
                }
            }
            Timeout::Respond(_) => {
                let got = self.calc.rec.as_ref().map(|r| r.responses.len()).unwrap_or(0);
                let reason = format!("collected {got} of {} responses", self.params.threshold());
                self.finish_reconstruction(Outcome::Abort, &reason);
            }
            Timeout::RenewVotes(round) => {
                let votes = self.calc.renew.as_ref().map(|r| r.votes.len()).unwrap_or(0);
                self.calc.renew.as_mut().expect("live").finished = true;
                for i in 1..=self.cfg.holders as u64 {
                    self.send(Role::Calculator, Role::Holder(i), &Msg::RenewCommit { round, apply: false });
                }
                let id = self.owner.registered.map(|r| r.0).unwrap_or(0);
                let reason = format!("{votes} of {} holders voted", self.cfg.holders);
                self.emit(id, Phase::Renewal, Outcome::Abort, &reason);
            }
        }
    }

    /// A role decides a failure: record the verdict and tell the owner.
    fn fail(&mut self, by: Role, id: u64, phase: Phase, outcome: Outcome, reason: &str) {
        self.emit(id, phase, outcome, reason);
        if by != Role::Owner {
            let msg = Msg::Failed {
                id,
                phase,
                outcome,
                reason: reason.to_string(),
            };
            self.send(by, Role::Owner, &msg);
        }
    }

    fn finish_reconstruction(&mut self, outcome: Outcome, reason: &str) {
        let id = match self.calc.rec.as_mut() {
            Some(r) => {
                r.stage = Stage::Finished;
                r.id
            }
            None => return,
        };
        self.fail(Role::Calculator, id, Phase::Reconstruction, outcome, reason);
    }

    fn handle(&mut self, from: Role, to: Role, msg: Msg) {
        match (to, msg) {
            (Role::Calculator, Msg::RegisterRequest { data, password }) => self.calc_register(data, password),
            (Role::Holder(i), Msg::Fragment(f)) => {
                let id = f.secret_id;
                match self.holders.get_mut(&i).expect("holder").store.store_fragment(f) {
                    Ok(()) => self.send(to, Role::Calculator, &Msg::StoredAck { id }),
                    Err(e) => self.log(&format!("holder{i} rejected fragment: {e}")),
                }
            }
            (Role::Calculator, Msg::StoredAck { id }) => {
                let n = self.cfg.holders;
                let Role::Holder(j) = from else { return };
                let Some(reg) = self.calc.reg.as_mut().filter(|r| r.id == id && !r.done) else {
                    return;
                };
                reg.acks.insert(j);
                if reg.acks.len() == n {
                    reg.done = true;
                    let t1 = reg.t1;
                    self.send(Role::Calculator, Role::Owner, &Msg::Registered { id, t1 });
                }
            }
            (Role::Verifier, Msg::RecordTag { id, t1, tag }) => self.verifier_record(id, t1, RecordKind::Mac, tag),
            (Role::Verifier, Msg::CsRecord { id, t1, digest }) => {
                self.verifier_record(id, t1, RecordKind::Digest, digest)
            }
            (Role::Owner, Msg::Registered { id, t1 }) => {
                self.owner.registered = Some((id, t1));
                if self.cfg.tpv.mode == TpvMode::Computational {
                    let digest = cs_digest(t1, &self.owner.data, self.cfg.tpv.digest_bits);
                    self.send(Role::Owner, Role::Verifier, &Msg::CsRecord { id, t1, digest });
                }
                self.emit(id, Phase::Registration, Outcome::Success, "");
            }
            (Role::Owner, Msg::Failed { id, phase, outcome, reason }) => {
                self.log(&format!("owner informed: id={id} {phase} {outcome} ({reason})"));
            }
            (Role::Calculator, Msg::ReconstructRequest { id, password }) => self.calc_reconstruct(id, password),
            (Role::Holder(i), Msg::Ping { session, id }) => {
                let store = &self.holders[&i].store;
                let blocks = store.set().secret(id).map(|s| s.data_shares.len() as u64).unwrap_or(0);
                let watermark = store.watermark();
                self.send(to, Role::Calculator, &Msg::Pong { session, blocks, watermark });
            }
            (Role::Calculator, Msg::Pong { session, blocks, watermark }) => {
                let Role::Holder(j) = from else { return };
                let n = self.cfg.holders;
                let Some(rec) = self.calc.rec.as_mut().filter(|r| r.session == session && r.stage == Stage::Ping)
                else {
                    return;
                };
                rec.pongs.insert(j, (blocks, watermark));
                if rec.pongs.len() == n {
                    self.begin_precompute();
                }
            }
            (Role::Holder(i), Msg::PrecomputeStart { session, first_round, count, participants }) => {
                self.holder_precompute_start(i, session, first_round, count, participants)
            }
            (Role::Holder(i), Msg::PrecomputeBatch { session, contributions }) => {
                let Role::Holder(j) = from else { return };
                let h = self.holders.get_mut(&i).expect("holder");
                h.pre.entry(session).or_default().batches.insert(j, contributions);
                self.holder_try_finish_precompute(i, session);
            }
            (Role::Calculator, Msg::PrecomputeDone { session }) => {
                let Role::Holder(j) = from else { return };
                let Some(rec) =
                    self.calc.rec.as_mut().filter(|r| r.session == session && r.stage == Stage::Precompute)
                else {
                    return;
                };
                rec.done_from.insert(j);
                if rec.participants.iter().all(|m| rec.done_from.contains(m)) {
                    self.send_requests();
                }
            }
            (Role::Holder(i), Msg::Request { session, req }) => self.holder_respond(i, session, req),
            (Role::Calculator, Msg::Response { session, resp }) => {
                let t = self.params.threshold();
                let Some(rec) = self.calc.rec.as_mut().filter(|r| r.session == session && r.stage == Stage::Respond)
                else {
                    return;
                };
                if !rec.subset.contains(&resp.holder) || rec.responses.iter().any(|r| r.holder == resp.holder) {
                    return;
                }
                rec.responses.push(resp);
                if rec.responses.len() == t {
                    self.calc_recover();
                }
            }
            (Role::Owner, Msg::Recovered { id, data }) => {
                self.recovered_exact.push(data == self.owner.data);
                let t1 = self.owner.registered.map(|r| r.1).unwrap_or(0);
                let mut out = data;
                if self.cfg.attacks.tamper_owner {
                    self.corrupt_bytes(&mut out);
                    self.log("owner altered the data before forwarding");
                }
                self.send(Role::Owner, Role::EndUser, &Msg::Deliver { id, t1, data: out });
                self.emit(id, Phase::Reconstruction, Outcome::Success, "");
            }
            (Role::EndUser, Msg::Deliver { id, t1, data }) => {
                self.enduser.received = Some((id, t1, data));
            }
            (Role::Calculator, Msg::CheckRequest { id, t1, data, refute }) => {
                let phase = if refute { Phase::Refutation } else { Phase::IntegrityCheck };
                match calc_tag(&self.calc.store, id, t1, &data) {
                    Ok(tag) => self.send(Role::Calculator, Role::Verifier, &Msg::TagCheck { id, t1, tag, refute }),
                    Err(e) => {
                        let reason = format!("calculator: {e}");
                        self.fail(Role::Calculator, id, phase, Outcome::Abort, &reason);
                        self.send(
                            Role::Calculator,
                            Role::EndUser,
                            &Msg::Verdict {
                                id,
                                phase,
                                outcome: Outcome::Abort,
                            },
                        );
                    }
                }
            }
            (Role::Verifier, Msg::TagCheck { id, t1, tag, refute }) => self.verifier_judge(id, t1, tag, refute),
            (Role::Verifier, Msg::CsCheck { id, t1, digest, refute }) => {
                self.verifier_judge(id, t1, Some(digest), refute)
            }
            (Role::Owner | Role::EndUser, Msg::Verdict { id, phase, outcome }) => {
                self.log(&format!("{} learns id={id} {phase} {outcome}", to.name()));
            }
            (Role::Owner, Msg::Claim { id, t1, data }) => match self.cfg.tpv.mode {
                TpvMode::Its => self.send(
                    Role::Owner,
                    Role::Calculator,
                    &Msg::CheckRequest {
                        id,
                        t1,
                        data,
                        refute: true,
                    },
                ),
                TpvMode::Computational => {
                    let digest = cs_digest(t1, &data, self.cfg.tpv.digest_bits);
                    self.send(
                        Role::Owner,
                        Role::Verifier,
                        &Msg::CsCheck {
                            id,
                            t1,
                            digest,
                            refute: true,
                        },
                    );
                }
            },
            (Role::Holder(i), Msg::RenewStart { round }) => self.holder_renew_start(i, round),
            (Role::Holder(i), Msg::RenewOffer { packet, shares }) => {
                let Role::Holder(j) = from else { return };
                if packet.sender != j || shares.sender != j {
                    self.log(&format!("holder{i} ignores offer relabelled by holder{j}"));
                    return;
                }
                let h = self.holders.get_mut(&i).expect("holder");
                h.renew.entry(packet.round).or_default().received.insert(j, (packet.clone(), shares));
                self.holder_try_vote(i, packet.round);
            }
            (Role::Calculator, Msg::RenewVote { round, accused }) => {
                let Role::Holder(j) = from else { return };
                let n = self.cfg.holders;
                let Some(s) = self.calc.renew.as_mut().filter(|s| s.round == round && !s.finished) else {
                    return;
                };
                s.votes.insert(j, accused);
                if s.votes.len() == n {
                    s.finished = true;
                    let accusation = s.votes.iter().find_map(|(&a, &acc)| acc.map(|b| (a, b)));
                    let apply = accusation.is_none();
                    for i in 1..=n as u64 {
                        self.send(Role::Calculator, Role::Holder(i), &Msg::RenewCommit { round, apply });
                    }
                    let id = self.owner.registered.map(|r| r.0).unwrap_or(0);
                    match accusation {
                        None => self.emit(id, Phase::Renewal, Outcome::Success, ""),
                        Some((a, b)) => {
                            let reason = format!("holder{a} accused holder{b}");
                            self.emit(id, Phase::Renewal, Outcome::Fail, &reason);
                        }
                    }
                }
            }
            (Role::Holder(i), Msg::RenewCommit { round, apply }) => {
                let params = self.params.clone();
                let h = self.holders.get_mut(&i).expect("holder");
                let pending = h.renew.remove(&round);
                if !apply {
                    self.log(&format!("holder{i} keeps its shares"));
                    return;
                }
                let Some(deltas) = pending.and_then(|p| p.deltas) else {
                    self.log(&format!("holder{i} has no accepted deltas for round {round}"));
                    return;
                };
                let res = h.store.update_shares(|set| apply_renewal(&params, set, &deltas));
                match res {
                    Ok(()) => self.log(&format!("holder{i} renewed its shares")),
                    Err(e) => self.log(&format!("holder{i} renewal failed: {e}")),
                }
            }
            (to, msg) => {
                let line = format!("unexpected {} at {} from {}", kind_name(msg.kind()), to.name(), from.name());
                self.log(&line);
            }
        }
    }

    fn calc_register(&mut self, mut data: Vec<u8>, password: Vec<u8>) {
        let id = self.calc.next_id;
        self.calc.next_id += 1;
        let t1 = self.clock_ms(Role::Calculator);
        let pw = match Password::from_bytes(&self.params, &password) {
            Ok(p) => p,
            Err(e) => {
                self.fail(Role::Calculator, id, Phase::Registration, Outcome::Fail, &e.to_string());
                return;
            }
        };
        let node = self.nodes[&Role::Calculator];
        let reg = {
            let mut rng = self.net.ksa(node);
            spss_register(id, t1, &data, &pw, &self.params, &mut rng)
        };
        let reg = match reg {
            Ok(r) => r,
            Err(e) => {
                self.fail(Role::Calculator, id, Phase::Registration, Outcome::Abort, &e.to_string());
                return;
            }
        };
        let its = self.cfg.tpv.mode == TpvMode::Its;
        let frags: Vec<(Role, Msg)> = reg
            .fragments
            .into_iter()
            .map(|f| (Role::Holder(f.holder), Msg::Fragment(f)))
            .collect();
        // Nothing leaves unless every destination can be served.
        let mut dests: Vec<(Role, usize)> = frags.iter().map(|(r, m)| (*r, m.encode().len())).collect();
        if its {
            dests.push((Role::Verifier, 17 + self.tag_bytes()));
        }
        for (to, len) in dests {
            let (a, b) = (node, self.nodes[&to]);
            let need = self
                .channels
                .config()
                .message_key_bytes(&Role::Calculator.name(), &to.name(), len);
            if a != b && self.net.wait_estimate_us(a, b, need).is_none() {
                data.fill(0);
                let reason = format!("no key supply towards {}", to.name());
                self.fail(Role::Calculator, id, Phase::Registration, Outcome::Abort, &reason);
                return;
            }
        }
        let sigma = if its {
            let mut rng = self.net.ksa(node);
            match calc_register(&mut self.calc.store, &self.cfg.tpv, id, t1, &data, &mut rng) {
                Ok(s) => Some(s),
                Err(e) => {
                    data.fill(0);
                    self.fail(Role::Calculator, id, Phase::Registration, Outcome::Abort, &e.to_string());
                    return;
                }
            }
        } else {
            None
        };
        data.fill(0);
        for (to, msg) in frags {
            self.send(Role::Calculator, to, &msg);
        }
        if let Some(tag) = sigma {
            self.send(Role::Calculator, Role::Verifier, &Msg::RecordTag { id, t1, tag });
        }
        self.calc.reg = Some(RegPending {
            id,
            t1,
            acks: BTreeSet::new(),
            done: false,
        });
        self.set_timeout(Timeout::Registration(id));
    }

    fn verifier_record(&mut self, id: u64, t1: u64, kind: RecordKind, tag: Vec<u8>) {
        let t2 = self.clock_ms(Role::Verifier);
        match verifier_accept(&mut self.verifier, id, t1, kind, tag, t2) {
            Ok(()) => self.log(&format!("verifier records id={id} t1={t1} t2={t2}")),
            Err(e) => self.log(&format!("verifier refuses record id={id}: {e}")),
        }
    }

    fn verifier_judge(&mut self, id: u64, t1: u64, candidate: Option<Vec<u8>>, refute: bool) {
        let (phase, outcome) = if refute {
            (Phase::Refutation, judge_refute(&self.verifier, id, t1, candidate.as_deref()))
        } else {
            (Phase::IntegrityCheck, judge_check(&self.verifier, id, t1, candidate.as_deref()))
        };
        self.emit(id, phase, outcome, "");
        let msg = Msg::Verdict { id, phase, outcome };
        self.send(Role::Verifier, Role::Owner, &msg);
        self.send(Role::Verifier, Role::EndUser, &msg);
    }

    fn calc_reconstruct(&mut self, id: u64, password: Vec<u8>) {
        let attempt = match Password::from_bytes(&self.params, &password) {
            Ok(p) => p,
            Err(e) => {
                self.fail(Role::Calculator, id, Phase::Reconstruction, Outcome::Fail, &e.to_string());
                return;
            }
        };
        let session = self.calc.next_session;
        self.calc.next_session += 1;
        self.calc.rec = Some(RecSession {
            session,
            id,
            attempt,
            stage: Stage::Ping,
            pongs: BTreeMap::new(),
            participants: Vec::new(),
            subset: Vec::new(),
            first_round: 0,
            count: 0,
            done_from: BTreeSet::new(),
            responses: Vec::new(),
        });
        for i in 1..=self.cfg.holders as u64 {
            self.send(Role::Calculator, Role::Holder(i), &Msg::Ping { session, id });
        }
        self.set_timeout(Timeout::Ping(session));
    }

    fn begin_precompute(&mut self) {
        let t = self.params.threshold();
        let configured = self.cfg.subset.clone();
        let rec = self.calc.rec.as_mut().expect("live session");
        let live: Vec<u64> = rec.pongs.iter().filter(|(_, &(b, _))| b > 0).map(|(&j, _)| j).collect();
        if live.len() < t {
            let reason = format!("{} live holders, {t} required", live.len());
            self.finish_reconstruction(Outcome::Abort, &reason);
            return;
        }
        let counts: BTreeSet<u64> = live.iter().map(|j| rec.pongs[j].0).collect();
        if counts.len() != 1 {
            self.finish_reconstruction(Outcome::Abort, "holders disagree on the share count");
            return;
        }
        let subset = configured.unwrap_or_else(|| live[..t].to_vec());
        if !subset.iter().all(|m| live.contains(m)) {
            let reason = format!("configured subset {subset:?} not all live");
            self.finish_reconstruction(Outcome::Abort, &reason);
            return;
        }
        let watermark = live.iter().map(|j| rec.pongs[j].1).max().unwrap_or(0);
        let first_round = self.calc.next_round.max(watermark);
        let count = *counts.first().expect("one count");
        self.calc.next_round = first_round + count;
        rec.stage = Stage::Precompute;
        rec.participants = live.clone();
        rec.subset = subset;
        rec.first_round = first_round;
        rec.count = count;
        let session = rec.session;
        for &j in &live {
            let msg = Msg::PrecomputeStart {
                session,
                first_round,
                count,
                participants: live.clone(),
            };
            self.send(Role::Calculator, Role::Holder(j), &msg);
        }
        self.set_timeout(Timeout::Precompute(session));
    }

    fn holder_precompute_start(&mut self, i: u64, session: u64, first: u64, count: u64, participants: Vec<u64>) {
        let node = self.nodes[&Role::Holder(i)];
        let mut outgoing: BTreeMap<u64, Vec<PrecomputeContribution>> = BTreeMap::new();
        {
            let mut rng = self.net.ksa(node);
            for round in first..first + count {
                match precompute_contributions(&self.params, i, round, &participants, &mut rng) {
                    Ok(cs) => {
                        for c in cs {
                            outgoing.entry(c.to).or_default().push(c);
                        }
                    }
                    Err(e) => {
                        self.log(&format!("holder{i} cannot precompute: {e}"));
                        return;
                    }
                }
            }
        }
        let own = outgoing.remove(&i).unwrap_or_default();
        let h = self.holders.get_mut(&i).expect("holder");
        let entry = h.pre.entry(session).or_default();
        entry.start = Some((first, count, participants));
        entry.batches.insert(i, own);
        for (j, contributions) in outgoing {
            self.send(Role::Holder(i), Role::Holder(j), &Msg::PrecomputeBatch { session, contributions });
        }
        self.holder_try_finish_precompute(i, session);
    }

    fn holder_try_finish_precompute(&mut self, i: u64, session: u64) {
        let params = self.params.clone();
        let h = self.holders.get_mut(&i).expect("holder");
        let Some(p) = h.pre.get(&session) else { return };
        let Some((first, count, participants)) = p.start.clone() else { return };
        if !participants.iter().all(|m| p.batches.contains_key(m)) {
            return;
        }
        let p = h.pre.remove(&session).expect("present");
        let mut result = Ok(());
        for (k, round) in (first..first + count).enumerate() {
            let contribs: Vec<PrecomputeContribution> = participants
                .iter()
                .filter_map(|m| p.batches[m].get(k).cloned())
                .collect();
            result = h.store.accept_round(&params, round, &participants, &contribs);
            if result.is_err() {
                break;
            }
        }
        let result = result.and_then(|()| h.store.commit());
        match result {
            Ok(()) => self.send(Role::Holder(i), Role::Calculator, &Msg::PrecomputeDone { session }),
            Err(e) => self.log(&format!("holder{i} precompute failed: {e}")),
        }
    }

    fn send_requests(&mut self) {
        let node = self.nodes[&Role::Calculator];
        let rec = self.calc.rec.as_mut().expect("live session");
        let ids: Vec<u64> = (rec.first_round..rec.first_round + rec.count).collect();
        let reqs = {
            let mut rng = self.net.ksa(node);
            spss_request(&self.params, rec.id, &rec.attempt, &rec.subset, &ids, &mut rng)
        };
        let reqs = match reqs {
            Ok(r) => r,
            Err(e) => {
                self.finish_reconstruction(Outcome::Abort, &e.to_string());
                return;
            }
        };
        rec.stage = Stage::Respond;
        let session = rec.session;
        for (h, req) in reqs {
            self.send(Role::Calculator, Role::Holder(h), &Msg::Request { session, req });
        }
        self.set_timeout(Timeout::Respond(session));
    }

    fn holder_respond(&mut self, i: u64, session: u64, req: ReconstructionRequest) {
        let params = self.params.clone();
        let h = self.holders.get_mut(&i).expect("holder");
        match h.store.respond(&params, &req, None) {
            Ok(mut resp) => {
                if self.cfg.attacks.corrupt_holder == Some(i) {
                    for v in resp.values.iter_mut() {
                        *v = params
                            .field()
                            .random_element(&mut self.attack_rng)
                            .expect("unbounded stream");
                    }
                    self.log(&format!("holder{i} answers with garbage"));
                }
                self.send(Role::Holder(i), Role::Calculator, &Msg::Response { session, resp });
            }
            Err(e) => self.log(&format!("holder{i} refuses request: {e}")),
        }
    }

    fn calc_recover(&mut self) {
        let rec = self.calc.rec.as_mut().expect("live session");
        let result = spss_recover(&self.params, &rec.responses, &rec.attempt);
        rec.responses.clear();
        let id = rec.id;
        match result {
            Ok(mut data) => {
                rec.stage = Stage::Finished;
                self.send(Role::Calculator, Role::Owner, &Msg::Recovered { id, data: data.clone() });
                data.fill(0);
            }
            Err(Error::PasswordFailure) => {
                self.finish_reconstruction(Outcome::Fail, "password check failed")
            }
            Err(e) => self.finish_reconstruction(Outcome::Abort, &e.to_string()),
        }
    }

    fn holder_renew_start(&mut self, i: u64, round: u64) {
        let group = self.group.clone().expect("renewal needs a group");
        let n = self.cfg.holders as u64;
        let degrees = track_degrees(&self.params, self.holders[&i].store.set());
        let node = self.nodes[&Role::Holder(i)];
        let generated = {
            let mut rng = self.net.ksa(node);
            gen_renewal(&group, i, round, &degrees, n, &mut rng)
        };
        let (packet, mut shares) = match generated {
            Ok(x) => x,
            Err(e) => {
                self.log(&format!("holder{i} cannot renew: {e}"));
                return;
            }
        };
        if self.cfg.attacks.corrupt_holder == Some(i) {
            let victim = (1..=n).find(|&j| j != i).expect("another holder");
            if let Some(first) = shares[victim as usize - 1].pairs.first_mut() {
                first.0 = &first.0 + &self.params.field().one();
                self.log(&format!("holder{i} sends holder{victim} a bad renewal share"));
            }
        }
        let own = shares[i as usize - 1].clone();
        let h = self.holders.get_mut(&i).expect("holder");
        let entry = h.renew.entry(round).or_default();
        entry.degrees = Some(degrees);
        entry.received.insert(i, (packet.clone(), own));
        for j in (1..=n).filter(|&j| j != i) {
            let msg = Msg::RenewOffer {
                packet: packet.clone(),
                shares: std::mem::replace(
                    &mut shares[j as usize - 1],
                    RenewalShares {
                        sender: i,
                        recipient: j,
                        round,
                        pairs: Vec::new(),
                    },
                ),
            };
            self.send(Role::Holder(i), Role::Holder(j), &msg);
        }
        self.holder_try_vote(i, round);
    }

    fn holder_try_vote(&mut self, i: u64, round: u64) {
        let group = self.group.clone().expect("renewal needs a group");
        let n = self.cfg.holders as u64;
        let field = self.params.field().clone();
        let h = self.holders.get_mut(&i).expect("holder");
        let Some(p) = h.renew.get_mut(&round) else { return };
        let Some(degrees) = p.degrees.clone() else { return };
        if p.voted || p.received.len() < n as usize {
            return;
        }
        p.voted = true;
        let accused = p.received.iter().find_map(|(&j, (packet, shares))| {
            let ok = j == i
                || (packet.round == round
                    && shares.recipient == i
                    && verify_renewal(&group, packet, shares, &degrees));
            (!ok).then_some(j)
        });
        if accused.is_none() {
            let all: Vec<RenewalShares> = p.received.values().map(|(_, s)| s.clone()).collect();
            p.deltas = Some(renewal_deltas(&field, &all, degrees.len()));
        }
        self.send(Role::Holder(i), Role::Calculator, &Msg::RenewVote { round, accused });
    }
}

/// Run a whole scenario.
pub fn run_scenario(cfg: ScenarioConfig) -> Result<(SimReport, Simulation)> {
    let sim = Simulation::new(cfg)?;
    Ok(sim.run())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            data: crate::scenario::DataConfig {
                size_bytes: 200,
                ..Default::default()
            },
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn message_round_trip() {
        let field = crate::field::PrimeField::mersenne(31).unwrap();
        let msgs = vec![
            Msg::RegisterRequest {
                data: b"d".to_vec(),
                password: b"p".to_vec(),
            },
            Msg::RecordTag {
                id: 1,
                t1: 2,
                tag: vec![9; 4],
            },
            Msg::TagCheck {
                id: 1,
                t1: 2,
                tag: None,
                refute: true,
            },
            Msg::Failed {
                id: 3,
                phase: Phase::Reconstruction,
                outcome: Outcome::Abort,
                reason: "x".into(),
            },
            Msg::RenewVote {
                round: 4,
                accused: Some(2),
            },
            Msg::PrecomputeBatch {
                session: 1,
                contributions: vec![PrecomputeContribution {
                    round: 1,
                    from: 2,
                    to: 3,
                    r_share: field.element(5u32),
                    zero_share: field.element(6u32),
                }],
            },
        ];
        for m in msgs {
            let bytes = m.encode();
            assert_eq!(Msg::decode(&bytes, &field, 4).unwrap(), m);
            assert!(Msg::decode(&bytes[..bytes.len() - 1], &field, 4).is_err());
        }
        assert_eq!(Role::parse("holder3"), Some(Role::Holder(3)));
        assert_eq!(Role::parse(&Role::EndUser.name()), Some(Role::EndUser));
    }

    #[test]
    fn honest_default_scenario() {
        let (report, sim) = run_scenario(small()).unwrap();
        let outcomes: Vec<_> = report.verdicts.iter().map(|v| (v.phase, v.outcome)).collect();
        assert_eq!(
            outcomes,
            vec![
                (Phase::Registration, Outcome::Success),
                (Phase::Reconstruction, Outcome::Success),
                (Phase::IntegrityCheck, Outcome::Success),
                (Phase::Renewal, Outcome::Success),
                (Phase::Reconstruction, Outcome::Success),
                (Phase::IntegrityCheck, Outcome::Success),
            ],
            "{}",
            report.transcript
        );
        assert_eq!(report.recovered_exact, vec![true, true]);
        assert_eq!(report.exit_code, 0);
        sim.network().check_conservation().unwrap();
        sim.network().check_no_reuse().unwrap();
        let rec = &sim.verifier_store().records()[0];
        assert!(rec.t1 <= rec.t2);
        assert_eq!(sim.verifier_store().records().len(), 1);
    }
}
