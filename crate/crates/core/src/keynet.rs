//! Simulated QKD key supply.
//!
//! Each link accumulates key at its rate up to a capacity. Each node also
//! runs a key supply agent with its own random buffer for co-located
//! applications. Keys between non-adjacent nodes are relayed hop by hop:
//! the first hop's key becomes the end-to-end key and every further hop
//! spends the same amount as one-time-pad overhead.
//!
//! Streams hand out bytes strictly in order and never rewind, so every
//! issued range is new. The ledger keeps the identity
//! `generated = buffered + consumed + overhead` at all times.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::random::RandomSource;
use crate::uhash::{wc_tag, wc_verify, MacScheme, MacTag, WcKey};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub name: String,
    pub a: String,
    pub b: String,
    pub length_km: f64,
    pub loss_db: f64,
    /// Secret key rate in bits per second of simulated time.
    pub rate_bps: f64,
    pub capacity_bits: u64,
    #[serde(default = "default_up")]
    pub up: bool,
}

fn default_up() -> bool {
    true
}

/// Key rate assigned to a link of the given loss when none is configured:
/// `1e7 * 10^(-loss / 10)` bits per second.
pub fn rate_from_loss(loss_db: f64) -> f64 {
    1e7 * 10f64.powf(-loss_db / 10.0)
}

impl LinkSpec {
    pub fn new(name: &str, a: &str, b: &str, length_km: f64, loss_db: f64) -> Self {
        LinkSpec {
            name: name.into(),
            a: a.into(),
            b: b.into(),
            length_km,
            loss_db,
            rate_bps: rate_from_loss(loss_db),
            capacity_bits: 1 << 30,
            up: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    pub nodes: Vec<String>,
    pub links: Vec<LinkSpec>,
    /// Rate of each node's local random supply.
    #[serde(default = "default_ksa_rate")]
    pub ksa_rate_bps: f64,
    #[serde(default = "default_ksa_capacity")]
    pub ksa_capacity_bits: u64,
}

fn default_ksa_rate() -> f64 {
    1e8
}

fn default_ksa_capacity() -> u64 {
    1 << 30
}

impl Topology {
    /// Five nodes and six links with the lengths and losses of the Tokyo
    /// network. Link endpoints are a simulation choice.
    pub fn tokyo() -> Self {
        let nodes = ["Koganei-1", "Koganei-2", "Koganei-3", "Koganei-4", "Ohtemachi-1"];
        Topology {
            nodes: nodes.iter().map(|s| s.to_string()).collect(),
            links: vec![
                LinkSpec::new("NEC-0", "Koganei-1", "Koganei-2", 50.0, 10.0),
                LinkSpec::new("NEC-1", "Koganei-2", "Ohtemachi-1", 22.0, 13.0),
                LinkSpec::new("Toshiba", "Koganei-3", "Ohtemachi-1", 45.0, 14.5),
                LinkSpec::new("NTT-NICT", "Koganei-1", "Ohtemachi-1", 90.0, 29.35),
                LinkSpec::new("Gakushuin", "Koganei-3", "Koganei-4", 2.0, 2.0),
                LinkSpec::new("SeQureNet", "Koganei-2", "Koganei-4", 2.0, 2.0),
            ],
            ksa_rate_bps: default_ksa_rate(),
            ksa_capacity_bits: default_ksa_capacity(),
        }
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    pub fn node(&self, name: &str) -> Result<usize> {
        self.node_index(name)
            .ok_or_else(|| Error::Config(format!("unknown node {name:?}")))
    }

    fn endpoints(&self, link: &LinkSpec) -> (usize, usize) {
        (self.node_index(&link.a).unwrap(), self.node_index(&link.b).unwrap())
    }

    pub fn validate(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if self.nodes[..i].contains(n) {
                return Err(Error::Config(format!("topology.nodes: duplicate node {n:?}")));
            }
        }
        for (i, l) in self.links.iter().enumerate() {
            for end in [&l.a, &l.b] {
                if self.node_index(end).is_none() {
                    return Err(Error::Config(format!("topology.links[{i}]: unknown node {end:?}")));
                }
            }
            if l.a == l.b {
                return Err(Error::Config(format!("topology.links[{i}]: self loop at {:?}", l.a)));
            }
            if l.rate_bps < 0.0 || !l.rate_bps.is_finite() {
                return Err(Error::Config(format!("topology.links[{i}].rate_bps must be finite and >= 0")));
            }
            if self.links[..i].iter().any(|m| m.name == l.name) {
                return Err(Error::Config(format!("topology.links[{i}]: duplicate name {:?}", l.name)));
            }
        }
        for j in 1..self.nodes.len() {
            if self.path_all(0, j).is_none() {
                return Err(Error::Config(format!(
                    "topology: {:?} unreachable from {:?}",
                    self.nodes[j], self.nodes[0]
                )));
            }
        }
        Ok(())
    }

    fn bfs(&self, from: usize, to: usize, only_up: bool) -> Option<Vec<usize>> {
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; self.nodes.len()];
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([from]);
        seen[from] = true;
        while let Some(u) = queue.pop_front() {
            if u == to {
                let mut path = Vec::new();
                let mut v = to;
                while let Some((p, link)) = prev[v] {
                    path.push(link);
                    v = p;
                }
                path.reverse();
                return Some(path);
            }
            for (li, l) in self.links.iter().enumerate() {
                if only_up && !l.up {
                    continue;
                }
                let (a, b) = self.endpoints(l);
                let next = if a == u {
                    b
                } else if b == u {
                    a
                } else {
                    continue;
                };
                if !seen[next] {
                    seen[next] = true;
                    prev[next] = Some((u, li));
                    queue.push_back(next);
                }
            }
        }
        None
    }

    fn path_all(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        self.bfs(from, to, false)
    }

    /// Fewest-hop path over live links, as link indices.
    pub fn path(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        self.bfs(from, to, true)
    }

    pub fn path_km(&self, path: &[usize]) -> f64 {
        path.iter().map(|&l| self.links[l].length_km).sum()
    }

    pub fn direct_link(&self, a: usize, b: usize) -> Option<usize> {
        self.links.iter().position(|l| {
            let (x, y) = self.endpoints(l);
            (x, y) == (a, b) || (x, y) == (b, a)
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StreamId {
    Link(usize),
    /// End-to-end key between two non-adjacent nodes, lower index first.
    Relay(usize, usize),
    /// A node's local random supply.
    Local(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Usage {
    Consumed,
    Transfer,
    Overhead,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct KeyHandle {
    pub stream: StreamId,
    pub offset: u64,
    pub len: u64,
}

struct Stream {
    source: Option<ChaCha20Rng>,
    queue: VecDeque<u8>,
    rate_bps: f64,
    capacity_bytes: u64,
    carry_bits: f64,
    generated: u64,
    buffered: u64,
    issued: u64,
    ranges: Vec<(u64, u64, Usage)>,
}

impl Stream {
    fn generating(rate_bps: f64, capacity_bits: u64, rng: ChaCha20Rng) -> Self {
        Stream {
            source: Some(rng),
            queue: VecDeque::new(),
            rate_bps,
            capacity_bytes: capacity_bits / 8,
            carry_bits: 0.0,
            generated: 0,
            buffered: 0,
            issued: 0,
            ranges: Vec::new(),
        }
    }

    fn relay() -> Self {
        Stream {
            source: None,
            queue: VecDeque::new(),
            rate_bps: 0.0,
            capacity_bytes: u64::MAX,
            carry_bits: 0.0,
            generated: 0,
            buffered: 0,
            issued: 0,
            ranges: Vec::new(),
        }
    }

    /// Add `elapsed_us` worth of key, whole bytes only, clamped at capacity.
    fn generate(&mut self, elapsed_us: u64) -> u64 {
        if self.source.is_none() || elapsed_us == 0 {
            return 0;
        }
        self.carry_bits += self.rate_bps * elapsed_us as f64 / 1e6;
        let bytes = (self.carry_bits / 8.0).floor();
        self.carry_bits -= bytes * 8.0;
        let room = self.capacity_bytes.saturating_sub(self.buffered);
        let added = (bytes as u64).min(room);
        if added == room {
            self.carry_bits = 0.0;
        }
        self.generated += added;
        self.buffered += added;
        added
    }

    fn take(&mut self, n: u64, usage: Usage) -> Result<(u64, Vec<u8>)> {
        if n > self.buffered {
            return Err(Error::KeySupply {
                requested: n * 8,
                available: self.buffered * 8,
            });
        }
        let mut out = vec![0u8; n as usize];
        match &mut self.source {
            Some(rng) => rng.fill_bytes(&mut out),
            None => {
                for b in out.iter_mut() {
                    *b = self.queue.pop_front().expect("queue holds buffered bytes");
                }
            }
        }
        let offset = self.issued;
        self.issued += n;
        self.buffered -= n;
        if n > 0 {
            self.ranges.push((offset, n, usage));
        }
        Ok((offset, out))
    }
}

/// Per-stream counters in bits, for reports.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StreamLedger {
    pub generated: u64,
    pub received: u64,
    pub buffered: u64,
    pub consumed: u64,
    pub transferred: u64,
    pub overhead: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LedgerTotals {
    pub generated: u64,
    pub buffered: u64,
    pub consumed: u64,
    pub overhead: u64,
}

pub struct KeyNetwork {
    topology: Topology,
    streams: BTreeMap<StreamId, Stream>,
    pending: BTreeMap<KeyHandle, Vec<u8>>,
    now_us: u64,
}

impl KeyNetwork {
    pub fn new(topology: Topology, seed: u64) -> Result<Self> {
        topology.validate()?;
        let mut streams = BTreeMap::new();
        let stream_rng = |label: String| {
            use sha2::{Digest, Sha256};
            let mut h = Sha256::new();
            h.update(seed.to_be_bytes());
            h.update(label.as_bytes());
            ChaCha20Rng::from_seed(h.finalize().into())
        };
        for (i, l) in topology.links.iter().enumerate() {
            streams.insert(
                StreamId::Link(i),
                Stream::generating(l.rate_bps, l.capacity_bits, stream_rng(format!("link:{}", l.name))),
            );
        }
        for (i, n) in topology.nodes.iter().enumerate() {
            streams.insert(
                StreamId::Local(i),
                Stream::generating(
                    topology.ksa_rate_bps,
                    topology.ksa_capacity_bits,
                    stream_rng(format!("ksa:{n}")),
                ),
            );
        }
        Ok(KeyNetwork {
            topology,
            streams,
            pending: BTreeMap::new(),
            now_us: 0,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    /// Run generation on every link and supply up to `now_us`.
    pub fn advance_to(&mut self, now_us: u64) {
        if now_us <= self.now_us {
            return;
        }
        let elapsed = now_us - self.now_us;
        let ids: Vec<StreamId> = self.streams.keys().copied().collect();
        for id in ids {
            self.generate_keys(id, elapsed);
        }
        self.now_us = now_us;
    }

    /// Add `elapsed_us` of generation to one stream; returns bits added.
    pub fn generate_keys(&mut self, stream: StreamId, elapsed_us: u64) -> u64 {
        let up = match stream {
            StreamId::Link(i) => self.topology.links[i].up,
            _ => true,
        };
        match self.streams.get_mut(&stream) {
            Some(s) if up => s.generate(elapsed_us) * 8,
            _ => 0,
        }
    }

    pub fn set_link_up(&mut self, link: usize, up: bool) {
        self.topology.links[link].up = up;
    }

    pub fn buffered_bits(&self, stream: StreamId) -> u64 {
        self.streams.get(&stream).map(|s| s.buffered * 8).unwrap_or(0)
    }

    /// The stream that carries key between two distinct nodes.
    pub fn pair_stream(&self, a: usize, b: usize) -> StreamId {
        match self.topology.direct_link(a, b) {
            Some(l) => StreamId::Link(l),
            None => StreamId::Relay(a.min(b), a.max(b)),
        }
    }

    fn take(&mut self, stream: StreamId, n: u64, usage: Usage) -> Result<(u64, Vec<u8>)> {
        let s = self
            .streams
            .get_mut(&stream)
            .ok_or_else(|| Error::KeySupply {
                requested: n * 8,
                available: 0,
            })?;
        s.take(n, usage)
    }

    /// Move `bytes` of key from `a` to `b` along the fewest-hop live path.
    /// All hops are checked before any is debited.
    pub fn relay_keys(&mut self, a: usize, b: usize, bytes: u64) -> Result<()> {
        if bytes == 0 {
            return Ok(());
        }
        let path = self.topology.path(a, b).ok_or_else(|| {
            Error::NoRoute(self.topology.nodes[a].clone(), self.topology.nodes[b].clone())
        })?;
        if path.len() == 1 {
            return Ok(());
        }
        for &l in &path {
            let have = self.buffered_bits(StreamId::Link(l));
            if have < bytes * 8 {
                return Err(Error::KeySupply {
                    requested: bytes * 8,
                    available: have,
                });
            }
        }
        let (_, key) = self.take(StreamId::Link(path[0]), bytes, Usage::Transfer)?;
        for &l in &path[1..] {
            self.take(StreamId::Link(l), bytes, Usage::Overhead)?;
        }
        let dst = self.pair_stream(a, b);
        let s = self.streams.entry(dst).or_insert_with(Stream::relay);
        s.queue.extend(key);
        s.buffered += bytes;
        Ok(())
    }

    /// Make sure the pair `(a, b)` holds at least `bytes`, relaying the
    /// deficit if the nodes are not adjacent.
    pub fn ensure_pair(&mut self, a: usize, b: usize, bytes: u64) -> Result<StreamId> {
        let id = self.pair_stream(a, b);
        let have = self.buffered_bits(id) / 8;
        if have < bytes {
            match id {
                StreamId::Relay(..) => self.relay_keys(a, b, bytes - have)?,
                _ => {
                    if !self.topology.links[self.topology.direct_link(a, b).unwrap()].up {
                        return Err(Error::NoRoute(
                            self.topology.nodes[a].clone(),
                            self.topology.nodes[b].clone(),
                        ));
                    }
                    return Err(Error::KeySupply {
                        requested: bytes * 8,
                        available: have * 8,
                    });
                }
            }
        }
        Ok(id)
    }

    /// Simulated time until the pair `(a, b)` could hold `bytes`, or
    /// `None` if capacity or connectivity makes that impossible.
    pub fn wait_estimate_us(&self, a: usize, b: usize, bytes: u64) -> Option<u64> {
        let id = self.pair_stream(a, b);
        let have = self.buffered_bits(id) / 8;
        if have >= bytes {
            return Some(0);
        }
        let deficit = bytes - have;
        let path = self.topology.path(a, b)?;
        let mut worst = 0u64;
        for l in path {
            let s = &self.streams[&StreamId::Link(l)];
            let need = deficit.saturating_sub(s.buffered);
            if need == 0 {
                continue;
            }
            if deficit > s.capacity_bytes || s.rate_bps <= 0.0 {
                return None;
            }
            worst = worst.max((need as f64 * 8.0 / s.rate_bps * 1e6).ceil() as u64 + 1);
        }
        Some(worst)
    }

    /// Local random bytes for an application at `node`.
    pub fn supply_randomness(&mut self, node: usize, bytes: u64) -> Result<Vec<u8>> {
        Ok(self.take(StreamId::Local(node), bytes, Usage::Consumed)?.1)
    }

    pub fn ksa(&mut self, node: usize) -> KsaRandom<'_> {
        KsaRandom { net: self, node }
    }

    /// Start drawing a contiguous range of `stream` for one message.
    pub fn session(&mut self, stream: StreamId) -> KeySession<'_> {
        let offset = self.streams.get(&stream).map(|s| s.issued).unwrap_or(0);
        KeySession {
            net: self,
            stream,
            offset,
            bytes: Vec::new(),
        }
    }

    /// Hand the receiver its copy of an issued range, once.
    pub fn redeem(&mut self, handle: &KeyHandle) -> Result<Vec<u8>> {
        self.pending
            .remove(handle)
            .ok_or(Error::SingleUse("key range not issued or already redeemed"))
    }

    pub fn stream_ledger(&self) -> BTreeMap<StreamId, StreamLedger> {
        self.streams
            .iter()
            .map(|(id, s)| {
                let sum = |u: Usage| s.ranges.iter().filter(|r| r.2 == u).map(|r| r.1 * 8).sum();
                let l = StreamLedger {
                    generated: s.generated * 8,
                    received: if s.source.is_none() { s.issued * 8 + s.buffered * 8 } else { 0 },
                    buffered: s.buffered * 8,
                    consumed: sum(Usage::Consumed),
                    transferred: sum(Usage::Transfer),
                    overhead: sum(Usage::Overhead),
                };
                (*id, l)
            })
            .collect()
    }

    pub fn totals(&self) -> LedgerTotals {
        let mut t = LedgerTotals::default();
        for l in self.stream_ledger().values() {
            t.generated += l.generated;
            t.buffered += l.buffered;
            t.consumed += l.consumed;
            t.overhead += l.overhead;
        }
        t
    }

    /// `generated = buffered + consumed + overhead`, and each stream's own
    /// books balance.
    pub fn check_conservation(&self) -> Result<()> {
        for (id, l) in self.stream_ledger() {
            let inflow = l.generated + l.received;
            let outflow = l.buffered + l.consumed + l.transferred + l.overhead;
            if inflow != outflow {
                return Err(Error::Protocol(format!(
                    "stream {id:?} unbalanced: in {inflow}, out {outflow}"
                )));
            }
        }
        let t = self.totals();
        if t.generated != t.buffered + t.consumed + t.overhead {
            return Err(Error::Protocol(format!("key conservation violated: {t:?}")));
        }
        Ok(())
    }

    /// No byte of any stream was issued twice.
    pub fn check_no_reuse(&self) -> Result<()> {
        for (id, s) in &self.streams {
            let mut ranges: Vec<_> = s.ranges.iter().map(|r| (r.0, r.1)).collect();
            ranges.sort();
            for w in ranges.windows(2) {
                if w[0].0 + w[0].1 > w[1].0 {
                    return Err(Error::Protocol(format!("stream {id:?} reissued offset {}", w[1].0)));
                }
            }
        }
        Ok(())
    }

    pub fn stream_name(&self, id: StreamId) -> String {
        let t = &self.topology;
        match id {
            StreamId::Link(i) => format!("link:{}", t.links[i].name),
            StreamId::Relay(a, b) => format!("relay:{}~{}", t.nodes[a], t.nodes[b]),
            StreamId::Local(n) => format!("ksa:{}", t.nodes[n]),
        }
    }

    /// One line per stream with its bit counters.
    pub fn ledger_text(&self) -> String {
        let mut out = String::from("stream generated received buffered consumed transferred overhead\n");
        for (id, l) in self.stream_ledger() {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {} {}",
                self.stream_name(id),
                l.generated,
                l.received,
                l.buffered,
                l.consumed,
                l.transferred,
                l.overhead
            );
        }
        let t = self.totals();
        let _ = writeln!(
            out,
            "total {} - {} {} - {}",
            t.generated, t.buffered, t.consumed, t.overhead
        );
        out
    }
}

/// Random bytes from one node's key supply agent.
pub struct KsaRandom<'a> {
    net: &'a mut KeyNetwork,
    node: usize,
}

impl RandomSource for KsaRandom<'_> {
    fn fill(&mut self, dest: &mut [u8]) -> Result<()> {
        let bytes = self.net.supply_randomness(self.node, dest.len() as u64)?;
        dest.copy_from_slice(&bytes);
        Ok(())
    }
}

/// Consecutive draws from one stream that become a single key range.
pub struct KeySession<'a> {
    net: &'a mut KeyNetwork,
    stream: StreamId,
    offset: u64,
    bytes: Vec<u8>,
}

impl KeySession<'_> {
    /// Close the range and leave a copy for the peer to redeem.
    pub fn finish(self) -> KeyHandle {
        let handle = KeyHandle {
            stream: self.stream,
            offset: self.offset,
            len: self.bytes.len() as u64,
        };
        self.net.pending.insert(handle, self.bytes);
        handle
    }
}

impl RandomSource for KeySession<'_> {
    fn fill(&mut self, dest: &mut [u8]) -> Result<()> {
        let (_, bytes) = self.net.take(self.stream, dest.len() as u64, Usage::Consumed)?;
        dest.copy_from_slice(&bytes);
        self.bytes.extend_from_slice(&bytes);
        Ok(())
    }
}

/// Channel authentication parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub scheme: MacScheme,
    pub k: usize,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            scheme: MacScheme::PolyEval,
            k: 256,
        }
    }
}

impl ChannelConfig {
    /// Key bytes for a Wegman-Carter key over `auth_len` authenticated
    /// bytes, excluding the rare extra draw of a rejected field sample.
    pub fn wc_key_bytes(&self, auth_len: usize) -> u64 {
        let kb = self.k.div_ceil(8);
        let hash = match self.scheme {
            MacScheme::PolyEval => kb,
            MacScheme::Toeplitz => crate::uhash::toeplitz_seed_bits(self.k, auth_len).div_ceil(8),
        };
        (hash + kb) as u64
    }

    /// Total key bytes for one message: pad plus tag key.
    pub fn message_key_bytes(&self, from: &str, to: &str, len: usize) -> u64 {
        len as u64 + self.wc_key_bytes(auth_len(from, to, len))
    }
}

fn auth_len(from: &str, to: &str, len: usize) -> usize {
    16 + from.len() + to.len() + len
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SecureEnvelope {
    pub from: String,
    pub to: String,
    pub seq: u64,
    pub key: KeyHandle,
    pub ciphertext: Vec<u8>,
    pub tag: MacTag,
}

impl SecureEnvelope {
    /// The bytes the tag covers: header fields, then the ciphertext.
    fn authenticated(from: &str, to: &str, seq: u64, ciphertext: &[u8]) -> Vec<u8> {
        let mut m = Vec::with_capacity(ciphertext.len() + 24 + from.len() + to.len());
        m.extend_from_slice(&(from.len() as u32).to_be_bytes());
        m.extend_from_slice(from.as_bytes());
        m.extend_from_slice(&(to.len() as u32).to_be_bytes());
        m.extend_from_slice(to.as_bytes());
        m.extend_from_slice(&seq.to_be_bytes());
        m.extend_from_slice(ciphertext);
        m
    }

    pub fn flip_bit(&mut self, bit: usize) {
        if !self.ciphertext.is_empty() {
            let bit = bit % (self.ciphertext.len() * 8);
            self.ciphertext[bit / 8] ^= 0x80 >> (bit % 8);
        }
    }

    pub fn wire_len(&self) -> usize {
        self.ciphertext.len() + self.tag.to_bytes().len() + 8
    }
}

/// Sequence state for OTP + Wegman-Carter channels between named players.
#[derive(Clone, Debug, Default)]
pub struct SecureChannels {
    config: ChannelConfig,
    sent: BTreeMap<(String, String), u64>,
    received: BTreeMap<(String, String), u64>,
}

impl SecureChannels {
    pub fn new(config: ChannelConfig) -> Self {
        SecureChannels {
            config,
            ..Default::default()
        }
    }

    pub fn config(&self) -> ChannelConfig {
        self.config
    }

    /// Encrypt and tag `plaintext` from player `from` at node `a` to player
    /// `to` at node `b`. Fails without issuing key if the pair is short.
    #[allow(clippy::too_many_arguments)]
    pub fn secure_send(
        &mut self,
        net: &mut KeyNetwork,
        from: &str,
        a: usize,
        to: &str,
        b: usize,
        plaintext: &[u8],
    ) -> Result<SecureEnvelope> {
        if a == b {
            return Err(Error::Protocol(format!("{from} and {to} share a node; no channel needed")));
        }
        let need = self.config.message_key_bytes(from, to, plaintext.len());
        let framed = auth_len(from, to, plaintext.len());
        let stream = net.ensure_pair(a, b, need)?;
        let seq = self.sent.get(&(from.to_string(), to.to_string())).copied().unwrap_or(0) + 1;
        let mut session = net.session(stream);
        let pad = session.next_bytes(plaintext.len())?;
        let mut wc = WcKey::draw(self.config.scheme, self.config.k, framed, &mut session)?;
        let handle = session.finish();
        let ciphertext: Vec<u8> = plaintext.iter().zip(&pad).map(|(p, k)| p ^ k).collect();
        let tag = wc_tag(&mut wc, &SecureEnvelope::authenticated(from, to, seq, &ciphertext))?;
        self.sent.insert((from.to_string(), to.to_string()), seq);
        Ok(SecureEnvelope {
            from: from.to_string(),
            to: to.to_string(),
            seq,
            key: handle,
            ciphertext,
            tag,
        })
    }

    /// Verify and decrypt. The key range is redeemed whether or not the
    /// tag checks, so a forged envelope cannot be replayed for a second try.
    pub fn secure_recv(&mut self, net: &mut KeyNetwork, env: &SecureEnvelope) -> Result<Vec<u8>> {
        let pair = (env.from.clone(), env.to.clone());
        let last = self.received.get(&pair).copied().unwrap_or(0);
        if env.seq <= last {
            return Err(Error::Replay {
                from: env.from.clone(),
                seq: env.seq,
                last,
            });
        }
        let key = net.redeem(&env.key)?;
        let n = env.ciphertext.len();
        if key.len() < n {
            return Err(Error::ChannelIntegrity(format!("key range too short from {}", env.from)));
        }
        let mut rest = crate::random::FiniteRandom::new(key[n..].to_vec());
        let framed = auth_len(&env.from, &env.to, n);
        let mut wc = WcKey::draw(self.config.scheme, self.config.k, framed, &mut rest)
            .map_err(|_| Error::ChannelIntegrity(format!("key range malformed from {}", env.from)))?;
        let ok = wc_verify(
            &mut wc,
            &SecureEnvelope::authenticated(&env.from, &env.to, env.seq, &env.ciphertext),
            &env.tag,
        )?;
        if !ok {
            return Err(Error::ChannelIntegrity(format!(
                "tag mismatch on message {} from {}",
                env.seq, env.from
            )));
        }
        self.received.insert(pair, env.seq);
        Ok(env.ciphertext.iter().zip(&key).map(|(c, k)| c ^ k).collect())
    }
}
