//! Durable state for holders, the verifier and the share calculator.
//!
//! File formats, all integers big-endian:
//!
//! * record log: `LTSSLOG1`, then per record `[len u32][payload][chain 32]`
//!   with `chain_i = SHA-256(chain_{i-1} || len || payload)` and
//!   `chain_0 = SHA-256("LTSSLOG1")`.
//! * holder snapshot: `LTSSHLD1`, holder, modulus, round watermark,
//!   fragments, tuples, then a SHA-256 of everything before it.
//! * calculator records: `LTSSCAL1`, then `[id u64][t1 u64][seed]` with
//!   the self-delimiting seed encoding.
//!
//! Rewrites zero the old byte range, sync, then write and truncate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{parse_biguint, FieldRef, PrimeField};
use crate::spss::{HolderShareSet, MaskedResponse, PrecomputedTuple, ReconstructionRequest, ShareFragment, SpssParams};
use crate::uhash::{MacScheme, MacSeed};
use crate::wire::{get_fragment, get_tuple, put_fragment, put_tuple, Reader, Writer};

const LOG_MAGIC: &[u8; 8] = b"LTSSLOG1";
const HOLDER_MAGIC: &[u8; 8] = b"LTSSHLD1";
const CALC_MAGIC: &[u8; 8] = b"LTSSCAL1";

/// Zero the file's current contents, then replace them with `bytes`.
pub fn erase_rewrite(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(path)?;
    let old = f.metadata()?.len();
    if old > 0 {
        f.seek(SeekFrom::Start(0))?;
        let zeros = vec![0u8; 64 * 1024];
        let mut left = old;
        while left > 0 {
            let n = left.min(zeros.len() as u64) as usize;
            f.write_all(&zeros[..n])?;
            left -= n as u64;
        }
        f.sync_data()?;
    }
    f.seek(SeekFrom::Start(0))?;
    f.write_all(bytes)?;
    f.set_len(bytes.len() as u64)?;
    f.sync_all()?;
    Ok(())
}

fn chain_start() -> [u8; 32] {
    Sha256::digest(LOG_MAGIC).into()
}

fn chain_next(prev: &[u8; 32], payload: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(prev);
    h.update((payload.len() as u32).to_be_bytes());
    h.update(payload);
    h.finalize().into()
}

/// Append-only hash-chained record file.
pub struct RecordLog {
    path: Option<PathBuf>,
    records: Vec<Vec<u8>>,
    chain: [u8; 32],
}

impl RecordLog {
    pub fn in_memory() -> Self {
        RecordLog {
            path: None,
            records: Vec::new(),
            chain: chain_start(),
        }
    }

    /// Open or create the log at `path`, verifying the whole chain.
    pub fn open(path: &Path) -> Result<Self> {
        if !path.exists() {
            fs::write(path, LOG_MAGIC)?;
        }
        let bytes = fs::read(path)?;
        let (records, chain) = Self::parse(&bytes, path)?;
        Ok(RecordLog {
            path: Some(path.to_path_buf()),
            records,
            chain,
        })
    }

    pub fn parse(bytes: &[u8], path: &Path) -> Result<(Vec<Vec<u8>>, [u8; 32])> {
        let tamper = |record| Error::TamperDetected {
            path: path.display().to_string(),
            record,
        };
        if bytes.len() < 8 || &bytes[..8] != LOG_MAGIC {
            return Err(tamper(0));
        }
        let mut r = Reader::new(&bytes[8..]);
        let mut chain = chain_start();
        let mut records = Vec::new();
        while r.remaining() > 0 {
            let i = records.len();
            let payload = r.bytes().map_err(|_| tamper(i))?;
            let stored = r.take(32).map_err(|_| tamper(i))?;
            let next = chain_next(&chain, payload);
            if stored != next {
                return Err(tamper(i));
            }
            chain = next;
            records.push(payload.to_vec());
        }
        Ok((records, chain))
    }

    pub fn append(&mut self, payload: &[u8]) -> Result<()> {
        let next = chain_next(&self.chain, payload);
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new().append(true).open(path)?;
            let mut w = Writer::new();
            w.bytes(payload).raw(&next);
            f.write_all(&w.finish())?;
            f.sync_data()?;
        }
        self.chain = next;
        self.records.push(payload.to_vec());
        Ok(())
    }

    pub fn records(&self) -> &[Vec<u8>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Drop every record, erasing the file contents.
    pub fn reset(&mut self) -> Result<()> {
        if let Some(path) = &self.path {
            erase_rewrite(path, LOG_MAGIC)?;
        }
        self.records.clear();
        self.chain = chain_start();
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordKind {
    Mac,
    Digest,
}

/// `(t1, sigma, t2)` keyed by secret id, as held by the verifier.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerifierRecord {
    pub id: u64,
    pub t1: u64,
    pub t2: u64,
    pub kind: RecordKind,
    pub tag: Vec<u8>,
}

impl VerifierRecord {
    fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u64(self.id)
            .u64(self.t1)
            .u64(self.t2)
            .u8(matches!(self.kind, RecordKind::Digest) as u8)
            .bytes(&self.tag);
        w.finish()
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let rec = VerifierRecord {
            id: r.u64()?,
            t1: r.u64()?,
            t2: r.u64()?,
            kind: match r.u8()? {
                0 => RecordKind::Mac,
                1 => RecordKind::Digest,
                k => return Err(Error::Malformed(format!("record kind {k}"))),
            },
            tag: r.bytes()?.to_vec(),
        };
        r.done()?;
        Ok(rec)
    }
}

pub struct VerifierStore {
    log: RecordLog,
    records: Vec<VerifierRecord>,
}

impl VerifierStore {
    pub fn in_memory() -> Self {
        VerifierStore {
            log: RecordLog::in_memory(),
            records: Vec::new(),
        }
    }

    pub fn open(path: &Path) -> Result<Self> {
        let log = RecordLog::open(path)?;
        let records = log
            .records()
            .iter()
            .enumerate()
            .map(|(i, r)| {
                VerifierRecord::decode(r).map_err(|_| Error::TamperDetected {
                    path: path.display().to_string(),
                    record: i,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(VerifierStore { log, records })
    }

    /// Append a record. Receipt times must not go backwards.
    pub fn append(&mut self, rec: VerifierRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if rec.t2 < last.t2 {
                return Err(Error::Protocol(format!(
                    "verifier clock went backwards: {} after {}",
                    rec.t2, last.t2
                )));
            }
        }
        if self.find(rec.id, rec.t1).is_some() {
            return Err(Error::Protocol(format!("record ({}, {}) already held", rec.id, rec.t1)));
        }
        self.log.append(&rec.encode())?;
        self.records.push(rec);
        Ok(())
    }

    pub fn find(&self, id: u64, t1: u64) -> Option<&VerifierRecord> {
        self.records.iter().find(|r| r.id == id && r.t1 == t1)
    }

    pub fn records(&self) -> &[VerifierRecord] {
        &self.records
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrashPoint {
    /// After the consumption journal is durable, before anything else.
    AfterJournal,
    /// After the snapshot rewrite, before the journal is compacted.
    AfterSnapshot,
}

/// One holder's shares and precomputed tuples, with a journal of consumed
/// tuple ids written before any tuple value leaves the store.
pub struct HolderStore {
    dir: Option<PathBuf>,
    field: FieldRef,
    set: HolderShareSet,
    watermark: u64,
    journal: RecordLog,
}

impl HolderStore {
    pub fn in_memory(holder: u64, field: FieldRef) -> Self {
        HolderStore {
            dir: None,
            field,
            set: HolderShareSet::new(holder),
            watermark: 0,
            journal: RecordLog::in_memory(),
        }
    }

    fn snapshot_path(dir: &Path) -> PathBuf {
        dir.join("snapshot.bin")
    }

    fn journal_path(dir: &Path) -> PathBuf {
        dir.join("journal.log")
    }

    /// Load from `dir`, creating an empty store if it holds nothing yet.
    /// Journaled consumptions are replayed over the snapshot.
    pub fn open(dir: &Path, holder: u64, field: FieldRef) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let snap = Self::snapshot_path(dir);
        let (set, watermark) = if snap.exists() {
            decode_snapshot(&fs::read(&snap)?, &field, &snap)?
        } else {
            (HolderShareSet::new(holder), 0)
        };
        if set.holder() != holder {
            return Err(Error::Config(format!(
                "{} belongs to holder {}, not {holder}",
                snap.display(),
                set.holder()
            )));
        }
        let journal = RecordLog::open(&Self::journal_path(dir))?;
        let mut store = HolderStore {
            dir: Some(dir.to_path_buf()),
            field,
            set,
            watermark,
            journal,
        };
        let replay: Vec<u64> = store
            .journal
            .records()
            .iter()
            .map(|r| Reader::new(r).u64s())
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        store.set.discard_tuples(&replay);
        if !store.journal.is_empty() {
            store.persist()?;
            store.journal.reset()?;
        }
        Ok(store)
    }

    pub fn set(&self) -> &HolderShareSet {
        &self.set
    }

    pub fn holder(&self) -> u64 {
        self.set.holder()
    }

    pub fn field(&self) -> &FieldRef {
        &self.field
    }

    /// Lowest round id this holder will still accept.
    pub fn watermark(&self) -> u64 {
        self.watermark
    }

    pub fn snapshot_bytes(&self) -> Vec<u8> {
        encode_snapshot(&self.set, &self.field, self.watermark)
    }

    fn persist(&mut self) -> Result<()> {
        if let Some(dir) = &self.dir {
            erase_rewrite(&Self::snapshot_path(dir), &self.snapshot_bytes())?;
        }
        Ok(())
    }

    pub fn store_fragment(&mut self, fragment: ShareFragment) -> Result<()> {
        self.set.store(fragment)?;
        self.persist()
    }

    pub fn accept_round(
        &mut self,
        params: &SpssParams,
        round: u64,
        participants: &[u64],
        contributions: &[crate::spss::PrecomputeContribution],
    ) -> Result<()> {
        if round < self.watermark {
            return Err(Error::SingleUse("precompute round id below watermark"));
        }
        self.set.accept_round(params, round, participants, contributions)?;
        self.watermark = round + 1;
        Ok(())
    }

    /// Persist after a batch of [`HolderStore::accept_round`] calls.
    pub fn commit(&mut self) -> Result<()> {
        self.persist()
    }

    /// Replace share values in place (renewal). The old values are erased
    /// from disk by the rewrite.
    pub fn update_shares(&mut self, f: impl FnOnce(&mut HolderShareSet) -> Result<()>) -> Result<()> {
        let mut next = self.set.clone();
        f(&mut next)?;
        self.set = next;
        self.persist()
    }

    fn journal_consumed(&mut self, ids: &[u64], crash: Option<CrashPoint>) -> Result<()> {
        let mut w = Writer::new();
        w.u64s(ids);
        self.journal.append(&w.finish())?;
        if crash == Some(CrashPoint::AfterJournal) {
            return Err(Error::Crash);
        }
        Ok(())
    }

    fn settle(&mut self, crash: Option<CrashPoint>) -> Result<()> {
        self.persist()?;
        if crash == Some(CrashPoint::AfterSnapshot) {
            return Err(Error::Crash);
        }
        self.journal.reset()
    }

    /// Take the lowest-numbered tuple, journaling it first.
    pub fn consume_tuple(&mut self, crash: Option<CrashPoint>) -> Result<PrecomputedTuple> {
        let id = *self.set.available_tuple_ids().first().ok_or(Error::PrecomputationExhausted {
            needed: 1,
            available: 0,
        })?;
        self.journal_consumed(&[id], crash)?;
        let tuple = self.set.take_tuple(id).expect("listed as available");
        self.settle(crash)?;
        Ok(tuple)
    }

    /// Answer a reconstruction request. The tuples it uses are journaled as
    /// consumed before the response is computed.
    pub fn respond(
        &mut self,
        params: &SpssParams,
        req: &ReconstructionRequest,
        crash: Option<CrashPoint>,
    ) -> Result<MaskedResponse> {
        self.set.check_request(params, req)?;
        self.journal_consumed(&req.tuple_ids, crash)?;
        let response = self.set.respond(params, req)?;
        self.settle(crash)?;
        Ok(response)
    }

    pub fn discard_tuples(&mut self, ids: &[u64]) -> Result<()> {
        self.journal_consumed(ids, None)?;
        self.set.discard_tuples(ids);
        self.settle(None)
    }
}

fn encode_snapshot(set: &HolderShareSet, field: &FieldRef, watermark: u64) -> Vec<u8> {
    let mut w = Writer::new();
    w.raw(HOLDER_MAGIC).u64(set.holder()).str(&field.modulus().to_str_radix(16)).u64(watermark);
    let secrets: Vec<_> = set.secrets().collect();
    w.u32(secrets.len() as u32);
    for s in secrets {
        put_fragment(&mut w, s);
    }
    let tuples: Vec<_> = set.tuples().collect();
    w.u32(tuples.len() as u32);
    for t in tuples {
        put_tuple(&mut w, t);
    }
    let mut bytes = w.finish();
    let digest = Sha256::digest(&bytes);
    bytes.extend_from_slice(&digest);
    bytes
}

fn decode_snapshot(bytes: &[u8], field: &FieldRef, path: &Path) -> Result<(HolderShareSet, u64)> {
    let tamper = || Error::TamperDetected {
        path: path.display().to_string(),
        record: 0,
    };
    if bytes.len() < 40 || &bytes[..8] != HOLDER_MAGIC {
        return Err(tamper());
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(tamper());
    }
    let mut r = Reader::new(&body[8..]);
    let holder = r.u64()?;
    let modulus = parse_biguint(&format!("0x{}", r.str()?))?;
    if &modulus != field.modulus() {
        return Err(Error::FieldMismatch);
    }
    let watermark = r.u64()?;
    let n = r.u32()?;
    let secrets = (0..n).map(|_| get_fragment(&mut r, field)).collect::<Result<Vec<_>>>()?;
    let n = r.u32()?;
    let tuples = (0..n).map(|_| get_tuple(&mut r, field)).collect::<Result<Vec<_>>>()?;
    r.done()?;
    Ok((HolderShareSet::from_parts(holder, secrets, tuples), watermark))
}

/// What the share calculator keeps per registered secret.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CalculatorRecord {
    pub id: u64,
    pub t1: u64,
    pub seed: MacSeed,
}

impl CalculatorRecord {
    fn encode_into(&self, w: &mut Writer) {
        w.u64(self.id).u64(self.t1);
        match self.seed.scheme() {
            MacScheme::PolyEval => w.raw(&self.seed.key_bytes()),
            MacScheme::Toeplitz => w.bytes(&self.seed.key_bytes()),
        };
    }

    /// Persistent bytes this record occupies: id, t1 and the seed key,
    /// plus a length prefix for the variable-size Toeplitz key.
    pub fn size_bytes(&self) -> usize {
        let prefix = match self.seed.scheme() {
            MacScheme::PolyEval => 0,
            MacScheme::Toeplitz => 4,
        };
        16 + prefix + self.seed.size_bytes()
    }
}

/// Calculator state: one fixed header naming the MAC scheme and `k`, then
/// `(id, t1, R_MAC)` per secret.
pub struct CalculatorStore {
    path: Option<PathBuf>,
    scheme: MacScheme,
    k: usize,
    records: BTreeMap<u64, CalculatorRecord>,
}

impl CalculatorStore {
    pub fn in_memory(scheme: MacScheme, k: usize) -> Self {
        CalculatorStore {
            path: None,
            scheme,
            k,
            records: BTreeMap::new(),
        }
    }

    pub fn open(path: &Path, scheme: MacScheme, k: usize) -> Result<Self> {
        let mut store = CalculatorStore {
            path: Some(path.to_path_buf()),
            scheme,
            k,
            records: BTreeMap::new(),
        };
        if path.exists() {
            let (s, kk, records) = decode_calculator(&fs::read(path)?, path)?;
            if (s, kk) != (scheme, k) {
                return Err(Error::Config(format!(
                    "{} holds {s:?} seeds with k = {kk}, configured {scheme:?} with k = {k}",
                    path.display()
                )));
            }
            store.records = records;
        } else {
            fs::write(path, store.file_bytes())?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, rec: CalculatorRecord) -> Result<()> {
        if rec.seed.scheme() != self.scheme || rec.seed.k() != self.k {
            return Err(Error::Config("seed does not match the calculator's MAC parameters".into()));
        }
        if !rec.seed.is_consumed() {
            return Err(Error::Protocol("only seeds bound to a datum are stored".into()));
        }
        if self.records.contains_key(&rec.id) {
            return Err(Error::Protocol(format!("secret id {} already registered", rec.id)));
        }
        if let Some(path) = &self.path {
            let mut w = Writer::new();
            rec.encode_into(&mut w);
            let mut f = OpenOptions::new().append(true).open(path)?;
            f.write_all(&w.finish())?;
            f.sync_data()?;
        }
        self.records.insert(rec.id, rec);
        Ok(())
    }

    pub fn get(&self, id: u64) -> Option<&CalculatorRecord> {
        self.records.get(&id)
    }

    pub fn records(&self) -> impl Iterator<Item = &CalculatorRecord> {
        self.records.values()
    }

    /// Erase a record from memory and disk.
    pub fn remove(&mut self, id: u64) -> Result<Option<CalculatorRecord>> {
        let rec = self.records.remove(&id);
        if rec.is_some() {
            if let Some(path) = &self.path {
                erase_rewrite(path, &self.file_bytes())?;
            }
        }
        Ok(rec)
    }

    /// The exact bytes the store persists.
    pub fn file_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(CALC_MAGIC).u8(self.scheme.code()).u32(self.k as u32);
        for r in self.records.values() {
            r.encode_into(&mut w);
        }
        w.finish()
    }

    pub fn header_bytes() -> usize {
        CALC_MAGIC.len() + 5
    }

    pub fn state_bytes(&self, id: u64) -> usize {
        self.records.get(&id).map(CalculatorRecord::size_bytes).unwrap_or(0)
    }
}

type CalculatorContents = (MacScheme, usize, BTreeMap<u64, CalculatorRecord>);

fn decode_calculator(bytes: &[u8], path: &Path) -> Result<CalculatorContents> {
    if bytes.len() < CalculatorStore::header_bytes() || &bytes[..8] != CALC_MAGIC {
        return Err(Error::TamperDetected {
            path: path.display().to_string(),
            record: 0,
        });
    }
    let mut r = Reader::new(&bytes[8..]);
    let scheme = MacScheme::from_code(r.u8()?)?;
    let k = r.u32()? as usize;
    let key_len = crate::uhash::hash_field(k)?.byte_len();
    let mut out = BTreeMap::new();
    while r.remaining() > 0 {
        let id = r.u64()?;
        let t1 = r.u64()?;
        let key = match scheme {
            MacScheme::PolyEval => r.take(key_len)?,
            MacScheme::Toeplitz => r.bytes()?,
        };
        let seed = MacSeed::bound_from_key(scheme, k, key)?;
        out.insert(id, CalculatorRecord { id, t1, seed });
    }
    Ok((scheme, k, out))
}

/// Human-readable dump of any store file or a transcript.
pub fn inspect(path: &Path, field: Option<&FieldRef>) -> Result<String> {
    if path.is_dir() {
        let mut entries: Vec<_> = std::fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        let mut out = String::new();
        for e in entries {
            let _ = writeln!(out, "== {}", e.display());
            out.push_str(&inspect(&e, field)?);
        }
        return Ok(out);
    }
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut out = String::new();
    if bytes.starts_with(LOG_MAGIC) {
        let (records, _) = RecordLog::parse(&bytes, path)?;
        let verifier: Result<Vec<_>> = records.iter().map(|r| VerifierRecord::decode(r)).collect();
        match verifier {
            Ok(recs) if recs.is_empty() => {
                let _ = writeln!(out, "record log: 0 records");
            }
            Ok(recs) => {
                let _ = writeln!(out, "verifier log: {} records", recs.len());
                for r in recs {
                    let _ = writeln!(
                        out,
                        "id={} t1={} t2={} kind={:?} sigma={}",
                        r.id,
                        r.t1,
                        r.t2,
                        r.kind,
                        hex::encode(&r.tag)
                    );
                }
            }
            Err(_) => {
                let _ = writeln!(out, "journal: {} records", records.len());
                for r in &records {
                    let _ = writeln!(out, "consumed {:?}", Reader::new(r).u64s()?);
                }
            }
        }
    } else if bytes.starts_with(HOLDER_MAGIC) {
        let field = match field {
            Some(f) => f.clone(),
            None => {
                // the snapshot names its own modulus
                let mut r = Reader::new(&bytes[16..]);
                PrimeField::new(parse_biguint(&format!("0x{}", r.str()?))?)?
            }
        };
        let (set, watermark) = decode_snapshot(&bytes, &field, path)?;
        let _ = writeln!(
            out,
            "holder {}: {} secrets, {} tuples, watermark {}",
            set.holder(),
            set.secrets().count(),
            set.tuple_count(),
            watermark
        );
        for s in set.secrets() {
            let _ = writeln!(out, "secret id={} bytes={} shares={}", s.secret_id, s.byte_len, s.data_shares.len());
        }
        let ids: BTreeSet<u64> = set.tuples().map(|t| t.id).collect();
        if let (Some(lo), Some(hi)) = (ids.first(), ids.last()) {
            let _ = writeln!(out, "tuples {lo}..={hi}");
        }
    } else if bytes.starts_with(CALC_MAGIC) {
        let (scheme, k, recs) = decode_calculator(&bytes, path)?;
        let _ = writeln!(out, "calculator: {} records, {scheme:?} k={k}", recs.len());
        for r in recs.values() {
            let _ = writeln!(
                out,
                "id={} t1={} state_bytes={}",
                r.id,
                r.t1,
                r.size_bytes()
            );
        }
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::Malformed(format!("{}: unknown format", path.display())))?;
        let _ = writeln!(out, "transcript: {} lines", text.lines().count());
        out.push_str(&text);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::SeededRandom;
    use crate::spss::{precompute_round, spss_register, spss_request, Password};
    use crate::uhash::MacScheme;

    fn params() -> SpssParams {
        SpssParams::new(3, 4, PrimeField::mersenne(31).unwrap()).unwrap()
    }

    fn populated(params: &SpssParams, secrets: u64, rounds: u64) -> Vec<HolderShareSet> {
        let pw = Password::from_element(params.field().element(77u32)).unwrap();
        let mut rng = SeededRandom::new(4);
        let mut hs: Vec<_> = (1..=4).map(HolderShareSet::new).collect();
        for id in 0..secrets {
            let reg = spss_register(id, 0, b"stored bytes", &pw, params, &mut rng).unwrap();
            for (h, f) in hs.iter_mut().zip(reg.fragments) {
                h.store(f).unwrap();
            }
        }
        let mut rs: Vec<_> = (0..4).map(SeededRandom::new).collect();
        for round in 0..rounds {
            precompute_round(params, &mut hs, round, &mut rs).unwrap();
        }
        hs
    }

    fn load(dir: &Path, set: &HolderShareSet, field: &FieldRef) -> HolderStore {
        let mut s = HolderStore::open(dir, set.holder(), field.clone()).unwrap();
        s.update_shares(|x| {
            *x = set.clone();
            Ok(())
        })
        .unwrap();
        s
    }

    #[test]
    fn empty_log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.log");
        VerifierStore::open(&p).unwrap();
        assert!(VerifierStore::open(&p).unwrap().records().is_empty());
        assert!(inspect(&p, None).unwrap().starts_with("record log: 0 records"));
    }

    #[test]
    fn verifier_log_append_reload_and_tamper() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.log");
        let mut v = VerifierStore::open(&p).unwrap();
        let rec = |id, t2| VerifierRecord {
            id,
            t1: 10,
            t2,
            kind: RecordKind::Mac,
            tag: vec![0xAB; 32],
        };
        v.append(rec(1, 11)).unwrap();
        let prefix = fs::read(&p).unwrap();
        v.append(rec(2, 12)).unwrap();
        assert!(v.append(rec(3, 5)).is_err());
        assert!(v.append(rec(2, 13)).is_err());
        let after = fs::read(&p).unwrap();
        assert_eq!(&after[..prefix.len()], &prefix[..]);
        let v2 = VerifierStore::open(&p).unwrap();
        assert_eq!(v2.records(), v.records());
        let dump = inspect(&p, None).unwrap();
        assert_eq!(dump.lines().filter(|l| l.starts_with("id=")).count(), 2);
        for pos in [3usize, 20, after.len() - 1] {
            let mut bad = after.clone();
            bad[pos] ^= 0x01;
            fs::write(&p, &bad).unwrap();
            assert!(matches!(VerifierStore::open(&p), Err(Error::TamperDetected { .. })), "byte {pos}");
            assert!(inspect(&p, None).is_err());
        }
    }

    #[test]
    fn holder_store_round_trip() {
        let params = params();
        let hs = populated(&params, 3, 7);
        let dir = tempfile::tempdir().unwrap();
        let field = params.field().clone();
        let mut s = load(dir.path(), &hs[0], &field);
        s.consume_tuple(None).unwrap();
        s.consume_tuple(None).unwrap();
        let reloaded = HolderStore::open(dir.path(), 1, field.clone()).unwrap();
        assert_eq!(reloaded.set(), s.set());
        assert_eq!(reloaded.set().tuple_count(), 5);
        assert_eq!(reloaded.set().secrets().count(), 3);
        assert!(HolderStore::open(dir.path(), 2, field.clone()).is_err());
        let other = PrimeField::new(31u32.into()).unwrap();
        assert!(HolderStore::open(dir.path(), 1, other).is_err());
        let dump = inspect(&dir.path().join("snapshot.bin"), None).unwrap();
        assert!(dump.starts_with("holder 1: 3 secrets, 5 tuples"));
    }

    #[test]
    fn consume_exhaustion() {
        let params = params();
        let hs = populated(&params, 1, 2);
        let mut s = HolderStore::in_memory(1, params.field().clone());
        s.update_shares(|x| {
            *x = hs[0].clone();
            Ok(())
        })
        .unwrap();
        let a = s.consume_tuple(None).unwrap();
        let b = s.consume_tuple(None).unwrap();
        assert_ne!(a.id, b.id);
        assert!(matches!(s.consume_tuple(None), Err(Error::PrecomputationExhausted { .. })));
    }

    #[test]
    fn crash_after_journal_never_reissues() {
        let params = params();
        let hs = populated(&params, 1, 3);
        let field = params.field().clone();
        for point in [CrashPoint::AfterJournal, CrashPoint::AfterSnapshot] {
            let dir = tempfile::tempdir().unwrap();
            let mut s = load(dir.path(), &hs[0], &field);
            let first = s.set().available_tuple_ids()[0];
            assert!(matches!(s.consume_tuple(Some(point)), Err(Error::Crash)));
            drop(s);
            let reloaded = HolderStore::open(dir.path(), 1, field.clone()).unwrap();
            assert!(!reloaded.set().available_tuple_ids().contains(&first));
            assert_eq!(reloaded.set().tuple_count(), 2);
        }
    }

    #[test]
    fn respond_journals_before_release() {
        let params = params();
        let hs = populated(&params, 1, 8);
        let field = params.field().clone();
        let dir = tempfile::tempdir().unwrap();
        let mut s = load(dir.path(), &hs[0], &field);
        let l1 = hs[0].secret(0).unwrap().data_shares.len();
        assert!(l1 <= 8);
        let ids: Vec<u64> = (0..l1 as u64).collect();
        let pw = Password::from_element(field.element(77u32)).unwrap();
        let reqs = spss_request(&params, 0, &pw, &[1, 2, 3], &ids, &mut SeededRandom::new(1)).unwrap();
        assert!(matches!(s.respond(&params, &reqs[0].1, Some(CrashPoint::AfterJournal)), Err(Error::Crash)));
        let mut s = HolderStore::open(dir.path(), 1, field.clone()).unwrap();
        assert!(matches!(
            s.respond(&params, &reqs[0].1, None),
            Err(Error::PrecomputationExhausted { .. })
        ));
        // a malformed request journals nothing
        let mut bad = reqs[0].1.clone();
        bad.subset = vec![1, 2];
        let before = s.set().tuple_count();
        assert!(s.respond(&params, &bad, None).is_err());
        assert_eq!(s.set().tuple_count(), before);
    }

    #[test]
    fn renewal_rewrite_erases_old_values() {
        let params = params();
        let hs = populated(&params, 1, 0);
        let field = params.field().clone();
        let dir = tempfile::tempdir().unwrap();
        let mut s = load(dir.path(), &hs[0], &field);
        let old: Vec<Vec<u8>> = s.set().secret(0).unwrap().data_shares.iter().map(|e| e.to_be_bytes()).collect();
        s.update_shares(|set| {
            let f = set.secret_mut(0).unwrap();
            for e in f.data_shares.iter_mut() {
                *e = &*e + &field.element(1u32);
            }
            Ok(())
        })
        .unwrap();
        let on_disk = fs::read(dir.path().join("snapshot.bin")).unwrap();
        let fresh = s.snapshot_bytes();
        assert_eq!(on_disk, fresh);
        let new: Vec<Vec<u8>> = s.set().secret(0).unwrap().data_shares.iter().map(|e| e.to_be_bytes()).collect();
        assert_ne!(old, new);
    }

    #[test]
    fn watermark_blocks_round_reuse() {
        let params = params();
        let field = params.field().clone();
        let mut s = HolderStore::in_memory(1, field);
        let all = [1u64, 2, 3, 4];
        let contribs: Vec<_> = all
            .iter()
            .flat_map(|&m| {
                crate::spss::precompute_contributions(&params, m, 5, &all, &mut SeededRandom::new(m)).unwrap()
            })
            .filter(|c| c.to == 1)
            .collect();
        s.accept_round(&params, 5, &all, &contribs).unwrap();
        assert_eq!(s.watermark(), 6);
        s.consume_tuple(None).unwrap();
        assert!(s.accept_round(&params, 5, &all, &contribs).is_err());
    }

    #[test]
    fn calculator_store_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = SeededRandom::new(3);
        for (scheme, k) in [(MacScheme::PolyEval, 256), (MacScheme::Toeplitz, 64)] {
            let p = dir.path().join(format!("calc-{scheme:?}.bin"));
            let mut c = CalculatorStore::open(&p, scheme, k).unwrap();
            for id in [1u64, 2] {
                let mut seed = MacSeed::draw(scheme, k, 40, &mut rng).unwrap();
                assert!(c.insert(CalculatorRecord { id, t1: 7, seed: seed.clone() }).is_err());
                seed.tag(b"bound").unwrap();
                c.insert(CalculatorRecord { id, t1: 100 + id, seed }).unwrap();
            }
            assert_eq!(fs::read(&p).unwrap(), c.file_bytes());
            let per: usize = [1, 2].iter().map(|&i| c.state_bytes(i)).sum();
            assert_eq!(fs::metadata(&p).unwrap().len() as usize, CalculatorStore::header_bytes() + per);
            if scheme == MacScheme::PolyEval {
                assert_eq!(c.state_bytes(1), 8 + 8 + 32);
            }
            let reopened = CalculatorStore::open(&p, scheme, k).unwrap();
            assert_eq!(reopened.get(2), c.get(2));
            assert!(CalculatorStore::open(&p, scheme, k + 8).is_err());
            c.remove(1).unwrap();
            assert_eq!(fs::read(&p).unwrap(), c.file_bytes());
            assert!(CalculatorStore::open(&p, scheme, k).unwrap().get(1).is_none());
            assert!(inspect(&p, None).unwrap().starts_with("calculator: 1 records"));
        }
    }
}
