//! Third-party verification of released data.
//!
//! At registration the share calculator tags `t1 | D` under a fresh seed,
//! sends `(id, t1, sigma)` to the verifier and keeps only `(id, t1, seed)`.
//! Later the calculator re-tags a candidate `D''` and the verifier compares.
//! The computational option replaces the tag by a truncated SHA-512 digest
//! that the owner and end user compute themselves.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::random::RandomSource;
use crate::stores::{CalculatorRecord, CalculatorStore, RecordKind, VerifierRecord, VerifierStore};
use crate::uhash::{cr_hash, MacScheme, MacSeed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TpvMode {
    /// Information-theoretic: seed-keyed tag held by the calculator.
    Its,
    /// Collision-resistant digest; the calculator takes no part in tagging.
    Computational,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TpvConfig {
    pub mode: TpvMode,
    pub scheme: MacScheme,
    pub k: usize,
    /// Digest length in computational mode, at most 512.
    pub digest_bits: usize,
}

impl Default for TpvConfig {
    fn default() -> Self {
        TpvConfig {
            mode: TpvMode::Its,
            scheme: MacScheme::PolyEval,
            k: 256,
            digest_bits: 512,
        }
    }
}

impl TpvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("tpv.k: {} is too small", self.k)));
        }
        if self.digest_bits == 0 || self.digest_bits > 512 {
            return Err(Error::Config(format!("tpv.digest_bits: {} not in 1..=512", self.digest_bits)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Phase {
    Registration,
    Reconstruction,
    IntegrityCheck,
    Refutation,
    Renewal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Fail,
    Abort,
    RefutationSuccess,
    RefutationFail,
    CannotAdjudicate,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Registration => "registration",
            Phase::Reconstruction => "reconstruction",
            Phase::IntegrityCheck => "integrity-check",
            Phase::Refutation => "refutation",
            Phase::Renewal => "renewal",
        })
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Success => "success",
            Outcome::Fail => "fail",
            Outcome::Abort => "abort",
            Outcome::RefutationSuccess => "refutation-success",
            Outcome::RefutationFail => "refutation-fail",
            Outcome::CannotAdjudicate => "cannot-adjudicate",
        })
    }
}

impl Outcome {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => Outcome::Success,
            1 => Outcome::Fail,
            2 => Outcome::Abort,
            3 => Outcome::RefutationSuccess,
            4 => Outcome::RefutationFail,
            5 => Outcome::CannotAdjudicate,
            _ => return Err(Error::Malformed(format!("outcome code {c}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerdictEvent {
    pub secret_id: u64,
    pub phase: Phase,
    pub outcome: Outcome,
    pub detail: String,
}

impl fmt::Display for VerdictEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "verdict id={} phase={} outcome={}", self.secret_id, self.phase, self.outcome)?;
        if !self.detail.is_empty() {
            write!(f, " detail={}", self.detail)?;
        }
        Ok(())
    }
}

/// The tagged message `t1 | D`, with `t1` as 8 big-endian bytes.
pub fn tagged_message(t1: u64, data: &[u8]) -> Vec<u8> {
    let mut m = Vec::with_capacity(8 + data.len());
    m.extend_from_slice(&t1.to_be_bytes());
    m.extend_from_slice(data);
    m
}

/// Truncated SHA-512 of `t1 | D`.
pub fn cs_digest(t1: u64, data: &[u8], bits: usize) -> Vec<u8> {
    let full = cr_hash(&tagged_message(t1, data));
    let mut out = full[..bits.div_ceil(8)].to_vec();
    if !bits.is_multiple_of(8) {
        let last = out.len() - 1;
        out[last] &= 0xFFu8 << (8 - bits % 8);
    }
    out
}

/// Calculator side of registration: draw `R_MAC`, tag `t1 | D`, keep only
/// `(id, t1, R_MAC)`. Returns `sigma` for the verifier.
pub fn calc_register(
    store: &mut CalculatorStore,
    cfg: &TpvConfig,
    id: u64,
    t1: u64,
    data: &[u8],
    rng: &mut impl RandomSource,
) -> Result<Vec<u8>> {
    let message = tagged_message(t1, data);
    let mut seed = MacSeed::draw(cfg.scheme, cfg.k, message.len(), rng)?;
    let sigma = seed.tag(&message)?;
    store.insert(CalculatorRecord { id, t1, seed })?;
    Ok(sigma.to_bytes())
}

/// `sigma''` for a candidate datum. `None` when the candidate cannot be
/// tagged under the stored seed, which only happens for data that differ
/// from the registered datum.
pub fn calc_tag(store: &CalculatorStore, id: u64, t1: u64, data: &[u8]) -> Result<Option<Vec<u8>>> {
    let rec = store
        .get(id)
        .filter(|r| r.t1 == t1)
        .ok_or(Error::UnknownRegistration { id, t1 })?;
    Ok(rec.seed.retag(&tagged_message(t1, data)).ok().map(|t| t.to_bytes()))
}

/// Verifier side of registration: stamp with the local clock and append.
pub fn verifier_accept(
    store: &mut VerifierStore,
    id: u64,
    t1: u64,
    kind: RecordKind,
    tag: Vec<u8>,
    t2: u64,
) -> Result<()> {
    store.append(VerifierRecord { id, t1, t2, kind, tag })
}

/// Integrity check: success iff the record exists, the tags agree and
/// `t1 <= t2`.
pub fn judge_check(store: &VerifierStore, id: u64, t1: u64, candidate: Option<&[u8]>) -> Outcome {
    match store.find(id, t1) {
        Some(rec) if rec.t1 <= rec.t2 && candidate == Some(rec.tag.as_slice()) => Outcome::Success,
        _ => Outcome::Fail,
    }
}

/// Refutation: the owner shows a claimed datum was not the registered one.
pub fn judge_refute(store: &VerifierStore, id: u64, t1: u64, candidate: Option<&[u8]>) -> Outcome {
    match store.find(id, t1) {
        None => Outcome::CannotAdjudicate,
        Some(rec) if candidate == Some(rec.tag.as_slice()) => Outcome::RefutationFail,
        Some(_) => Outcome::RefutationSuccess,
    }
}
