//! Verifiable share renewal with Pedersen commitments.
//!
//! Every holder `i` picks, per shared value, two polynomials `P_i1`, `P_i2`
//! with zero constant term, publishes `eps_{i,k} = g^{a_k} h^{b_k} mod p`
//! for their non-constant coefficients and sends `(P_i1(c), P_i2(c))` to
//! each holder `c`. A recipient accepts when
//! `g^{P1(c)} h^{P2(c)} = prod_k eps_k^{c^k} mod p`. After unanimous
//! acceptance every holder adds `sum_d P_d1(c) + P_d2(c)` to its share.
//! Exponents live in `F_q`, bases in the order-`q` subgroup of `Z_p^*`.

use std::sync::{Arc, OnceLock};

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{is_probable_prime, mod_exp, parse_biguint, FieldElement, FieldRef, Polynomial, PrimeField};
use crate::random::RandomSource;
use crate::spss::{HolderShareSet, SpssParams};

const RFC5114_P: &str = "0x\
87A8E61DB4B6663CFFBBD19C651959998CEEF608660DD0F25D2CEED4435E3B00\
E00DF8F1D61957D4FAF7DF4561B2AA3016C3D91134096FAA3BF4296D830E9A7C\
209E0C6497517ABD5A8A9D306BCF67ED91F9E6725B4758C022E0B1EF4275BF7B\
6C5BFC11D45F9088B941F54EB1E59BB8BC39A0BF12307F5C4FDB70C581B23F76\
B63ACAE1CAA6B7902D52526735488A0EF13C6D9A51BFA4AB3AD8347796524D8E\
F6A167B5A41825D967E144E5140564251CCACB83E6B486F6B3CA3F7971506026\
C0B857F689962856DED4010ABD0BE621C3A3960A54E710C375F26375D7014103\
A4B54330C198AF126116D2276E11715F693877FAD7EF09CADB094AE91E1A1597";

const RFC5114_G: &str = "0x\
3FB32C9B73134D0B2E77506660EDBD484CA7B18F21EF205407F4793A1A0BA125\
10DBC15077BE463FFF4FED4AAC0BB555BE3A6C1B0C6B47B1BC3773BF7E8C6F62\
901228F8C28CBB18A55AE31341000A650196F931C77A57F2DDF463E5E9EC144B\
777DE62AAAB8A8628AC376D282D6ED3864E67982428EBC831D14348F6F2F9193\
B5045AF2767164E1DFC967C1FB3F2E55A4BD1BFFE83B9C80D052B985D182EA0A\
DB2A3B7313D3FE14C8484B1E052588B9B7D2BBD2DF016199ECD06E1557CD0915\
B3353BBB64E0EC377FD028370DF92B52C7891428CDC67EB6184B523D1DB246C3\
2F63078490F00EF8D647D148D47954515E2327CFEF98C582664B4C0F6CC41659";

const RFC5114_Q: &str = "0x8CF83642A709A097B447997640129DA299B1A47D1EB3750BA308B0FE64F5FBD3";

const H_LABEL: &[u8] = b"ltss renewal generator h";

/// Precomputed powers `base^(d * 256^w)` for byte-windowed exponentiation.
struct FixedBase {
    table: Vec<Vec<BigUint>>,
}

impl FixedBase {
    fn new(base: &BigUint, modulus: &BigUint, exp_bits: usize) -> Self {
        let windows = exp_bits.div_ceil(8).max(1);
        let mut table = Vec::with_capacity(windows);
        let mut step = base % modulus;
        for _ in 0..windows {
            let mut row = Vec::with_capacity(256);
            row.push(BigUint::one());
            for d in 1..256 {
                let next = (&row[d - 1] * &step) % modulus;
                row.push(next);
            }
            step = (&row[255] * &step) % modulus;
            table.push(row);
        }
        FixedBase { table }
    }

    fn pow_into(&self, acc: &mut BigUint, exp: &BigUint, modulus: &BigUint) {
        for (w, byte) in exp.to_bytes_le().iter().enumerate() {
            if *byte != 0 {
                *acc = &*acc * &self.table[w][*byte as usize] % modulus;
            }
        }
    }
}

pub struct RenewalGroup {
    name: String,
    p: BigUint,
    q: BigUint,
    g: BigUint,
    h: BigUint,
    field: FieldRef,
    tables: OnceLock<(FixedBase, FixedBase)>,
}

impl std::fmt::Debug for RenewalGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RenewalGroup({}, p: {} bits, q: {} bits)", self.name, self.p.bits(), self.q.bits())
    }
}

pub type GroupRef = Arc<RenewalGroup>;

impl RenewalGroup {
    pub fn new(name: &str, p: BigUint, q: BigUint, g: BigUint, h: BigUint) -> Result<GroupRef> {
        if !is_probable_prime(&p) || !is_probable_prime(&q) {
            return Err(Error::Config(format!("{name}: p and q must be prime")));
        }
        if !(&p - 1u32).is_multiple_of(&q) {
            return Err(Error::Config(format!("{name}: q must divide p - 1")));
        }
        for (label, x) in [("g", &g), ("h", &h)] {
            if x.is_zero() || x.is_one() || x >= &p || !mod_exp(x, &q, &p)?.is_one() {
                return Err(Error::Config(format!(
                    "{name}: {label} must be a non-identity element of the order-q subgroup"
                )));
            }
        }
        if g == h {
            return Err(Error::Config(format!("{name}: g and h must differ")));
        }
        let field = PrimeField::new(q.clone())?;
        Ok(Arc::new(RenewalGroup {
            name: name.to_string(),
            p,
            q,
            g,
            h,
            field,
            tables: OnceLock::new(),
        }))
    }

    /// `p = 23, q = 11, g = 2, h = 8`.
    pub fn toy() -> GroupRef {
        Self::new("toy", 23u32.into(), 11u32.into(), 2u32.into(), 8u32.into()).expect("toy group is valid")
    }

    /// The 2048-bit MODP group with 256-bit prime-order subgroup of RFC 5114,
    /// with `h` hashed into the subgroup.
    pub fn rfc5114_2048_256() -> GroupRef {
        static GROUP: OnceLock<GroupRef> = OnceLock::new();
        GROUP
            .get_or_init(|| {
                let p = parse_biguint(RFC5114_P).unwrap();
                let q = parse_biguint(RFC5114_Q).unwrap();
                let g = parse_biguint(RFC5114_G).unwrap();
                let h = derive_h(&p, &q);
                Self::new("rfc5114-2048-256", p, q, g, h).expect("RFC 5114 group is valid")
            })
            .clone()
    }

    /// Smallest prime `p = k q + 1` of exactly `p_bits` bits, found by a
    /// deterministic upward search over even `k`.
    pub fn with_subgroup_order(q: &BigUint, p_bits: u64) -> Result<GroupRef> {
        if !is_probable_prime(q) || q.bits() + 2 > p_bits {
            return Err(Error::Config(format!(
                "need a prime q well below 2^{p_bits}, got a {}-bit value",
                q.bits()
            )));
        }
        let floor = BigUint::one() << (p_bits - 1);
        let mut k = floor.div_ceil(q);
        if k.is_odd() {
            k += 1u32;
        }
        loop {
            let p = &k * q + 1u32;
            if p.bits() > p_bits {
                return Err(Error::Config(format!("no {p_bits}-bit prime of the form kq + 1")));
            }
            if is_probable_prime(&p) {
                let mut x = BigUint::from(2u32);
                let g = loop {
                    let g = mod_exp(&x, &k, &p)?;
                    if !g.is_one() {
                        break g;
                    }
                    x += 1u32;
                };
                let h = derive_h(&p, q);
                return Self::new(&format!("generated-{p_bits}"), p, q.clone(), g, h);
            }
            k += 2u32;
        }
    }

    /// `toy`, `rfc5114-2048-256`, or `generate:<p bits>` over the share field.
    pub fn parse(spec: &str, field: &FieldRef) -> Result<GroupRef> {
        let group = match spec.trim() {
            "toy" => Self::toy(),
            "rfc5114-2048-256" => Self::rfc5114_2048_256(),
            s => match s.strip_prefix("generate:") {
                Some(bits) => {
                    let bits: u64 = bits
                        .parse()
                        .map_err(|_| Error::Config(format!("bad bit length in {s:?}")))?;
                    Self::with_subgroup_order(field.modulus(), bits)?
                }
                None => return Err(Error::Config(format!("unknown renewal group {s:?}"))),
            },
        };
        group.check_field(field)?;
        Ok(group)
    }

    pub fn check_field(&self, field: &FieldRef) -> Result<()> {
        if field.modulus() != &self.q {
            return Err(Error::Config(format!(
                "share field modulus must equal the subgroup order of {}",
                self.name
            )));
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn p(&self) -> &BigUint {
        &self.p
    }

    pub fn q(&self) -> &BigUint {
        &self.q
    }

    pub fn g(&self) -> &BigUint {
        &self.g
    }

    pub fn h(&self) -> &BigUint {
        &self.h
    }

    /// The share field `F_q`.
    pub fn field(&self) -> &FieldRef {
        &self.field
    }

    pub fn element_bytes(&self) -> usize {
        (self.p.bits() as usize).div_ceil(8)
    }

    fn tables(&self) -> &(FixedBase, FixedBase) {
        self.tables.get_or_init(|| {
            let bits = self.q.bits() as usize;
            (FixedBase::new(&self.g, &self.p, bits), FixedBase::new(&self.h, &self.p, bits))
        })
    }

    /// `g^a h^b mod p` with `a, b` taken mod `q`.
    pub fn commit(&self, a: &BigUint, b: &BigUint) -> BigUint {
        let (tg, th) = self.tables();
        let mut acc = BigUint::one();
        tg.pow_into(&mut acc, &(a % &self.q), &self.p);
        th.pow_into(&mut acc, &(b % &self.q), &self.p);
        acc
    }

    pub fn in_subgroup(&self, x: &BigUint) -> bool {
        !x.is_zero() && x < &self.p && mod_exp(x, &self.q, &self.p).map(|v| v.is_one()).unwrap_or(false)
    }
}

/// `h = x^((p-1)/q) mod p` for a hash-derived public `x`; nobody knows
/// `log_g h`.
fn derive_h(p: &BigUint, q: &BigUint) -> BigUint {
    let cofactor = (p - 1u32) / q;
    let mut counter = 0u32;
    loop {
        let mut hasher = Sha256::new();
        hasher.update(H_LABEL);
        hasher.update(counter.to_be_bytes());
        let x = BigUint::from_bytes_be(&hasher.finalize()) % p;
        let h = x.modpow(&cofactor, p);
        if !h.is_zero() && !h.is_one() {
            return h;
        }
        counter += 1;
    }
}

/// One sender's public commitments for one round, one list per track.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenewalPacket {
    pub sender: u64,
    pub round: u64,
    pub commitments: Vec<Vec<BigUint>>,
}

/// The share pairs one sender owes one recipient, one pair per track.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenewalShares {
    pub sender: u64,
    pub recipient: u64,
    pub round: u64,
    pub pairs: Vec<(FieldElement, FieldElement)>,
}

/// Sender-side secret state for one track.
pub struct RenewalPolys {
    pub p1: Polynomial,
    pub p2: Polynomial,
}

impl RenewalPolys {
    pub fn random(field: &FieldRef, degree: usize, rng: &mut impl RandomSource) -> Result<Self> {
        Ok(RenewalPolys {
            p1: Polynomial::random(degree, field.zero(), rng)?,
            p2: Polynomial::random(degree, field.zero(), rng)?,
        })
    }

    /// `eps_k = g^{a_k} h^{b_k}` for `k = 1..degree`.
    pub fn commitments(&self, group: &RenewalGroup) -> Vec<BigUint> {
        self.p1.coefficients()[1..]
            .iter()
            .zip(&self.p2.coefficients()[1..])
            .map(|(a, b)| group.commit(a.value(), b.value()))
            .collect()
    }

    pub fn pair(&self, recipient: u64) -> (FieldElement, FieldElement) {
        (self.p1.eval_at(recipient), self.p2.eval_at(recipient))
    }
}

/// Draw renewal polynomials for every track and build the public packet
/// plus the per-recipient share pairs for holders `1..=holders`.
pub fn gen_renewal(
    group: &RenewalGroup,
    sender: u64,
    round: u64,
    degrees: &[usize],
    holders: u64,
    rng: &mut impl RandomSource,
) -> Result<(RenewalPacket, Vec<RenewalShares>)> {
    let polys = degrees
        .iter()
        .map(|&d| RenewalPolys::random(group.field(), d, rng))
        .collect::<Result<Vec<_>>>()?;
    let packet = RenewalPacket {
        sender,
        round,
        commitments: polys.iter().map(|p| p.commitments(group)).collect(),
    };
    let shares = (1..=holders)
        .map(|c| RenewalShares {
            sender,
            recipient: c,
            round,
            pairs: polys.iter().map(|p| p.pair(c)).collect(),
        })
        .collect();
    Ok((packet, shares))
}

/// `g^{P1(i)} h^{P2(i)} == prod_k eps_k^{i^k} mod p`.
pub fn verify_renewal_share(
    group: &RenewalGroup,
    recipient: u64,
    commitments: &[BigUint],
    pair: (&FieldElement, &FieldElement),
) -> bool {
    let lhs = group.commit(pair.0.value(), pair.1.value());
    let i = BigUint::from(recipient);
    let mut rhs = BigUint::one();
    let mut power = BigUint::one();
    for eps in commitments {
        power = power * &i % group.q();
        rhs = rhs * eps.modpow(&power, group.p()) % group.p();
    }
    lhs == rhs
}

/// Check every track of a sender's shares against its packet.
pub fn verify_renewal(group: &RenewalGroup, packet: &RenewalPacket, shares: &RenewalShares, degrees: &[usize]) -> bool {
    packet.sender == shares.sender
        && packet.round == shares.round
        && packet.commitments.len() == degrees.len()
        && shares.pairs.len() == degrees.len()
        && packet.commitments.iter().zip(degrees).all(|(c, &d)| c.len() == d)
        && packet
            .commitments
            .iter()
            .zip(&shares.pairs)
            .all(|(eps, (a, b))| verify_renewal_share(group, shares.recipient, eps, (a, b)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenewalOutcome {
    Updated,
    Accused { accuser: u64, accused: u64 },
}

/// Renewal degrees for a holder's share set: every data block of every
/// secret at `t - 1`, then the password share at `t - 2` when that is
/// positive. Ordered by secret id.
pub fn track_degrees(params: &SpssParams, set: &HolderShareSet) -> Vec<usize> {
    let mut out = Vec::new();
    for s in set.secrets() {
        out.extend(std::iter::repeat_n(params.data_degree(), s.data_shares.len()));
        if params.password_degree() > 0 {
            out.push(params.password_degree());
        }
    }
    out
}

/// Add the accepted deltas to a holder's shares, in track order.
pub fn apply_renewal(params: &SpssParams, set: &mut HolderShareSet, deltas: &[FieldElement]) -> Result<()> {
    let expected = track_degrees(params, set).len();
    if deltas.len() != expected {
        return Err(Error::Protocol(format!("{} deltas for {expected} tracks", deltas.len())));
    }
    let ids: Vec<u64> = set.secrets().map(|s| s.secret_id).collect();
    let mut it = deltas.iter();
    for id in ids {
        let s = set.secret_mut(id).expect("listed above");
        for share in s.data_shares.iter_mut() {
            *share = &*share + it.next().expect("counted");
        }
        if params.password_degree() > 0 {
            s.password_share = &s.password_share + it.next().expect("counted");
        }
    }
    Ok(())
}

/// Sum of `P_d1(c) + P_d2(c)` over all senders, per track.
pub fn renewal_deltas(field: &FieldRef, received: &[RenewalShares], tracks: usize) -> Vec<FieldElement> {
    let mut out = vec![field.zero(); tracks];
    for r in received {
        for (acc, (a, b)) in out.iter_mut().zip(&r.pairs) {
            *acc = &(&*acc + a) + b;
        }
    }
    out
}

/// Fault injected into an in-memory round: `sender` adds one to the first
/// `P1` value it sends `recipient`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RenewalFault {
    pub sender: u64,
    pub recipient: u64,
}

/// One complete in-memory round over all holders. Shares change only if
/// every recipient accepts every sender.
pub fn renewal_round<R: RandomSource>(
    group: &RenewalGroup,
    params: &SpssParams,
    holders: &mut [HolderShareSet],
    round: u64,
    rngs: &mut [R],
    fault: Option<RenewalFault>,
) -> Result<RenewalOutcome> {
    group.check_field(params.field())?;
    if holders.is_empty() {
        return Ok(RenewalOutcome::Updated);
    }
    if rngs.len() != holders.len() {
        return Err(Error::Config("one random source per holder".into()));
    }
    let degrees = track_degrees(params, &holders[0]);
    if holders.iter().any(|h| track_degrees(params, h) != degrees) {
        return Err(Error::Protocol("holders disagree on the stored share layout".into()));
    }
    let n = params.holders() as u64;
    let mut packets = Vec::with_capacity(holders.len());
    let mut inbox: Vec<Vec<RenewalShares>> = vec![Vec::new(); holders.len()];
    for (h, rng) in holders.iter().zip(rngs.iter_mut()) {
        let (packet, shares) = gen_renewal(group, h.holder(), round, &degrees, n, rng)?;
        packets.push(packet);
        for mut s in shares {
            if let Some(f) = fault {
                if f.sender == s.sender && f.recipient == s.recipient && !s.pairs.is_empty() {
                    s.pairs[0].0 = &s.pairs[0].0 + &group.field().one();
                }
            }
            if let Some(slot) = holders.iter().position(|x| x.holder() == s.recipient) {
                inbox[slot].push(s);
            }
        }
    }
    for (h, received) in holders.iter().zip(&inbox) {
        for shares in received {
            let packet = packets.iter().find(|p| p.sender == shares.sender).expect("one packet per sender");
            if !verify_renewal(group, packet, shares, &degrees) {
                return Ok(RenewalOutcome::Accused {
                    accuser: h.holder(),
                    accused: shares.sender,
                });
            }
        }
    }
    for (h, received) in holders.iter_mut().zip(&inbox) {
        let deltas = renewal_deltas(group.field(), received, degrees.len());
        apply_renewal(params, h, &deltas)?;
    }
    Ok(RenewalOutcome::Updated)
}
