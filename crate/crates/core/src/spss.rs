//! Single-password-authenticated secret sharing.
//!
//! Registration splits the data into `(m - 1)`-bit blocks `D_1..D_l`,
//! appends the password MAC block `D_{l+1} = sum_i D_i P^i` and shares
//! every block with a fresh degree `t - 1` polynomial. The password itself
//! is shared with degree `t - 2`.
//!
//! Holders run precompute rounds that leave each of them one tuple of
//! shares of fresh randoms `R_m` and of zero. A reconstruction request
//! carries shares of the attempted password `P'`; holder `j` answers block
//! `i` with
//!
//! ```text
//! F_ji = (f_P(j) - f_P'(j)) * R + Z + f_Di(j)
//! R = sum_{m in L} f_Rm(j),  Z = sum_{m in L} f_0m(j)
//! ```
//!
//! using a fresh tuple per block. With the right password the mask term
//! vanishes at 0; with a wrong one every block is offset uniformly and the
//! MAC block check fails except with probability about `1/q`.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::field::{lagrange_weights, FieldElement, FieldRef, Polynomial};
use crate::random::RandomSource;
use crate::uhash::poly_hash_blocks;

#[derive(Clone, Debug)]
pub struct SpssParams {
    threshold: usize,
    holders: usize,
    field: FieldRef,
}

impl SpssParams {
    pub fn new(threshold: usize, holders: usize, field: FieldRef) -> Result<Self> {
        if threshold < 2 || threshold > holders {
            return Err(Error::Config(format!(
                "threshold must satisfy 1 < t <= n, got t = {threshold}, n = {holders}"
            )));
        }
        if BigUint::from(holders) >= *field.modulus() {
            return Err(Error::Config(format!(
                "{holders} holders need distinct nonzero indices below q"
            )));
        }
        if field.block_bits() == 0 {
            return Err(Error::Config("field too small to carry data blocks".into()));
        }
        Ok(SpssParams {
            threshold,
            holders,
            field,
        })
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn holders(&self) -> usize {
        self.holders
    }

    pub fn field(&self) -> &FieldRef {
        &self.field
    }

    pub fn block_bits(&self) -> usize {
        self.field.block_bits()
    }

    pub fn data_degree(&self) -> usize {
        self.threshold - 1
    }

    pub fn password_degree(&self) -> usize {
        self.threshold - 2
    }

    /// Degree of the random-mask polynomials `f_Rm`. The product
    /// `(f_P - f_P') * R` must stay within degree `t - 1` to interpolate
    /// from `t` points, so this is `t - 2` capped at 1.
    pub fn mask_degree(&self) -> usize {
        (self.threshold - 2).min(1)
    }

    /// Number of data blocks a payload of `byte_len` bytes occupies.
    pub fn block_count(&self, byte_len: usize) -> usize {
        (byte_len * 8).div_ceil(self.block_bits())
    }
}

/// The registration password as a nonzero field element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Password(FieldElement);

impl Password {
    /// Big-endian integer of at most `m - 1` bits; zero is rejected.
    pub fn from_bytes(params: &SpssParams, bytes: &[u8]) -> Result<Self> {
        let v = BigUint::from_bytes_be(bytes);
        if v.bits() as usize > params.block_bits() {
            return Err(Error::Config(format!(
                "password has {} bits, at most {} allowed",
                v.bits(),
                params.block_bits()
            )));
        }
        Self::from_element(params.field.element(v))
    }

    pub fn from_element(e: FieldElement) -> Result<Self> {
        if e.is_zero() {
            return Err(Error::Config("zero password nullifies the MAC block".into()));
        }
        Ok(Password(e))
    }

    pub fn element(&self) -> &FieldElement {
        &self.0
    }
}

/// Split bytes into `(m - 1)`-bit blocks, zero-padding the last one.
pub fn split_blocks(params: &SpssParams, data: &[u8]) -> Vec<FieldElement> {
    let b = params.block_bits();
    let bits = BitString::from_bytes(data);
    (0..params.block_count(data.len()))
        .map(|i| {
            params
                .field
                .element(BigUint::from_bytes_be(&bits.range_be_bytes(i * b, b)))
        })
        .collect()
}

/// Inverse of [`split_blocks`]. Fails if a block does not fit the block width.
pub fn join_blocks(params: &SpssParams, blocks: &[FieldElement], byte_len: usize) -> Result<Vec<u8>> {
    let b = params.block_bits();
    if blocks.len() != params.block_count(byte_len) {
        return Err(Error::Malformed(format!(
            "{} blocks for a {byte_len}-byte payload",
            blocks.len()
        )));
    }
    let mut bits = BitString::zeros(blocks.len() * b);
    for (i, blk) in blocks.iter().enumerate() {
        let v = blk.value();
        if v.bits() as usize > b {
            return Err(Error::Malformed(format!("block {i} exceeds {b} bits")));
        }
        for k in 0..b {
            if v.bit((b - 1 - k) as u64) {
                bits.set(i * b + k, true);
            }
        }
    }
    let mut out = bits.to_bytes();
    out.truncate(byte_len);
    Ok(out)
}

/// `sum_{i=1..l} D_i P^i`.
pub fn mac_block(blocks: &[FieldElement], password: &Password) -> FieldElement {
    poly_hash_blocks(password.element(), blocks)
}

/// Plain-text view of a registered secret, held only while registering.
#[derive(Clone, Debug)]
pub struct RegisteredSecret {
    pub blocks: Vec<FieldElement>,
    pub mac_block: FieldElement,
    pub t1: u64,
}

/// Holder `j`'s shares of one secret.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShareFragment {
    pub secret_id: u64,
    pub holder: u64,
    /// Cleartext payload length; block count follows from it.
    pub byte_len: u64,
    /// `f_{D_i}(j)` for `i = 1..l+1`, the MAC block last.
    pub data_shares: Vec<FieldElement>,
    pub password_share: FieldElement,
}

pub struct Registration {
    pub fragments: Vec<ShareFragment>,
    pub secret: RegisteredSecret,
}

pub fn spss_register(
    secret_id: u64,
    t1: u64,
    data: &[u8],
    password: &Password,
    params: &SpssParams,
    rng: &mut impl RandomSource,
) -> Result<Registration> {
    if data.is_empty() {
        return Err(Error::Config("cannot register empty data".into()));
    }
    let blocks = split_blocks(params, data);
    let tag = mac_block(&blocks, password);
    let mut fragments: Vec<ShareFragment> = (1..=params.holders as u64)
        .map(|j| ShareFragment {
            secret_id,
            holder: j,
            byte_len: data.len() as u64,
            data_shares: Vec::with_capacity(blocks.len() + 1),
            password_share: params.field.zero(),
        })
        .collect();
    for block in blocks.iter().chain(std::iter::once(&tag)) {
        let f = Polynomial::random(params.data_degree(), block.clone(), rng)?;
        for frag in fragments.iter_mut() {
            frag.data_shares.push(f.eval_at(frag.holder));
        }
    }
    let fp = Polynomial::random(params.password_degree(), password.element().clone(), rng)?;
    for frag in fragments.iter_mut() {
        frag.password_share = fp.eval_at(frag.holder);
    }
    Ok(Registration {
        fragments,
        secret: RegisteredSecret {
            blocks,
            mac_block: tag,
            t1,
        },
    })
}

/// One holder's share of one precompute round, sent from `from` to `to`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrecomputeContribution {
    pub round: u64,
    pub from: u64,
    pub to: u64,
    pub r_share: FieldElement,
    pub zero_share: FieldElement,
}

/// Holder `from` draws `R_from` and a sharing of zero, one share per
/// participant.
pub fn precompute_contributions(
    params: &SpssParams,
    from: u64,
    round: u64,
    participants: &[u64],
    rng: &mut impl RandomSource,
) -> Result<Vec<PrecomputeContribution>> {
    let r = params.field.random_element(rng)?;
    let fr = Polynomial::random(params.mask_degree(), r, rng)?;
    let f0 = Polynomial::random(params.data_degree(), params.field.zero(), rng)?;
    Ok(participants
        .iter()
        .map(|&to| PrecomputeContribution {
            round,
            from,
            to,
            r_share: fr.eval_at(to),
            zero_share: f0.eval_at(to),
        })
        .collect())
}

/// Holder `j`'s tuple from one round: `f_Rm(j)` and `f_0m(j)` for every
/// participant `m`. All holders take part when all are reachable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrecomputedTuple {
    pub id: u64,
    pub participants: Vec<u64>,
    pub r_shares: Vec<FieldElement>,
    pub zero_shares: Vec<FieldElement>,
}

/// Reconstruction request addressed to one holder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReconstructionRequest {
    pub secret_id: u64,
    pub subset: Vec<u64>,
    pub password_share: FieldElement,
    /// One tuple per block, `l + 1` in total.
    pub tuple_ids: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedResponse {
    pub secret_id: u64,
    pub holder: u64,
    pub byte_len: u64,
    pub values: Vec<FieldElement>,
}

/// Everything one share holder keeps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HolderShareSet {
    holder: u64,
    secrets: BTreeMap<u64, ShareFragment>,
    tuples: BTreeMap<u64, PrecomputedTuple>,
}

impl HolderShareSet {
    pub fn new(holder: u64) -> Self {
        HolderShareSet {
            holder,
            secrets: BTreeMap::new(),
            tuples: BTreeMap::new(),
        }
    }

    pub fn from_parts(
        holder: u64,
        secrets: impl IntoIterator<Item = ShareFragment>,
        tuples: impl IntoIterator<Item = PrecomputedTuple>,
    ) -> Self {
        HolderShareSet {
            holder,
            secrets: secrets.into_iter().map(|s| (s.secret_id, s)).collect(),
            tuples: tuples.into_iter().map(|t| (t.id, t)).collect(),
        }
    }

    pub fn holder(&self) -> u64 {
        self.holder
    }

    pub fn store(&mut self, fragment: ShareFragment) -> Result<()> {
        if fragment.holder != self.holder {
            return Err(Error::Protocol(format!(
                "fragment for holder {} delivered to holder {}",
                fragment.holder, self.holder
            )));
        }
        self.secrets.insert(fragment.secret_id, fragment);
        Ok(())
    }

    pub fn secret(&self, id: u64) -> Option<&ShareFragment> {
        self.secrets.get(&id)
    }

    pub fn secret_mut(&mut self, id: u64) -> Option<&mut ShareFragment> {
        self.secrets.get_mut(&id)
    }

    pub fn secrets(&self) -> impl Iterator<Item = &ShareFragment> {
        self.secrets.values()
    }

    pub fn tuples(&self) -> impl Iterator<Item = &PrecomputedTuple> {
        self.tuples.values()
    }

    pub fn tuple_count(&self) -> usize {
        self.tuples.len()
    }

    pub fn available_tuple_ids(&self) -> Vec<u64> {
        self.tuples.keys().copied().collect()
    }

    /// Store a round's tuple. One contribution from every participant must
    /// be present and addressed to this holder; otherwise nothing is
    /// retained.
    pub fn accept_round(
        &mut self,
        params: &SpssParams,
        round: u64,
        participants: &[u64],
        contributions: &[PrecomputeContribution],
    ) -> Result<()> {
        check_participants(params, participants)?;
        if !participants.contains(&self.holder) {
            return Err(Error::Protocol(format!("holder {} not a round participant", self.holder)));
        }
        if self.tuples.contains_key(&round) {
            return Err(Error::SingleUse("precompute round id already used"));
        }
        let n = participants.len();
        let mut r_shares = vec![None; n];
        let mut zero_shares = vec![None; n];
        for c in contributions {
            let slot = participants.iter().position(|&m| m == c.from);
            let slot = match slot {
                Some(slot) if c.round == round && c.to == self.holder => slot,
                _ => {
                    return Err(Error::Protocol(format!(
                        "stray contribution from {} to {} for round {}",
                        c.from, c.to, c.round
                    )))
                }
            };
            if r_shares[slot].is_some() {
                return Err(Error::Protocol(format!("duplicate contribution from {}", c.from)));
            }
            r_shares[slot] = Some(c.r_share.clone());
            zero_shares[slot] = Some(c.zero_share.clone());
        }
        let r_shares: Option<Vec<_>> = r_shares.into_iter().collect();
        let zero_shares: Option<Vec<_>> = zero_shares.into_iter().collect();
        match (r_shares, zero_shares) {
            (Some(r_shares), Some(zero_shares)) => {
                self.tuples.insert(
                    round,
                    PrecomputedTuple {
                        id: round,
                        participants: participants.to_vec(),
                        r_shares,
                        zero_shares,
                    },
                );
                Ok(())
            }
            _ => Err(Error::Protocol(format!(
                "round {round} incomplete: {} of {n} contributions",
                contributions.len()
            ))),
        }
    }

    /// Remove a tuple; the caller owns the only remaining copy.
    pub fn take_tuple(&mut self, id: u64) -> Option<PrecomputedTuple> {
        self.tuples.remove(&id)
    }

    pub fn discard_tuples(&mut self, ids: &[u64]) {
        for id in ids {
            self.tuples.remove(id);
        }
    }

    pub fn remove_secret(&mut self, id: u64) -> Option<ShareFragment> {
        self.secrets.remove(&id)
    }

    /// Validate a request without consuming anything.
    pub fn check_request(&self, params: &SpssParams, req: &ReconstructionRequest) -> Result<()> {
        check_subset(params, &req.subset)?;
        if !req.subset.contains(&self.holder) {
            return Err(Error::Protocol(format!("holder {} not in request subset", self.holder)));
        }
        let fragment = self
            .secrets
            .get(&req.secret_id)
            .ok_or_else(|| Error::Protocol(format!("unknown secret {}", req.secret_id)))?;
        let needed = fragment.data_shares.len();
        let distinct: BTreeSet<_> = req.tuple_ids.iter().collect();
        let available = req.tuple_ids.iter().filter(|id| self.tuples.contains_key(id)).count();
        if req.tuple_ids.len() != needed || distinct.len() != needed || available != needed {
            return Err(Error::PrecomputationExhausted {
                needed,
                available: available.min(distinct.len()),
            });
        }
        for id in &req.tuple_ids {
            let tuple = &self.tuples[id];
            if let Some(m) = req.subset.iter().find(|m| !tuple.participants.contains(m)) {
                return Err(Error::Protocol(format!("tuple {id} lacks holder {m}")));
            }
        }
        Ok(())
    }

    /// Answer a reconstruction request, consuming one tuple per block.
    pub fn respond(&mut self, params: &SpssParams, req: &ReconstructionRequest) -> Result<MaskedResponse> {
        self.check_request(params, req)?;
        let fragment = &self.secrets[&req.secret_id];
        let p_diff = &fragment.password_share - &req.password_share;
        let mut values = Vec::with_capacity(req.tuple_ids.len());
        for (share, id) in fragment.data_shares.iter().zip(&req.tuple_ids) {
            let tuple = &self.tuples[id];
            let mut r = params.field.zero();
            let mut z = params.field.zero();
            for &m in &req.subset {
                let slot = tuple.participants.iter().position(|&x| x == m).expect("checked above");
                r = &r + &tuple.r_shares[slot];
                z = &z + &tuple.zero_shares[slot];
            }
            values.push(&(&(&p_diff * &r) + &z) + share);
        }
        let response = MaskedResponse {
            secret_id: req.secret_id,
            holder: self.holder,
            byte_len: fragment.byte_len,
            values,
        };
        self.discard_tuples(&req.tuple_ids);
        Ok(response)
    }
}

fn check_participants(params: &SpssParams, participants: &[u64]) -> Result<()> {
    let distinct: BTreeSet<_> = participants.iter().collect();
    if distinct.len() != participants.len()
        || participants.len() < params.threshold
        || participants.iter().any(|&j| j == 0 || j as usize > params.holders)
    {
        return Err(Error::Protocol(format!(
            "precompute needs at least {} distinct holders, got {participants:?}",
            params.threshold
        )));
    }
    Ok(())
}

fn check_subset(params: &SpssParams, subset: &[u64]) -> Result<()> {
    let distinct: BTreeSet<_> = subset.iter().collect();
    if subset.len() != params.threshold || distinct.len() != subset.len() {
        return Err(Error::ImproperRequest {
            got: distinct.len(),
            threshold: params.threshold,
        });
    }
    if subset.iter().any(|&j| j == 0 || j as usize > params.holders) {
        return Err(Error::ImproperRequest {
            got: subset.len(),
            threshold: params.threshold,
        });
    }
    Ok(())
}

/// Share the attempted password over the subset `L` and address one
/// request to each member.
pub fn spss_request(
    params: &SpssParams,
    secret_id: u64,
    attempt: &Password,
    subset: &[u64],
    tuple_ids: &[u64],
    rng: &mut impl RandomSource,
) -> Result<Vec<(u64, ReconstructionRequest)>> {
    check_subset(params, subset)?;
    let f = Polynomial::random(params.password_degree(), attempt.element().clone(), rng)?;
    Ok(subset
        .iter()
        .map(|&j| {
            (
                j,
                ReconstructionRequest {
                    secret_id,
                    subset: subset.to_vec(),
                    password_share: f.eval_at(j),
                    tuple_ids: tuple_ids.to_vec(),
                },
            )
        })
        .collect())
}

/// `F_i(0)` for every block, without the password check.
pub fn interpolate_responses(params: &SpssParams, responses: &[MaskedResponse]) -> Result<Vec<FieldElement>> {
    let holders: BTreeSet<_> = responses.iter().map(|r| r.holder).collect();
    if holders.len() < params.threshold {
        return Err(Error::Abort {
            collected: holders.len(),
            needed: params.threshold,
        });
    }
    if responses.len() != params.threshold || holders.len() != responses.len() {
        return Err(Error::Protocol(format!(
            "expected {} responses from distinct holders, got {}",
            params.threshold,
            responses.len()
        )));
    }
    let first = &responses[0];
    if responses
        .iter()
        .any(|r| r.values.len() != first.values.len() || r.secret_id != first.secret_id || r.byte_len != first.byte_len)
    {
        return Err(Error::Protocol("responses disagree on the secret layout".into()));
    }
    let xs: Vec<u64> = responses.iter().map(|r| r.holder).collect();
    let weights = lagrange_weights(&params.field, &xs)?;
    Ok((0..first.values.len())
        .map(|i| {
            responses
                .iter()
                .zip(&weights)
                .fold(params.field.zero(), |acc, (r, w)| &acc + &(&r.values[i] * w))
        })
        .collect())
}

/// Interpolate, check the password MAC block and reassemble the bytes.
pub fn spss_recover(params: &SpssParams, responses: &[MaskedResponse], attempt: &Password) -> Result<Vec<u8>> {
    let mut blocks = interpolate_responses(params, responses)?;
    let claimed = blocks.pop().ok_or_else(|| Error::Protocol("no MAC block".into()))?;
    if mac_block(&blocks, attempt) != claimed {
        return Err(Error::PasswordFailure);
    }
    // honest blocks always fit; an oversized one means a MAC collision
    // under a wrong password, which must release nothing either
    join_blocks(params, &blocks, responses[0].byte_len as usize).map_err(|_| Error::PasswordFailure)
}

/// Run one precompute round over in-memory holders, all of whom take
/// part: every holder draws its contributions, then every holder stores
/// its tuple. A failure anywhere leaves all holders untouched.
pub fn precompute_round<R: RandomSource>(
    params: &SpssParams,
    holders: &mut [HolderShareSet],
    round: u64,
    rngs: &mut [R],
) -> Result<()> {
    if rngs.len() != holders.len() {
        return Err(Error::Config("one random source per holder".into()));
    }
    let participants: Vec<u64> = holders.iter().map(|h| h.holder).collect();
    check_participants(params, &participants)?;
    let mut inbox: Vec<Vec<PrecomputeContribution>> = vec![Vec::new(); holders.len()];
    for (h, rng) in holders.iter().zip(rngs.iter_mut()) {
        for c in precompute_contributions(params, h.holder, round, &participants, rng)? {
            let slot = participants.iter().position(|&m| m == c.to).expect("addressed to a participant");
            inbox[slot].push(c);
        }
    }
    for slot in 0..holders.len() {
        if let Err(e) = holders[slot].accept_round(params, round, &participants, &inbox[slot]) {
            // accept_round stores nothing on failure; undo the earlier holders
            for h in &mut holders[..slot] {
                h.take_tuple(round);
            }
            return Err(e);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{lagrange_at_zero_indexed, PrimeField};
    use crate::random::{FiniteRandom, SeededRandom};

    fn params31() -> SpssParams {
        SpssParams::new(3, 4, PrimeField::new(31u32.into()).unwrap()).unwrap()
    }

    fn holders(params: &SpssParams) -> Vec<HolderShareSet> {
        (1..=params.holders() as u64).map(HolderShareSet::new).collect()
    }

    fn rngs(n: usize, seed: u64) -> Vec<SeededRandom> {
        (0..n).map(|i| SeededRandom::new(seed * 100 + i as u64)).collect()
    }

    fn setup(
        params: &SpssParams,
        data: &[u8],
        password: &Password,
        rounds: u64,
        seed: u64,
    ) -> Vec<HolderShareSet> {
        let mut rng = SeededRandom::new(seed);
        let reg = spss_register(1, 0, data, password, params, &mut rng).unwrap();
        let mut hs = holders(params);
        for (h, f) in hs.iter_mut().zip(reg.fragments) {
            h.store(f).unwrap();
        }
        let mut rs = rngs(params.holders(), seed);
        for round in 0..rounds {
            precompute_round(params, &mut hs, round, &mut rs).unwrap();
        }
        hs
    }

    fn reconstruct(
        params: &SpssParams,
        hs: &mut [HolderShareSet],
        subset: &[u64],
        attempt: &Password,
        seed: u64,
    ) -> Result<Vec<u8>> {
        let l1 = hs[0].secret(1).unwrap().data_shares.len();
        let ids: Vec<u64> = hs[(subset[0] - 1) as usize].available_tuple_ids().into_iter().take(l1).collect();
        let reqs = spss_request(params, 1, attempt, subset, &ids, &mut SeededRandom::new(seed))?;
        let mut responses = vec![];
        for (j, req) in reqs {
            responses.push(hs[(j - 1) as usize].respond(params, &req)?);
        }
        spss_recover(params, &responses, attempt)
    }

    #[test]
    fn params_validation() {
        let f = PrimeField::new(31u32.into()).unwrap();
        assert!(SpssParams::new(1, 4, f.clone()).is_err());
        assert!(SpssParams::new(5, 4, f.clone()).is_err());
        assert!(SpssParams::new(3, 31, f.clone()).is_err());
        let p = SpssParams::new(3, 4, f).unwrap();
        assert_eq!((p.data_degree(), p.password_degree(), p.mask_degree()), (2, 1, 1));
        assert_eq!(p.block_bits(), 4);
    }

    #[test]
    fn password_mapping() {
        let p = params31();
        assert!(Password::from_bytes(&p, &[0]).is_err());
        assert!(Password::from_bytes(&p, &[16]).is_err());
        assert_eq!(Password::from_bytes(&p, &[5]).unwrap().element(), &p.field().element(5u32));
    }

    #[test]
    fn block_split_round_trip() {
        let p = SpssParams::new(3, 4, PrimeField::mersenne(31).unwrap()).unwrap();
        let mut rng = SeededRandom::new(1);
        for len in [1usize, 3, 4, 30, 31, 100] {
            let data = rng.next_bytes(len).unwrap();
            let blocks = split_blocks(&p, &data);
            assert_eq!(blocks.len(), (len * 8).div_ceil(30));
            assert_eq!(join_blocks(&p, &blocks, len).unwrap(), data);
        }
    }

    #[test]
    fn mac_block_example() {
        // One block D1 = 12 with P = 5 over F_31: 12 * 5 = 60 = 29 mod 31.
        let p = params31();
        let f = p.field();
        let pw = Password::from_element(f.element(5u32)).unwrap();
        assert_eq!(mac_block(&[f.element(12u32)], &pw), f.element(29u32));
        let zeros = vec![f.zero(); 3];
        assert!(mac_block(&zeros, &pw).is_zero());
    }

    #[test]
    fn registration_shares_interpolate_to_blocks() {
        let p = params31();
        let f = p.field().clone();
        let pw = Password::from_element(f.element(5u32)).unwrap();
        // 0xC0 splits into the 4-bit blocks 12, 0.
        let reg = spss_register(1, 0, &[0xC0], &pw, &p, &mut SeededRandom::new(3)).unwrap();
        assert_eq!(reg.secret.blocks, vec![f.element(12u32), f.zero()]);
        assert_eq!(reg.secret.mac_block, f.element(29u32));
        let subsets = [[1u64, 2, 3], [1, 2, 4], [1, 3, 4], [2, 3, 4]];
        for subset in subsets {
            for (i, expect) in [12u32, 0, 29].iter().enumerate() {
                let pts: Vec<_> = subset
                    .iter()
                    .map(|&j| (j, reg.fragments[(j - 1) as usize].data_shares[i].clone()))
                    .collect();
                assert_eq!(lagrange_at_zero_indexed(&f, &pts).unwrap(), f.element(*expect));
            }
            let pts: Vec<_> = subset[..2]
                .iter()
                .map(|&j| (j, reg.fragments[(j - 1) as usize].password_share.clone()))
                .collect();
            assert_eq!(lagrange_at_zero_indexed(&f, &pts).unwrap(), f.element(5u32));
        }
    }

    #[test]
    fn precompute_zero_shares_and_accounting() {
        let p = params31();
        let mut hs = holders(&p);
        let mut rs = rngs(4, 9);
        precompute_round(&p, &mut hs, 0, &mut rs).unwrap();
        assert!(hs.iter().all(|h| h.tuple_count() == 1));
        precompute_round(&p, &mut hs, 1, &mut rs).unwrap();
        assert!(hs.iter().all(|h| h.tuple_count() == 2));
        for subset in [[1u64, 2, 3], [2, 3, 4]] {
            for m in 0..4 {
                let pts: Vec<_> = subset
                    .iter()
                    .map(|&j| (j, hs[(j - 1) as usize].tuples().next().unwrap().zero_shares[m].clone()))
                    .collect();
                assert!(lagrange_at_zero_indexed(p.field(), &pts).unwrap().is_zero());
            }
        }
        // A round id cannot be reused.
        assert!(precompute_round(&p, &mut hs, 1, &mut rs).is_err());
        assert!(hs.iter().all(|h| h.tuple_count() == 2));
    }

    #[test]
    fn failed_round_retains_nothing() {
        let p = params31();
        let mut hs = holders(&p);
        let mut rs: Vec<FiniteRandom> = (0..4).map(|_| FiniteRandom::new(vec![7; 64])).collect();
        rs[3] = FiniteRandom::new(vec![]);
        assert!(matches!(precompute_round(&p, &mut hs, 0, &mut rs), Err(Error::KeySupply { .. })));
        assert!(hs.iter().all(|h| h.tuple_count() == 0));

        let mut h = HolderShareSet::new(1);
        let all = [1u64, 2, 3, 4];
        let partial = precompute_contributions(&p, 2, 0, &all, &mut SeededRandom::new(1)).unwrap();
        let only_mine: Vec<_> = partial.into_iter().filter(|c| c.to == 1).collect();
        assert!(h.accept_round(&p, 0, &all, &only_mine).is_err());
        assert_eq!(h.tuple_count(), 0);
        assert!(h.accept_round(&p, 0, &[1, 2], &[]).is_err());
    }

    #[test]
    fn request_subset_size() {
        let p = params31();
        let pw = Password::from_element(p.field().element(3u32)).unwrap();
        let mut rng = SeededRandom::new(1);
        assert_eq!(spss_request(&p, 1, &pw, &[1, 2, 3], &[], &mut rng).unwrap().len(), 3);
        for bad in [&[1u64, 2][..], &[1, 2, 3, 4], &[1, 1, 2], &[0, 1, 2], &[1, 2, 9]] {
            assert!(matches!(
                spss_request(&p, 1, &pw, bad, &[], &mut rng),
                Err(Error::ImproperRequest { .. })
            ));
        }
    }

    #[test]
    fn holder_rejects_improper_request() {
        let p = params31();
        let pw = Password::from_element(p.field().element(3u32)).unwrap();
        let mut hs = setup(&p, &[0xAB], &pw, 3, 1);
        let req = ReconstructionRequest {
            secret_id: 1,
            subset: vec![1, 2, 3, 4],
            password_share: p.field().one(),
            tuple_ids: vec![0, 1, 2],
        };
        assert!(matches!(hs[0].respond(&p, &req), Err(Error::ImproperRequest { .. })));
        assert_eq!(hs[0].tuple_count(), 3);
    }

    #[test]
    fn honest_reconstruction_every_subset() {
        let p = SpssParams::new(3, 4, PrimeField::mersenne(31).unwrap()).unwrap();
        let pw = Password::from_bytes(&p, &[0x12, 0x34, 0x56]).unwrap();
        let data = b"long-term secure storage".to_vec();
        let l1 = p.block_count(data.len()) + 1;
        let mut hs = setup(&p, &data, &pw, 4 * l1 as u64, 7);
        for (s, subset) in [[1u64, 2, 3], [1, 2, 4], [1, 3, 4], [2, 3, 4]].iter().enumerate() {
            assert_eq!(reconstruct(&p, &mut hs, subset, &pw, s as u64).unwrap(), data);
            // consumed tuples must be dropped everywhere before the next run
            let used: Vec<u64> = (s as u64 * l1 as u64..(s as u64 + 1) * l1 as u64).collect();
            hs.iter_mut().for_each(|h| h.discard_tuples(&used));
        }
        assert!(hs.iter().all(|h| h.tuple_count() == 0));
    }

    #[test]
    fn reconstruction_needs_l_plus_one_tuples() {
        let p = params31();
        let pw = Password::from_element(p.field().element(3u32)).unwrap();
        // one byte = two 4-bit blocks, plus the MAC block: three tuples
        let mut hs = setup(&p, &[0x5A], &pw, 2, 2);
        let reqs = spss_request(&p, 1, &pw, &[1, 2, 3], &[0, 1], &mut SeededRandom::new(1)).unwrap();
        assert!(matches!(
            hs[0].respond(&p, &reqs[0].1),
            Err(Error::PrecomputationExhausted { needed: 3, .. })
        ));
        let reqs = spss_request(&p, 1, &pw, &[1, 2, 3], &[0, 1, 1], &mut SeededRandom::new(1)).unwrap();
        assert!(hs[0].respond(&p, &reqs[0].1).is_err());
    }

    #[test]
    fn wrong_password_offsets_uniformly() {
        // F_i(0) = (P - P') * sum R_m + D_i: over many trials the recovered
        // first block is spread across F_31 regardless of D.
        let p = params31();
        let pw = Password::from_element(p.field().element(5u32)).unwrap();
        let wrong = Password::from_element(p.field().element(6u32)).unwrap();
        let mut counts = [0usize; 31];
        let trials = 3100;
        for t in 0..trials {
            let mut hs = setup(&p, &[0x00], &pw, 3, 1000 + t);
            let ids = hs[0].available_tuple_ids();
            let reqs = spss_request(&p, 1, &wrong, &[1, 2, 3], &ids, &mut SeededRandom::new(t)).unwrap();
            let responses: Vec<_> = reqs
                .iter()
                .map(|(j, r)| hs[(*j - 1) as usize].respond(&p, r).unwrap())
                .collect();
            let blocks = interpolate_responses(&p, &responses).unwrap();
            counts[blocks[0].to_u64().unwrap() as usize] += 1;
        }
        // chi-square with 30 degrees of freedom; 4 sigma above the mean is ~61
        let expect = trials as f64 / 31.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        assert!(chi2 < 30.0 + 4.0 * 60f64.sqrt(), "chi2 = {chi2}");
    }

    #[test]
    fn precompute_among_live_holders() {
        let p = params31();
        let pw = Password::from_element(p.field().element(7u32)).unwrap();
        let mut rng = SeededRandom::new(8);
        let reg = spss_register(1, 0, &[0x9C], &pw, &p, &mut rng).unwrap();
        let mut live: Vec<_> = [2u64, 3, 4].iter().map(|&j| HolderShareSet::new(j)).collect();
        for h in live.iter_mut() {
            h.store(reg.fragments[(h.holder() - 1) as usize].clone()).unwrap();
        }
        let mut rs = rngs(3, 8);
        for round in 0..3 {
            precompute_round(&p, &mut live, round, &mut rs).unwrap();
        }
        let ids = live[0].available_tuple_ids();
        let reqs = spss_request(&p, 1, &pw, &[2, 3, 4], &ids, &mut rng).unwrap();
        let responses: Vec<_> = reqs
            .iter()
            .map(|(j, r)| live[(*j - 2) as usize].respond(&p, r).unwrap())
            .collect();
        assert_eq!(spss_recover(&p, &responses, &pw).unwrap(), vec![0x9C]);
        // tuples from a three-holder round cannot serve a subset outside it
        let mut two: Vec<_> = [1u64, 2].iter().map(|&j| HolderShareSet::new(j)).collect();
        assert!(precompute_round(&p, &mut two, 0, &mut rngs(2, 1)).is_err());
    }

    #[test]
    fn too_few_responses_abort() {
        let p = params31();
        let pw = Password::from_element(p.field().element(5u32)).unwrap();
        let mut hs = setup(&p, &[0x42], &pw, 3, 4);
        let ids = hs[0].available_tuple_ids();
        let reqs = spss_request(&p, 1, &pw, &[1, 2, 3], &ids, &mut SeededRandom::new(1)).unwrap();
        let responses: Vec<_> = reqs[..2]
            .iter()
            .map(|(j, r)| hs[(*j - 1) as usize].respond(&p, r).unwrap())
            .collect();
        assert_eq!(
            spss_recover(&p, &responses, &pw),
            Err(Error::Abort { collected: 2, needed: 3 })
        );
    }
}
