//! Almost-universal hashing and the MACs built on it.
//!
//! Two keyed families are provided:
//!
//! * polynomial evaluation over `F_{q_u}`, `u(R, D) = sum_i D_i R^i`, with
//!   `q_u` the largest prime `<= 2^k`. Distinct `l`-block messages collide
//!   for at most `l` of the `q_u` keys.
//! * Toeplitz matrix multiplication over GF(2) with a `k + n - 1` bit seed.
//!   Distinct equal-length messages collide for exactly a `2^-k` fraction
//!   of seeds.
//!
//! [`MacSeed`] binds one key to one registered datum. [`WcKey`] is a
//! Wegman-Carter one-time key: a hash key plus a `k`-bit pad on the tag.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Mutex, OnceLock};

use num_bigint::BigUint;
use num_traits::One;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha512};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::field::{prev_prime, FieldElement, FieldRef, PrimeField};
use crate::random::RandomSource;

/// Width of the length trailer appended to Toeplitz frames.
const LENGTH_TRAILER_BYTES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MacScheme {
    PolyEval,
    Toeplitz,
}

impl MacScheme {
    pub fn code(self) -> u8 {
        match self {
            MacScheme::PolyEval => 1,
            MacScheme::Toeplitz => 2,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            1 => Ok(MacScheme::PolyEval),
            2 => Ok(MacScheme::Toeplitz),
            _ => Err(Error::Malformed(format!("unknown MAC scheme code {c}"))),
        }
    }
}

/// A `k`-bit authentication tag.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct MacTag(BitString);

impl MacTag {
    pub fn from_bits(bits: BitString) -> Self {
        MacTag(bits)
    }

    /// Decode `ceil(k/8)` bytes, MSB-first.
    pub fn from_bytes(bytes: &[u8], k: usize) -> Result<Self> {
        if bytes.len() != k.div_ceil(8) {
            return Err(Error::Malformed(format!(
                "{}-byte tag for k = {k}",
                bytes.len()
            )));
        }
        Ok(MacTag(BitString::from_bytes_truncated(bytes, k)))
    }

    fn from_value(v: &BigUint, k: usize) -> Self {
        let nbytes = k.div_ceil(8);
        let raw = v.to_bytes_be();
        let mut buf = vec![0u8; nbytes];
        buf[nbytes - raw.len()..].copy_from_slice(&raw);
        // shift so the k value bits land MSB-first in the bit string
        let mut bits = BitString::zeros(k);
        let lead = nbytes * 8 - k;
        let full = BitString::from_bytes(&buf);
        for i in 0..k {
            bits.set(i, full.get(lead + i));
        }
        MacTag(bits)
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn bits(&self) -> &BitString {
        &self.0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.0.to_bytes()
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn xor(&self, pad: &BitString) -> MacTag {
        MacTag(self.0.xor(pad))
    }
}

impl fmt::Debug for MacTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MacTag[{}]({})", self.k(), self.to_hex())
    }
}

/// The hash field for security parameter `k`: largest prime `<= 2^k`.
pub fn hash_field(k: usize) -> Result<FieldRef> {
    static CACHE: OnceLock<Mutex<HashMap<usize, FieldRef>>> = OnceLock::new();
    if k < 2 {
        return Err(Error::Config(format!("security parameter k = {k} too small")));
    }
    let cache = CACHE.get_or_init(Default::default);
    if let Some(f) = cache.lock().expect("hash field cache").get(&k) {
        return Ok(f.clone());
    }
    let q = prev_prime(&(BigUint::one() << k)).expect("2^k >= 2 has a prime below it");
    let f = PrimeField::new(q)?;
    cache.lock().expect("hash field cache").insert(k, f.clone());
    Ok(f)
}

/// `sum_{i=1..l} D_i R^i` by Horner's rule.
pub fn poly_hash_blocks(r: &FieldElement, blocks: &[FieldElement]) -> FieldElement {
    let mut acc = r.field().zero();
    for d in blocks.iter().rev() {
        acc = &(&acc + d) * r;
    }
    acc
}

/// Split a message into `(bits(q_u) - 2)`-bit blocks, zero-pad the last one
/// and append the message bit length as a final block.
pub fn poly_frame(field: &FieldRef, message: &[u8]) -> Result<Vec<FieldElement>> {
    let block_bits = field.bits().saturating_sub(2);
    if block_bits == 0 {
        return Err(Error::Config(format!(
            "hash field {field:?} too small to frame byte messages"
        )));
    }
    let total_bits = message.len() as u128 * 8;
    if block_bits < 128 && total_bits >> block_bits != 0 {
        return Err(Error::Config(format!(
            "{total_bits}-bit message exceeds the {block_bits}-bit length block"
        )));
    }
    let bits = BitString::from_bytes(message);
    let mut blocks = Vec::with_capacity(bits.len().div_ceil(block_bits) + 1);
    let mut start = 0;
    while start < bits.len() {
        let v = BigUint::from_bytes_be(&bits.range_be_bytes(start, block_bits));
        blocks.push(field.element(v));
        start += block_bits;
    }
    blocks.push(field.element(BigUint::from(total_bits)));
    Ok(blocks)
}

/// Polynomial-evaluation hash of a byte message, tag encoded in `k` bits.
pub fn poly_hash(k: usize, r: &FieldElement, message: &[u8]) -> Result<MacTag> {
    let field = hash_field(k)?;
    if !PrimeField::same(r.field(), &field) {
        return Err(Error::FieldMismatch);
    }
    let blocks = poly_frame(&field, message)?;
    Ok(MacTag::from_value(poly_hash_blocks(r, &blocks).value(), k))
}

/// `T * m` over GF(2) for the `k x n` Toeplitz matrix
/// `T[i][j] = seed[i - j + n - 1]`.
pub fn toeplitz_hash(seed: &BitString, message: &BitString, k: usize) -> Result<MacTag> {
    let n = message.len();
    if n == 0 || seed.len() != k + n - 1 {
        return Err(Error::Config(format!(
            "Toeplitz seed of {} bits for k = {k}, message of {n} bits (need k + n - 1)",
            seed.len()
        )));
    }
    // Row i pairs seed[i + t] with m[n - 1 - t]; reverse m once so each row
    // is an AND of a shifted seed window with a fixed vector.
    let mut reversed = BitString::zeros(n);
    for t in 0..n {
        reversed.set(t, message.get(n - 1 - t));
    }
    let rwords = reversed.words();
    let mut tag = BitString::zeros(k);
    for i in 0..k {
        let mut acc = 0u64;
        for (w, &mw) in rwords.iter().enumerate() {
            acc ^= seed.window64(i + 64 * w) & mw;
        }
        tag.set(i, acc.count_ones() & 1 == 1);
    }
    Ok(MacTag(tag))
}

/// Fit a message into a fixed Toeplitz frame: the first `frame_bytes` bytes
/// (zero-padded) followed by the true byte length. Any message other than
/// the registered one maps to a different frame.
pub fn toeplitz_frame(message: &[u8], frame_bytes: usize) -> BitString {
    let mut buf = vec![0u8; frame_bytes + LENGTH_TRAILER_BYTES];
    let take = message.len().min(frame_bytes);
    buf[..take].copy_from_slice(&message[..take]);
    buf[frame_bytes..].copy_from_slice(&(message.len() as u64).to_be_bytes());
    BitString::from_bytes(&buf)
}

pub fn toeplitz_seed_bits(k: usize, frame_bytes: usize) -> usize {
    k + (frame_bytes + LENGTH_TRAILER_BYTES) * 8 - 1
}

#[derive(Clone, PartialEq, Eq)]
enum SeedMaterial {
    Poly(FieldElement),
    Toeplitz { bits: BitString, frame_bytes: usize },
}

/// The random key `R_MAC` that binds one registered datum to its tag.
#[derive(Clone, PartialEq, Eq)]
pub struct MacSeed {
    k: usize,
    material: SeedMaterial,
    consumed: bool,
}

impl fmt::Debug for MacSeed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "MacSeed({:?}, k = {}, {} bytes, consumed = {})",
            self.scheme(),
            self.k,
            self.size_bytes(),
            self.consumed
        )
    }
}

impl MacSeed {
    /// Draw a fresh seed. `message_len` is the byte length of the datum the
    /// seed will be bound to; only Toeplitz seeds depend on it.
    pub fn draw(
        scheme: MacScheme,
        k: usize,
        message_len: usize,
        rng: &mut impl RandomSource,
    ) -> Result<Self> {
        let material = match scheme {
            MacScheme::PolyEval => SeedMaterial::Poly(hash_field(k)?.random_element(rng)?),
            MacScheme::Toeplitz => {
                let nbits = toeplitz_seed_bits(k, message_len);
                let bytes = rng.next_bytes(nbits.div_ceil(8))?;
                SeedMaterial::Toeplitz {
                    bits: BitString::from_bytes_truncated(&bytes, nbits),
                    frame_bytes: message_len,
                }
            }
        };
        Ok(MacSeed {
            k,
            material,
            consumed: false,
        })
    }

    /// A PolyEval seed with a chosen key, for exhaustive enumeration.
    pub fn poly_with_key(k: usize, r: FieldElement) -> Result<Self> {
        if !PrimeField::same(r.field(), &hash_field(k)?) {
            return Err(Error::FieldMismatch);
        }
        Ok(MacSeed {
            k,
            material: SeedMaterial::Poly(r),
            consumed: false,
        })
    }

    /// A Toeplitz seed with chosen bits, for exhaustive enumeration.
    pub fn toeplitz_with_bits(k: usize, frame_bytes: usize, bits: BitString) -> Result<Self> {
        if bits.len() != toeplitz_seed_bits(k, frame_bytes) {
            return Err(Error::Config("Toeplitz seed length mismatch".into()));
        }
        Ok(MacSeed {
            k,
            material: SeedMaterial::Toeplitz { bits, frame_bytes },
            consumed: false,
        })
    }

    pub fn scheme(&self) -> MacScheme {
        match self.material {
            SeedMaterial::Poly(_) => MacScheme::PolyEval,
            SeedMaterial::Toeplitz { .. } => MacScheme::Toeplitz,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Tag the datum this seed is being bound to. A seed tags exactly one
    /// registered datum; a second call is a single-use violation.
    pub fn tag(&mut self, message: &[u8]) -> Result<MacTag> {
        if self.consumed {
            return Err(Error::SingleUse("MAC seed already bound to a datum"));
        }
        if message.is_empty() {
            return Err(Error::Config("cannot register an empty message".into()));
        }
        let tag = self.evaluate(message)?;
        self.consumed = true;
        Ok(tag)
    }

    /// Recompute the tag of a candidate datum under an already-bound seed.
    /// This is the verification path; it never binds a new datum.
    pub fn retag(&self, message: &[u8]) -> Result<MacTag> {
        if !self.consumed {
            return Err(Error::Protocol("seed is not bound to any datum".into()));
        }
        self.evaluate(message)
    }

    /// The raw keyed hash `u(R, message)`, independent of binding state.
    pub fn evaluate(&self, message: &[u8]) -> Result<MacTag> {
        match &self.material {
            SeedMaterial::Poly(r) => poly_hash(self.k, r, message),
            SeedMaterial::Toeplitz { bits, frame_bytes } => {
                toeplitz_hash(bits, &toeplitz_frame(message, *frame_bytes), self.k)
            }
        }
    }

    /// Persistent encoding: scheme, k, consumed flag, frame length, key.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![self.scheme().code()];
        out.extend_from_slice(&(self.k as u32).to_be_bytes());
        out.push(self.consumed as u8);
        match &self.material {
            SeedMaterial::Poly(r) => {
                out.extend_from_slice(&0u64.to_be_bytes());
                out.extend_from_slice(&r.to_be_bytes());
            }
            SeedMaterial::Toeplitz { bits, frame_bytes } => {
                out.extend_from_slice(&(*frame_bytes as u64).to_be_bytes());
                out.extend_from_slice(&bits.to_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 14 {
            return Err(Error::Malformed("truncated MAC seed".into()));
        }
        let scheme = MacScheme::from_code(bytes[0])?;
        let k = u32::from_be_bytes(bytes[1..5].try_into().expect("4 bytes")) as usize;
        let consumed = bytes[5] == 1;
        let frame_bytes = u64::from_be_bytes(bytes[6..14].try_into().expect("8 bytes")) as usize;
        let key = &bytes[14..];
        let material = match scheme {
            MacScheme::PolyEval => SeedMaterial::Poly(hash_field(k)?.from_be_bytes(key)?),
            MacScheme::Toeplitz => {
                let nbits = toeplitz_seed_bits(k, frame_bytes);
                if key.len() != nbits.div_ceil(8) {
                    return Err(Error::Malformed("Toeplitz seed length".into()));
                }
                SeedMaterial::Toeplitz {
                    bits: BitString::from_bytes_truncated(key, nbits),
                    frame_bytes,
                }
            }
        };
        Ok(MacSeed {
            k,
            material,
            consumed,
        })
    }

    /// The key material alone. Scheme and `k` are left to the caller.
    pub fn key_bytes(&self) -> Vec<u8> {
        match &self.material {
            SeedMaterial::Poly(r) => r.to_be_bytes(),
            SeedMaterial::Toeplitz { bits, .. } => bits.to_bytes(),
        }
    }

    /// Rebuild a seed already bound to its datum from [`MacSeed::key_bytes`].
    /// A Toeplitz key's length determines its frame.
    pub fn bound_from_key(scheme: MacScheme, k: usize, key: &[u8]) -> Result<Self> {
        let material = match scheme {
            MacScheme::PolyEval => {
                let field = hash_field(k)?;
                if key.len() != field.byte_len() {
                    return Err(Error::Malformed("PolyEval key length".into()));
                }
                SeedMaterial::Poly(field.from_be_bytes(key)?)
            }
            MacScheme::Toeplitz => {
                let fixed = (k - 1).div_ceil(8) + LENGTH_TRAILER_BYTES;
                let frame_bytes = key
                    .len()
                    .checked_sub(fixed)
                    .ok_or_else(|| Error::Malformed("Toeplitz key too short".into()))?;
                let nbits = toeplitz_seed_bits(k, frame_bytes);
                debug_assert_eq!(nbits.div_ceil(8), key.len());
                SeedMaterial::Toeplitz {
                    bits: BitString::from_bytes_truncated(key, nbits),
                    frame_bytes,
                }
            }
        };
        Ok(MacSeed {
            k,
            material,
            consumed: true,
        })
    }

    /// Decode a seed from the front of `bytes`; returns it with the number
    /// of bytes it occupied.
    pub fn read_prefix(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < 14 {
            return Err(Error::Malformed("truncated MAC seed".into()));
        }
        let k = u32::from_be_bytes(bytes[1..5].try_into().expect("4 bytes")) as usize;
        let frame_bytes = u64::from_be_bytes(bytes[6..14].try_into().expect("8 bytes")) as usize;
        let key_len = match MacScheme::from_code(bytes[0])? {
            MacScheme::PolyEval => hash_field(k)?.byte_len(),
            MacScheme::Toeplitz => toeplitz_seed_bits(k, frame_bytes).div_ceil(8),
        };
        let end = 14 + key_len;
        if bytes.len() < end {
            return Err(Error::Malformed("truncated MAC seed".into()));
        }
        Ok((Self::from_bytes(&bytes[..end])?, end))
    }

    /// Bytes of key material held for this seed.
    pub fn size_bytes(&self) -> usize {
        match &self.material {
            SeedMaterial::Poly(r) => r.field().byte_len(),
            SeedMaterial::Toeplitz { bits, .. } => bits.len().div_ceil(8),
        }
    }
}

/// `au2_hash`: bind `seed` to `message` and return its tag.
pub fn au2_hash(seed: &mut MacSeed, message: &[u8]) -> Result<MacTag> {
    seed.tag(message)
}

/// One-time Wegman-Carter key: hash key plus a `k`-bit tag pad.
#[derive(Clone, Debug)]
pub struct WcKey {
    hash: MacSeed,
    pad: BitString,
    used: bool,
}

impl WcKey {
    /// Derive a key from a random stream. Deterministic in the bytes the
    /// stream yields, so the receiver rebuilds it from the same key bits.
    pub fn draw(
        scheme: MacScheme,
        k: usize,
        message_len: usize,
        rng: &mut impl RandomSource,
    ) -> Result<Self> {
        let hash = MacSeed::draw(scheme, k, message_len, rng)?;
        let pad_bytes = rng.next_bytes(k.div_ceil(8))?;
        Ok(WcKey {
            hash,
            pad: BitString::from_bytes_truncated(&pad_bytes, k),
            used: false,
        })
    }

    pub fn k(&self) -> usize {
        self.hash.k
    }

    fn mark_used(&mut self) -> Result<()> {
        if self.used {
            return Err(Error::SingleUse("Wegman-Carter key already used"));
        }
        self.used = true;
        Ok(())
    }

    fn raw(&self, message: &[u8]) -> Result<MacTag> {
        let h = if message.is_empty() {
            MacTag(BitString::zeros(self.k()))
        } else {
            self.hash.evaluate(message)?
        };
        Ok(h.xor(&self.pad))
    }
}

/// Tag `message` and burn the key.
pub fn wc_tag(key: &mut WcKey, message: &[u8]) -> Result<MacTag> {
    key.mark_used()?;
    key.raw(message)
}

/// Check `tag` against `message` and burn the key. A wrong tag is a
/// `false` result, not an error; reuse of the key is an error.
pub fn wc_verify(key: &mut WcKey, message: &[u8], tag: &MacTag) -> Result<bool> {
    key.mark_used()?;
    if tag.k() != key.k() {
        return Ok(false);
    }
    Ok(key.raw(message)? == *tag)
}

/// SHA-512 digest, optionally truncated to `tag_bits` by the caller.
pub fn cr_hash(message: &[u8]) -> [u8; 64] {
    Sha512::digest(message).into()
}
