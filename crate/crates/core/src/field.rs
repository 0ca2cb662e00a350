//! Prime-field arithmetic and polynomial algebra.
//!
//! Every share value and every field-based MAC is a residue modulo a prime
//! `q`. When `q = 2^m - 1` the field reduces by shift-and-add instead of
//! long division; the two paths must agree bit for bit.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::random::{RandomSource, SeededRandom};

/// Miller-Rabin rounds; each round has error at most 1/4, so 50 rounds
/// bound the false-prime probability by 2^-100.
const MILLER_RABIN_ROUNDS: usize = 50;

const SMALL_PRIMES: [u32; 25] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    /// `q = 2^m - 1`, stored as the exponent `m`.
    Mersenne(u32),
    General,
}

/// Configuration of a prime field `F_q`.
#[derive(PartialEq, Eq)]
pub struct PrimeField {
    modulus: BigUint,
    kind: FieldKind,
    bits: usize,
    mask: BigUint,
}

pub type FieldRef = Arc<PrimeField>;

impl fmt::Debug for PrimeField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            FieldKind::Mersenne(m) => write!(f, "F(2^{m}-1)"),
            FieldKind::General => write!(f, "F({})", self.modulus),
        }
    }
}

impl PrimeField {
    /// Build a field, checking primality. Mersenne moduli are detected
    /// automatically and get the fast reduction path.
    pub fn new(modulus: BigUint) -> Result<FieldRef> {
        if !is_probable_prime(&modulus) {
            return Err(Error::Config(format!("modulus {modulus} is not prime")));
        }
        let bits = modulus.bits() as usize;
        let plus_one = &modulus + 1u32;
        let kind = if plus_one.count_ones() == 1 {
            FieldKind::Mersenne(bits as u32)
        } else {
            FieldKind::General
        };
        Ok(Arc::new(Self::assemble(modulus, kind)))
    }

    /// Same as [`PrimeField::new`] but never selects the Mersenne path.
    /// Used to compare the two reductions on the same modulus.
    pub fn new_general(modulus: BigUint) -> Result<FieldRef> {
        if !is_probable_prime(&modulus) {
            return Err(Error::Config(format!("modulus {modulus} is not prime")));
        }
        Ok(Arc::new(Self::assemble(modulus, FieldKind::General)))
    }

    pub fn mersenne(m: u32) -> Result<FieldRef> {
        let q = (BigUint::one() << m) - 1u32;
        let f = Self::new(q)?;
        debug_assert_eq!(f.kind, FieldKind::Mersenne(m));
        Ok(f)
    }

    fn assemble(modulus: BigUint, kind: FieldKind) -> Self {
        let bits = modulus.bits() as usize;
        let mask = (BigUint::one() << bits) - 1u32;
        PrimeField {
            modulus,
            kind,
            bits,
            mask,
        }
    }

    /// Parse `"mersenne:127"`, `"2^127-1"`, `"2^127-25"`, `"0x..."` hex or decimal.
    pub fn parse(spec: &str) -> Result<FieldRef> {
        let s = spec.trim();
        if let Some(m) = s.strip_prefix("mersenne:") {
            let m: u32 = m
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad mersenne exponent in {spec:?}")))?;
            return Self::mersenne(m);
        }
        if let Some((m, c)) = s.strip_prefix("2^").and_then(|rest| rest.split_once('-')) {
            if let (Ok(m), Ok(c)) = (m.trim().parse::<u32>(), c.trim().parse::<u64>()) {
                if c == 1 {
                    return Self::mersenne(m);
                }
                return Self::new((BigUint::one() << m) - c);
            }
        }
        Self::new(parse_biguint(s)?)
    }

    pub fn modulus(&self) -> &BigUint {
        &self.modulus
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    /// Bit length of `q`.
    pub fn bits(&self) -> usize {
        self.bits
    }

    /// Width of a data block that always fits below `q`.
    pub fn block_bits(&self) -> usize {
        self.bits - 1
    }

    /// Canonical byte width of an element.
    pub fn byte_len(&self) -> usize {
        self.bits.div_ceil(8)
    }

    /// Reduce an arbitrary non-negative integer into `[0, q)`.
    pub fn reduce(&self, x: BigUint) -> BigUint {
        match self.kind {
            FieldKind::Mersenne(m) => self.reduce_mersenne(x, m as usize),
            FieldKind::General => self.reduce_general(x),
        }
    }

    pub fn reduce_general(&self, x: BigUint) -> BigUint {
        if x < self.modulus {
            x
        } else {
            x % &self.modulus
        }
    }

    fn reduce_mersenne(&self, mut x: BigUint, m: usize) -> BigUint {
        while x.bits() as usize > m {
            let hi = &x >> m;
            x &= &self.mask;
            x += hi;
        }
        if x >= self.modulus {
            x -= &self.modulus;
        }
        x
    }

    pub fn element(self: &Arc<Self>, v: impl Into<BigUint>) -> FieldElement {
        FieldElement {
            value: self.reduce(v.into()),
            field: Arc::clone(self),
        }
    }

    pub fn zero(self: &Arc<Self>) -> FieldElement {
        FieldElement {
            value: BigUint::zero(),
            field: Arc::clone(self),
        }
    }

    pub fn one(self: &Arc<Self>) -> FieldElement {
        self.element(1u32)
    }

    /// Decode a big-endian byte string; rejects values `>= q`.
    pub fn from_be_bytes(self: &Arc<Self>, bytes: &[u8]) -> Result<FieldElement> {
        let v = BigUint::from_bytes_be(bytes);
        if v >= self.modulus {
            return Err(Error::Malformed(format!(
                "value of {} bytes is not a canonical residue",
                bytes.len()
            )));
        }
        Ok(FieldElement {
            value: v,
            field: Arc::clone(self),
        })
    }

    /// Uniform element by rejection sampling over `bits(q)`-bit strings.
    pub fn random_element(self: &Arc<Self>, rng: &mut impl RandomSource) -> Result<FieldElement> {
        let nbytes = self.byte_len();
        let excess = nbytes * 8 - self.bits;
        let mut buf = vec![0u8; nbytes];
        loop {
            rng.fill(&mut buf)?;
            buf[0] &= 0xff >> excess;
            let v = BigUint::from_bytes_be(&buf);
            if v < self.modulus {
                return Ok(FieldElement {
                    value: v,
                    field: Arc::clone(self),
                });
            }
        }
    }

    pub fn same(a: &FieldRef, b: &FieldRef) -> bool {
        Arc::ptr_eq(a, b) || a.modulus == b.modulus
    }
}

/// A canonical residue `0 <= value < q` tied to its field.
#[derive(Clone, PartialEq, Eq)]
pub struct FieldElement {
    value: BigUint,
    field: FieldRef,
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

impl FieldElement {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn field(&self) -> &FieldRef {
        &self.field
    }

    pub fn is_zero(&self) -> bool {
        self.value.is_zero()
    }

    pub fn to_u64(&self) -> Option<u64> {
        self.value.to_u64()
    }

    /// Fixed-width big-endian encoding, `field.byte_len()` bytes.
    pub fn to_be_bytes(&self) -> Vec<u8> {
        let width = self.field.byte_len();
        let mut out = vec![0u8; width];
        if !self.value.is_zero() {
            let raw = self.value.to_bytes_be();
            out[width - raw.len()..].copy_from_slice(&raw);
        }
        out
    }

    fn check(&self, other: &FieldElement) {
        assert!(
            PrimeField::same(&self.field, &other.field),
            "arithmetic across different fields"
        );
    }

    pub fn pow(&self, exp: &BigUint) -> FieldElement {
        FieldElement {
            value: self.value.modpow(exp, &self.field.modulus),
            field: Arc::clone(&self.field),
        }
    }

    pub fn pow_u64(&self, exp: u64) -> FieldElement {
        self.pow(&BigUint::from(exp))
    }

    /// Multiplicative inverse via Fermat; `None` for zero.
    pub fn inverse(&self) -> Option<FieldElement> {
        if self.is_zero() {
            return None;
        }
        let e = &self.field.modulus - 2u32;
        Some(self.pow(&e))
    }
}

impl Add for &FieldElement {
    type Output = FieldElement;
    fn add(self, rhs: &FieldElement) -> FieldElement {
        self.check(rhs);
        let mut v = &self.value + &rhs.value;
        if v >= self.field.modulus {
            v -= &self.field.modulus;
        }
        FieldElement {
            value: v,
            field: Arc::clone(&self.field),
        }
    }
}

impl Sub for &FieldElement {
    type Output = FieldElement;
    fn sub(self, rhs: &FieldElement) -> FieldElement {
        self.check(rhs);
        let v = if self.value >= rhs.value {
            &self.value - &rhs.value
        } else {
            &self.value + &self.field.modulus - &rhs.value
        };
        FieldElement {
            value: v,
            field: Arc::clone(&self.field),
        }
    }
}

impl Mul for &FieldElement {
    type Output = FieldElement;
    fn mul(self, rhs: &FieldElement) -> FieldElement {
        self.check(rhs);
        FieldElement {
            value: self.field.reduce(&self.value * &rhs.value),
            field: Arc::clone(&self.field),
        }
    }
}

impl Neg for &FieldElement {
    type Output = FieldElement;
    fn neg(self) -> FieldElement {
        self.field.zero().sub(self)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr for FieldElement {
            type Output = FieldElement;
            fn $m(self, rhs: FieldElement) -> FieldElement {
                (&self).$m(&rhs)
            }
        }
        impl $tr<&FieldElement> for FieldElement {
            type Output = FieldElement;
            fn $m(self, rhs: &FieldElement) -> FieldElement {
                (&self).$m(rhs)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

/// Polynomial over `F_q`, constant term first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Polynomial {
    coeffs: Vec<FieldElement>,
    degree_bound: usize,
    field: FieldRef,
}

impl Polynomial {
    pub fn new(field: &FieldRef, coeffs: Vec<FieldElement>, degree_bound: usize) -> Result<Self> {
        if coeffs.len() > degree_bound + 1 {
            return Err(Error::Config(format!(
                "{} coefficients exceed degree bound {degree_bound}",
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !PrimeField::same(c.field(), field)) {
            return Err(Error::FieldMismatch);
        }
        Ok(Polynomial {
            coeffs,
            degree_bound,
            field: Arc::clone(field),
        })
    }

    /// `degree` uniform non-constant coefficients behind a fixed constant term.
    pub fn random(
        degree: usize,
        constant: FieldElement,
        rng: &mut impl RandomSource,
    ) -> Result<Self> {
        let field = Arc::clone(constant.field());
        let mut coeffs = Vec::with_capacity(degree + 1);
        coeffs.push(constant);
        for _ in 0..degree {
            coeffs.push(field.random_element(rng)?);
        }
        Ok(Polynomial {
            coeffs,
            degree_bound: degree,
            field,
        })
    }

    pub fn coefficients(&self) -> &[FieldElement] {
        &self.coeffs
    }

    pub fn degree_bound(&self) -> usize {
        self.degree_bound
    }

    pub fn field(&self) -> &FieldRef {
        &self.field
    }

    pub fn constant_term(&self) -> FieldElement {
        self.coeffs
            .first()
            .cloned()
            .unwrap_or_else(|| self.field.zero())
    }

    /// Horner evaluation.
    pub fn eval(&self, x: &FieldElement) -> Result<FieldElement> {
        if !PrimeField::same(x.field(), &self.field) {
            return Err(Error::FieldMismatch);
        }
        let mut acc = self.field.zero();
        for c in self.coeffs.iter().rev() {
            acc = &(&acc * x) + c;
        }
        Ok(acc)
    }

    /// Evaluate at the holder index `j` (an integer embedded in the field).
    pub fn eval_at(&self, j: u64) -> FieldElement {
        self.eval(&self.field.element(j))
            .expect("index embedded in the polynomial's own field")
    }
}

/// `f(0)` for the unique polynomial of degree `< points.len()` through the
/// given points.
pub fn lagrange_at_zero(points: &[(FieldElement, FieldElement)]) -> Result<FieldElement> {
    let (first_x, _) = points
        .first()
        .ok_or_else(|| Error::Protocol("interpolation needs at least one point".into()))?;
    let field = Arc::clone(first_x.field());
    for (i, (x, y)) in points.iter().enumerate() {
        if !PrimeField::same(x.field(), &field) || !PrimeField::same(y.field(), &field) {
            return Err(Error::FieldMismatch);
        }
        if x.is_zero() {
            return Err(Error::ZeroIndex);
        }
        if points[..i].iter().any(|(other, _)| other == x) {
            return Err(Error::DuplicateIndex(x.to_string()));
        }
    }
    let mut acc = field.zero();
    for (j, (xj, yj)) in points.iter().enumerate() {
        let mut num = field.one();
        let mut den = field.one();
        for (m, (xm, _)) in points.iter().enumerate() {
            if m == j {
                continue;
            }
            num = &num * xm;
            den = &den * &(xm - xj);
        }
        let inv = den.inverse().expect("distinct indices give a nonzero denominator");
        acc = &acc + &(&(yj * &num) * &inv);
    }
    Ok(acc)
}

/// Lagrange interpolation at zero with integer holder indices.
pub fn lagrange_at_zero_indexed(field: &FieldRef, shares: &[(u64, FieldElement)]) -> Result<FieldElement> {
    let points: Vec<_> = shares
        .iter()
        .map(|(j, v)| (field.element(*j), v.clone()))
        .collect();
    lagrange_at_zero(&points)
}

/// Weights `lambda_j` with `f(0) = sum_j lambda_j f(x_j)` for distinct
/// nonzero integer abscissae.
pub fn lagrange_weights(field: &FieldRef, xs: &[u64]) -> Result<Vec<FieldElement>> {
    let xs: Vec<FieldElement> = xs.iter().map(|&x| field.element(x)).collect();
    for (j, x) in xs.iter().enumerate() {
        if x.is_zero() {
            return Err(Error::ZeroIndex);
        }
        if xs[..j].contains(x) {
            return Err(Error::DuplicateIndex(x.to_string()));
        }
    }
    xs.iter()
        .enumerate()
        .map(|(j, xj)| {
            let mut num = field.one();
            let mut den = field.one();
            for (m, xm) in xs.iter().enumerate() {
                if m != j {
                    num = &num * xm;
                    den = &den * &(xm - xj);
                }
            }
            Ok(&num * &den.inverse().expect("distinct nonzero points"))
        })
        .collect()
}

/// Left-to-right square-and-multiply: `base^exponent mod modulus`.
pub fn mod_exp(base: &BigUint, exponent: &BigUint, modulus: &BigUint) -> Result<BigUint> {
    if *modulus <= BigUint::one() {
        return Err(Error::Config("modulus must exceed 1".into()));
    }
    let base = base % modulus;
    let mut acc = BigUint::one();
    for i in (0..exponent.bits()).rev() {
        acc = &acc * &acc % modulus;
        if exponent.bit(i) {
            acc = &acc * &base % modulus;
        }
    }
    Ok(acc)
}

/// Probabilistic primality: trial division, then Miller-Rabin with bases
/// drawn from a stream seeded by the candidate itself (deterministic).
pub fn is_probable_prime(n: &BigUint) -> bool {
    let two = BigUint::from(2u32);
    if *n < two {
        return false;
    }
    for &p in SMALL_PRIMES.iter() {
        let p = BigUint::from(p);
        if *n == p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    let n_minus_1 = n - 1u32;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    let mut rng = SeededRandom::derive(0x5eed, &n.to_str_radix(16));
    let nbytes = (n.bits() as usize).div_ceil(8) + 8;
    'witness: for _ in 0..MILLER_RABIN_ROUNDS {
        let raw = rng.next_bytes(nbytes).expect("unbounded stream");
        // a in [2, n-2]
        let a = BigUint::from_bytes_be(&raw) % (n - 3u32) + 2u32;
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Largest prime `<= bound`.
pub fn prev_prime(bound: &BigUint) -> Option<BigUint> {
    let two = BigUint::from(2u32);
    if *bound < two {
        return None;
    }
    let mut c = bound.clone();
    if c > two && (&c % 2u32).is_zero() {
        c -= 1u32;
    }
    loop {
        if is_probable_prime(&c) {
            return Some(c);
        }
        if c <= two {
            return None;
        }
        c -= if c == BigUint::from(3u32) { 1u32 } else { 2u32 };
    }
}

pub fn parse_biguint(s: &str) -> Result<BigUint> {
    let clean: String = s.chars().filter(|c| !c.is_whitespace() && *c != '_').collect();
    let parsed = if let Some(hex) = clean.strip_prefix("0x").or_else(|| clean.strip_prefix("0X")) {
        BigUint::parse_bytes(hex.as_bytes(), 16)
    } else {
        BigUint::parse_bytes(clean.as_bytes(), 10)
    };
    parsed.ok_or_else(|| Error::Config(format!("cannot parse integer {s:?}")))
}
