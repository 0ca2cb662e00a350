//! Packed bit strings.
//!
//! Bit `i` of a string lives in word `i / 64` at position `i % 64`. Byte
//! conversions are MSB-first: bit 0 of the string is the top bit of byte 0.

use std::fmt;

#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct BitString {
    words: Vec<u64>,
    len: usize,
}

impl BitString {
    pub fn zeros(len: usize) -> Self {
        BitString {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut s = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            s.set(i, b);
        }
        s
    }

    pub fn from_bytes(bytes: &[u8]) -> Self {
        Self::from_bytes_truncated(bytes, bytes.len() * 8)
    }

    /// Take the first `len` bits of `bytes` (MSB-first).
    pub fn from_bytes_truncated(bytes: &[u8], len: usize) -> Self {
        assert!(len <= bytes.len() * 8, "not enough bytes for {len} bits");
        let mut s = Self::zeros(len);
        for i in 0..len {
            if bytes[i / 8] >> (7 - i % 8) & 1 == 1 {
                s.words[i / 64] |= 1 << (i % 64);
            }
        }
        s
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len.div_ceil(8)];
        for i in 0..self.len {
            if self.get(i) {
                out[i / 8] |= 0x80 >> (i % 8);
            }
        }
        out
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.get(i)).collect()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, v: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        if v {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn push(&mut self, v: bool) {
        if self.len.is_multiple_of(64) {
            self.words.push(0);
        }
        self.len += 1;
        self.set(self.len - 1, v);
    }

    pub fn extend(&mut self, other: &BitString) {
        for i in 0..other.len {
            self.push(other.get(i));
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// 64 bits starting at bit `start`, zero beyond the end.
    pub(crate) fn window64(&self, start: usize) -> u64 {
        let w = start / 64;
        let s = start % 64;
        let lo = self.words.get(w).copied().unwrap_or(0);
        let v = if s == 0 {
            lo
        } else {
            let hi = self.words.get(w + 1).copied().unwrap_or(0);
            (lo >> s) | (hi << (64 - s))
        };
        let remaining = self.len.saturating_sub(start);
        if remaining >= 64 {
            v
        } else {
            v & ((1u64 << remaining) - 1)
        }
    }

    /// Bits `[start, start + len)` as a big-endian integer in
    /// `ceil(len / 8)` bytes; positions past the end read as zero.
    pub fn range_be_bytes(&self, start: usize, len: usize) -> Vec<u8> {
        let nbytes = len.div_ceil(8);
        let mut out = vec![0u8; nbytes];
        let lead = nbytes * 8 - len;
        for i in 0..len {
            let pos = start + i;
            if pos < self.len && self.get(pos) {
                let o = lead + i;
                out[o / 8] |= 0x80 >> (o % 8);
            }
        }
        out
    }

    pub fn xor(&self, other: &BitString) -> BitString {
        assert_eq!(self.len, other.len, "xor of unequal lengths");
        BitString {
            words: self.words.iter().zip(&other.words).map(|(a, b)| a ^ b).collect(),
            len: self.len,
        }
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString[{}](", self.len)?;
        for i in 0..self.len.min(128) {
            write!(f, "{}", self.get(i) as u8)?;
        }
        if self.len > 128 {
            write!(f, "...")?;
        }
        write!(f, ")")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn msb_first_bytes() {
        let s = BitString::from_bytes(&[0b1010_0000]);
        assert_eq!(s.to_bools()[..4], [true, false, true, false]);
        assert_eq!(s.to_bytes(), vec![0b1010_0000]);
    }

    #[test]
    fn window_spans_words() {
        let mut s = BitString::zeros(130);
        s.set(63, true);
        s.set(64, true);
        s.set(129, true);
        assert_eq!(s.window64(63) & 0b11, 0b11);
        assert_eq!(s.window64(100), 1 << 29);
        assert_eq!(s.window64(129), 1);
    }

    #[test]
    fn range_extraction() {
        let s = BitString::from_bytes(&[0b1011_0110, 0b0100_0000]);
        assert_eq!(s.range_be_bytes(0, 3), vec![0b101]);
        assert_eq!(s.range_be_bytes(4, 6), vec![0b01_1001]);
        assert_eq!(s.range_be_bytes(14, 4), vec![0]);
        assert_eq!(s.range_be_bytes(0, 12), vec![0b1011, 0b0110_0100]);
    }

    proptest! {
        #[test]
        fn bytes_round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..40)) {
            prop_assert_eq!(BitString::from_bytes(&bytes).to_bytes(), bytes);
        }
    }
}
