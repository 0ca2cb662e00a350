//! Length-prefixed big-endian encoding shared by messages and stores.
//!
//! Integers are fixed-width big-endian. Byte strings and lists carry a
//! `u32` length. Field elements use the field's fixed width, so a decoder
//! needs the field.

use num_bigint::BigUint;

use crate::error::{Error, Result};
use crate::field::{FieldElement, FieldRef};
use crate::renewal::{RenewalPacket, RenewalShares};
use crate::spss::{MaskedResponse, PrecomputeContribution, PrecomputedTuple, ReconstructionRequest, ShareFragment};

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
        self
    }

    pub fn raw(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    pub fn str(&mut self, v: &str) -> &mut Self {
        self.bytes(v.as_bytes())
    }

    pub fn u64s(&mut self, v: &[u64]) -> &mut Self {
        self.u32(v.len() as u32);
        for x in v {
            self.u64(*x);
        }
        self
    }

    pub fn elem(&mut self, e: &FieldElement) -> &mut Self {
        self.raw(&e.to_be_bytes())
    }

    pub fn elems(&mut self, v: &[FieldElement]) -> &mut Self {
        self.u32(v.len() as u32);
        for e in v {
            self.elem(e);
        }
        self
    }

    pub fn big(&mut self, v: &BigUint) -> &mut Self {
        self.bytes(&v.to_bytes_be())
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn done(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Malformed(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Malformed(format!(
                "need {n} bytes at offset {}, have {}",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn rest(&mut self) -> &'a [u8] {
        let out = &self.buf[self.pos..];
        self.pos = self.buf.len();
        out
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    pub fn str(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| Error::Malformed("invalid UTF-8".into()))
    }

    fn count(&mut self, unit: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(unit) > self.remaining() {
            return Err(Error::Malformed(format!("list of {n} overruns the buffer")));
        }
        Ok(n)
    }

    pub fn u64s(&mut self) -> Result<Vec<u64>> {
        let n = self.count(8)?;
        (0..n).map(|_| self.u64()).collect()
    }

    pub fn elem(&mut self, field: &FieldRef) -> Result<FieldElement> {
        field.from_be_bytes(self.take(field.byte_len())?)
    }

    pub fn elems(&mut self, field: &FieldRef) -> Result<Vec<FieldElement>> {
        let n = self.count(field.byte_len())?;
        (0..n).map(|_| self.elem(field)).collect()
    }

    pub fn big(&mut self) -> Result<BigUint> {
        Ok(BigUint::from_bytes_be(self.bytes()?))
    }
}

pub fn put_fragment(w: &mut Writer, f: &ShareFragment) {
    w.u64(f.secret_id).u64(f.holder).u64(f.byte_len).elems(&f.data_shares).elem(&f.password_share);
}

pub fn get_fragment(r: &mut Reader, field: &FieldRef) -> Result<ShareFragment> {
    Ok(ShareFragment {
        secret_id: r.u64()?,
        holder: r.u64()?,
        byte_len: r.u64()?,
        data_shares: r.elems(field)?,
        password_share: r.elem(field)?,
    })
}

pub fn put_tuple(w: &mut Writer, t: &PrecomputedTuple) {
    w.u64(t.id).u64s(&t.participants).elems(&t.r_shares).elems(&t.zero_shares);
}

pub fn get_tuple(r: &mut Reader, field: &FieldRef) -> Result<PrecomputedTuple> {
    let t = PrecomputedTuple {
        id: r.u64()?,
        participants: r.u64s()?,
        r_shares: r.elems(field)?,
        zero_shares: r.elems(field)?,
    };
    if t.r_shares.len() != t.participants.len() || t.zero_shares.len() != t.participants.len() {
        return Err(Error::Malformed(format!("tuple {} shape", t.id)));
    }
    Ok(t)
}

pub fn put_contribution(w: &mut Writer, c: &PrecomputeContribution) {
    w.u64(c.round).u64(c.from).u64(c.to).elem(&c.r_share).elem(&c.zero_share);
}

pub fn get_contribution(r: &mut Reader, field: &FieldRef) -> Result<PrecomputeContribution> {
    Ok(PrecomputeContribution {
        round: r.u64()?,
        from: r.u64()?,
        to: r.u64()?,
        r_share: r.elem(field)?,
        zero_share: r.elem(field)?,
    })
}

pub fn put_request(w: &mut Writer, q: &ReconstructionRequest) {
    w.u64(q.secret_id).u64s(&q.subset).elem(&q.password_share).u64s(&q.tuple_ids);
}

pub fn get_request(r: &mut Reader, field: &FieldRef) -> Result<ReconstructionRequest> {
    Ok(ReconstructionRequest {
        secret_id: r.u64()?,
        subset: r.u64s()?,
        password_share: r.elem(field)?,
        tuple_ids: r.u64s()?,
    })
}

pub fn put_response(w: &mut Writer, m: &MaskedResponse) {
    w.u64(m.secret_id).u64(m.holder).u64(m.byte_len).elems(&m.values);
}

pub fn get_response(r: &mut Reader, field: &FieldRef) -> Result<MaskedResponse> {
    Ok(MaskedResponse {
        secret_id: r.u64()?,
        holder: r.u64()?,
        byte_len: r.u64()?,
        values: r.elems(field)?,
    })
}

pub fn put_packet(w: &mut Writer, p: &RenewalPacket) {
    w.u64(p.sender).u64(p.round).u32(p.commitments.len() as u32);
    for track in &p.commitments {
        w.u32(track.len() as u32);
        for c in track {
            w.big(c);
        }
    }
}

pub fn get_packet(r: &mut Reader) -> Result<RenewalPacket> {
    let sender = r.u64()?;
    let round = r.u64()?;
    let tracks = r.count(4)?;
    let mut commitments = Vec::with_capacity(tracks);
    for _ in 0..tracks {
        let n = r.count(4)?;
        commitments.push((0..n).map(|_| r.big()).collect::<Result<Vec<_>>>()?);
    }
    Ok(RenewalPacket {
        sender,
        round,
        commitments,
    })
}

pub fn put_renewal_shares(w: &mut Writer, s: &RenewalShares) {
    w.u64(s.sender).u64(s.recipient).u64(s.round).u32(s.pairs.len() as u32);
    for (a, b) in &s.pairs {
        w.elem(a).elem(b);
    }
}

pub fn get_renewal_shares(r: &mut Reader, field: &FieldRef) -> Result<RenewalShares> {
    let sender = r.u64()?;
    let recipient = r.u64()?;
    let round = r.u64()?;
    let n = r.count(2 * field.byte_len())?;
    let pairs = (0..n)
        .map(|_| Ok((r.elem(field)?, r.elem(field)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(RenewalShares {
        sender,
        recipient,
        round,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::PrimeField;

    #[test]
    fn primitives_round_trip() {
        let f = PrimeField::mersenne(31).unwrap();
        let mut w = Writer::new();
        w.u8(7).u32(9).u64(u64::MAX).bytes(b"abc").str("k1").u64s(&[1, 2]);
        w.elems(&[f.element(5u32), f.element(2_147_483_646u32)]).big(&BigUint::from(300u32));
        let buf = w.finish();
        let mut r = Reader::new(&buf);
        assert_eq!(r.u8().unwrap(), 7);
        assert_eq!(r.u32().unwrap(), 9);
        assert_eq!(r.u64().unwrap(), u64::MAX);
        assert_eq!(r.bytes().unwrap(), b"abc");
        assert_eq!(r.str().unwrap(), "k1");
        assert_eq!(r.u64s().unwrap(), vec![1, 2]);
        assert_eq!(r.elems(&f).unwrap()[1], f.element(2_147_483_646u32));
        assert_eq!(r.big().unwrap(), BigUint::from(300u32));
        r.done().unwrap();
    }

    #[test]
    fn truncation_and_overlong_lists_fail() {
        let f = PrimeField::mersenne(31).unwrap();
        let mut w = Writer::new();
        w.u32(1_000_000);
        let buf = w.finish();
        assert!(Reader::new(&buf).elems(&f).is_err());
        assert!(Reader::new(&buf[..2]).u32().is_err());
        // out-of-range field element
        let mut w = Writer::new();
        w.raw(&[0x7f, 0xff, 0xff, 0xff]);
        assert!(Reader::new(&w.finish()).elem(&f).is_err());
    }

    #[test]
    fn protocol_types_round_trip() {
        let f = PrimeField::mersenne(31).unwrap();
        let e = |v: u32| f.element(v);
        let frag = ShareFragment {
            secret_id: 3,
            holder: 2,
            byte_len: 5,
            data_shares: vec![e(1), e(2), e(3)],
            password_share: e(4),
        };
        let tuple = PrecomputedTuple {
            id: 8,
            participants: vec![1, 2, 3],
            r_shares: vec![e(1), e(2), e(3)],
            zero_shares: vec![e(4), e(5), e(6)],
        };
        let packet = RenewalPacket {
            sender: 1,
            round: 2,
            commitments: vec![vec![BigUint::from(16u32)], vec![]],
        };
        let shares = RenewalShares {
            sender: 1,
            recipient: 3,
            round: 2,
            pairs: vec![(e(4), e(10))],
        };
        let mut w = Writer::new();
        put_fragment(&mut w, &frag);
        put_tuple(&mut w, &tuple);
        put_packet(&mut w, &packet);
        put_renewal_shares(&mut w, &shares);
        let buf = w.finish();
        let mut r = Reader::new(&buf);
        assert_eq!(get_fragment(&mut r, &f).unwrap(), frag);
        assert_eq!(get_tuple(&mut r, &f).unwrap(), tuple);
        assert_eq!(get_packet(&mut r).unwrap(), packet);
        assert_eq!(get_renewal_shares(&mut r, &f).unwrap(), shares);
        r.done().unwrap();
    }
}
