//! Big-endian byte writer/reader shared by the binary formats.

use thiserror::Error;

use crate::contact_log::{ContactRecord, TickCounts};
use crate::ident::{DailyIdentifier, Rdi};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed input: {0}")]
pub struct Malformed(pub String);

impl Malformed {
    pub fn new(reason: impl Into<String>) -> Self {
        Malformed(reason.into())
    }
}

#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Writer::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn rdi(&mut self, v: Rdi) -> &mut Self {
        self.buf.extend_from_slice(&v.to_bytes());
        self
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    /// u16 length prefix, then the bytes.
    pub fn blob(&mut self, v: &[u8]) -> Result<&mut Self, Malformed> {
        let len = u16::try_from(v.len()).map_err(|_| Malformed::new("blob longer than 65535 bytes"))?;
        Ok(self.u16(len).bytes(v))
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
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

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], Malformed> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Malformed::new(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, Malformed> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, Malformed> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, Malformed> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn rdi(&mut self) -> Result<Rdi, Malformed> {
        Ok(Rdi::from_bytes(self.take(16)?.try_into().unwrap()))
    }

    pub fn blob(&mut self) -> Result<&'a [u8], Malformed> {
        let n = self.u16()?;
        self.take(usize::from(n))
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn expect_end(&self) -> Result<(), Malformed> {
        if self.remaining() == 0 {
            Ok(())
        } else {
            Err(Malformed::new(format!("{} trailing bytes", self.remaining())))
        }
    }
}

pub fn put_identifier(w: &mut Writer, id: &DailyIdentifier) {
    w.u32(id.date).rdi(id.rdi);
}

pub fn get_identifier(r: &mut Reader<'_>) -> Result<DailyIdentifier, Malformed> {
    let date = r.u32()?;
    let rdi = r.rdi()?;
    Ok(DailyIdentifier { rdi, date })
}

pub fn put_counts(w: &mut Writer, c: &TickCounts) {
    w.u32(c.near).u32(c.mid).u32(c.far);
}

pub fn get_counts(r: &mut Reader<'_>) -> Result<TickCounts, Malformed> {
    Ok(TickCounts {
        near: r.u32()?,
        mid: r.u32()?,
        far: r.u32()?,
    })
}

/// date u32 | rdi 16 | counts 3×u32 | first u16 | last u16 | n u16 | n × (bucket u16, mask u8)
pub fn put_record(w: &mut Writer, rec: &ContactRecord) {
    w.u32(rec.date).rdi(rec.foreign_rdi);
    put_counts(w, &rec.counts);
    w.u16(rec.first_tick).u16(rec.last_tick);
    let masks = rec.bucket_masks();
    w.u16(masks.len() as u16);
    for &(b, m) in masks {
        w.u16(b).u8(m);
    }
}

pub fn record_len(rec: &ContactRecord) -> usize {
    4 + 16 + 12 + 2 + 2 + 2 + 3 * rec.bucket_masks().len()
}

pub fn get_record(r: &mut Reader<'_>) -> Result<ContactRecord, Malformed> {
    let date = r.u32()?;
    let rdi = r.rdi()?;
    let counts = get_counts(r)?;
    let first = r.u16()?;
    let last = r.u16()?;
    let n = r.u16()?;
    let mut buckets = Vec::with_capacity(usize::from(n));
    for _ in 0..n {
        let b = r.u16()?;
        let m = r.u8()?;
        buckets.push((b, m));
    }
    if first > last || last >= crate::contact_log::TICKS_PER_DAY {
        return Err(Malformed::new("record tick bounds"));
    }
    if buckets.windows(2).any(|w| w[0].0 >= w[1].0)
        || buckets
            .iter()
            .any(|&(b, m)| b >= crate::contact_log::BUCKETS_PER_DAY || m == 0)
    {
        return Err(Malformed::new("record buckets"));
    }
    Ok(ContactRecord::from_parts(rdi, date, counts, first, last, buckets))
}
