//! On-disk epoch package: a cleartext header, three opaque metadata blobs and
//! the permuted encrypted rows. All integers are big-endian.

use crate::crypto::EpochId;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CNCL";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct EncryptedRow {
    pub el: Vec<u8>,
    pub eo: Vec<u8>,
    pub er: Vec<u8>,
    pub ec: Vec<u8>,
}

impl EncryptedRow {
    pub fn encoded_len(&self) -> usize {
        16 + self.el.len() + self.eo.len() + self.er.len() + self.ec.len()
    }

    pub fn write(&self, out: &mut Vec<u8>) {
        for f in [&self.el, &self.eo, &self.er, &self.ec] {
            put_bytes(out, f);
        }
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self> {
        Ok(EncryptedRow {
            el: r.bytes()?.to_vec(),
            eo: r.bytes()?.to_vec(),
            er: r.bytes()?.to_vec(),
            ec: r.bytes()?.to_vec(),
        })
    }
}

/// Metadata the store and any observer may see.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpochHeader {
    pub eid: EpochId,
    pub epoch_start: u64,
    pub duration: u64,
    pub x: u32,
    pub y: u32,
    pub u: u32,
    pub n_rows: u64,
    pub n_fake: u64,
}

impl EpochHeader {
    pub const LEN: usize = 8 * 3 + 4 * 3 + 8 * 2;

    pub fn contains(&self, t: u64) -> bool {
        t >= self.epoch_start && t < self.epoch_start + self.duration
    }

    pub fn overlaps(&self, t0: u64, t1: u64) -> bool {
        t0 < self.epoch_start + self.duration && t1 >= self.epoch_start
    }

    fn write(&self, out: &mut Vec<u8>) {
        for v in [self.eid, self.epoch_start, self.duration] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        for v in [self.x, self.y, self.u] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        for v in [self.n_rows, self.n_fake] {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        Ok(EpochHeader {
            eid: r.u64()?,
            epoch_start: r.u64()?,
            duration: r.u64()?,
            x: r.u32()?,
            y: r.u32()?,
            u: r.u32()?,
            n_rows: r.u64()?,
            n_fake: r.u64()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Metadata {
    pub enc_cell_id: Vec<u8>,
    pub enc_c_tuple: Vec<u8>,
    pub tags: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpochPackage {
    pub header: EpochHeader,
    pub metadata: Metadata,
    pub rows: Vec<EncryptedRow>,
}

impl EpochPackage {
    /// Serialized bytes plus the byte offset of every record.
    pub fn to_bytes_with_offsets(&self) -> (Vec<u8>, Vec<u64>) {
        let rows_len: usize = self.rows.iter().map(EncryptedRow::encoded_len).sum();
        let m = &self.metadata;
        let mut out = Vec::with_capacity(
            6 + EpochHeader::LEN + 12 + m.enc_cell_id.len() + m.enc_c_tuple.len() + m.tags.len() + rows_len,
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_be_bytes());
        self.header.write(&mut out);
        put_bytes(&mut out, &m.enc_cell_id);
        put_bytes(&mut out, &m.enc_c_tuple);
        put_bytes(&mut out, &m.tags);
        let mut offsets = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            offsets.push(out.len() as u64);
            row.write(&mut out);
        }
        (out, offsets)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_bytes_with_offsets().0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::parse(bytes).map(|(p, _)| p)
    }

    pub fn parse(bytes: &[u8]) -> Result<(Self, Vec<u64>)> {
        let mut r = Reader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::CorruptPackage("bad magic".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::CorruptPackage(format!("unsupported version {version}")));
        }
        let header = EpochHeader::read(&mut r)?;
        let metadata = Metadata {
            enc_cell_id: r.bytes()?.to_vec(),
            enc_c_tuple: r.bytes()?.to_vec(),
            tags: r.bytes()?.to_vec(),
        };
        let n = usize::try_from(header.n_rows)
            .map_err(|_| Error::CorruptPackage("row count overflow".into()))?;
        let mut rows = Vec::with_capacity(n.min(bytes.len() / 16));
        let mut offsets = Vec::with_capacity(rows.capacity());
        for _ in 0..n {
            offsets.push(r.pos() as u64);
            rows.push(EncryptedRow::read(&mut r)?);
        }
        if !r.is_empty() {
            return Err(Error::CorruptPackage("trailing bytes".into()));
        }
        Ok((EpochPackage { header, metadata, rows }, offsets))
    }
}

pub fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_be_bytes());
    out.extend_from_slice(b);
}

pub fn put_str(out: &mut Vec<u8>, s: &str) {
    put_bytes(out, s.as_bytes());
}

pub fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_be_bytes());
}

pub fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes());
}

/// Cursor over big-endian framed data.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptPackage(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    pub fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec())
            .map_err(|_| Error::CorruptPackage("invalid utf-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> EpochPackage {
        EpochPackage {
            header: EpochHeader {
                eid: 7,
                epoch_start: 1000,
                duration: 60,
                x: 2,
                y: 2,
                u: 3,
                n_rows: 2,
                n_fake: 1,
            },
            metadata: Metadata { enc_cell_id: vec![1, 2], enc_c_tuple: vec![3], tags: vec![] },
            rows: vec![
                EncryptedRow { el: vec![1; 3], eo: vec![2; 3], er: vec![3; 5], ec: vec![4; 2] },
                EncryptedRow { el: vec![5; 3], eo: vec![6; 3], er: vec![7; 5], ec: vec![8; 2] },
            ],
        }
    }

    #[test]
    fn layout_is_bit_exact() {
        let (b, offs) = sample().to_bytes_with_offsets();
        assert_eq!(&b[..4], b"CNCL");
        assert_eq!(&b[4..6], &[0, 1]);
        assert_eq!(&b[6..14], &7u64.to_be_bytes());
        assert_eq!(&b[30..34], &2u32.to_be_bytes());
        let blobs = 6 + EpochHeader::LEN;
        assert_eq!(&b[blobs..blobs + 6], &[0, 0, 0, 2, 1, 2]);
        assert_eq!(offs[0] as usize, blobs + 6 + 5 + 4);
        assert_eq!(offs[1] - offs[0], 16 + 13);
        assert_eq!(b.len() as u64, offs[1] + 29);
    }

    #[test]
    fn rejects_corruption() {
        let b = sample().to_bytes();
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(EpochPackage::from_bytes(&bad), Err(Error::CorruptPackage(_))));
        assert!(EpochPackage::from_bytes(&b[..b.len() - 1]).is_err());
        let mut long = b.clone();
        long.push(0);
        assert!(EpochPackage::from_bytes(&long).is_err());
        let mut v = b;
        v[5] = 9;
        assert!(EpochPackage::from_bytes(&v).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(rows in prop::collection::vec((prop::collection::vec(any::<u8>(), 0..20), prop::collection::vec(any::<u8>(), 0..20)), 0..20), blob in prop::collection::vec(any::<u8>(), 0..50)) {
            let mut p = sample();
            p.rows = rows.into_iter().map(|(a, b)| EncryptedRow { el: a.clone(), eo: b.clone(), er: a, ec: b }).collect();
            p.header.n_rows = p.rows.len() as u64;
            p.metadata.tags = blob;
            let bytes = p.to_bytes();
            let back = EpochPackage::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &p);
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
