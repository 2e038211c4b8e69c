//! Enclave-only epoch metadata: the contents of the encrypted grid blobs and
//! the chain tags.

use std::ops::Range;

use crate::binpack::Packer;
use crate::crypto::{rnd_decrypt, rnd_encrypt, ChainDigest, CipherKey, DIGEST_LEN};
use crate::error::{Error, Result};
use crate::package::{put_bytes, put_str, put_u32, put_u64, Reader};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FakeStrategy {
    /// As many fakes as real rows.
    EqualCount,
    /// Exactly the fakes the bin plan needs.
    #[default]
    SimulatedBinPacking,
}

/// Decrypted contents of the `enc_c_tuple` blob.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EpochMeta {
    /// Grid geometry, repeated here so the plaintext header can be checked.
    pub x: u32,
    pub y: u32,
    pub u: u32,
    pub epoch_start: u64,
    pub epoch_duration: u64,
    pub c_tuple: Vec<u64>,
    pub cell_counts: Vec<u64>,
    pub capacity: u64,
    pub packer: Packer,
    pub strategy: FakeStrategy,
    /// Fake ids `1..=point_pool` pad point-query bins.
    pub point_pool: u64,
    /// Then `ebpb_pool` ids for range bins sized by the top-ℓ rule.
    pub ebpb_pool: u64,
    /// Interval length for fixed-window ranges; 0 when disabled.
    pub winsec_lambda: u64,
    pub winsec_pool: u64,
    /// Largest number of rows sharing one `(location, time)`.
    pub max_dup_l: u32,
    /// Largest number of rows sharing one `(observation, time)`.
    pub max_dup_o: u32,
    pub field_width: u32,
    pub record_width: u32,
    /// Sorted distinct locations of the epoch.
    pub locations: Vec<String>,
}

impl EpochMeta {
    pub fn ebpb_range(&self) -> Range<u64> {
        let s = self.point_pool + 1;
        s..s + self.ebpb_pool
    }

    pub fn winsec_range(&self) -> Range<u64> {
        let s = self.ebpb_range().end;
        s..s + self.winsec_pool
    }

    pub fn n_fake(&self) -> u64 {
        self.point_pool + self.ebpb_pool + self.winsec_pool
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [self.x, self.y, self.u] {
            put_u32(&mut out, v);
        }
        put_u64(&mut out, self.epoch_start);
        put_u64(&mut out, self.epoch_duration);
        put_u32(&mut out, self.c_tuple.len() as u32);
        self.c_tuple.iter().for_each(|&c| put_u64(&mut out, c));
        put_u32(&mut out, self.cell_counts.len() as u32);
        self.cell_counts.iter().for_each(|&c| put_u64(&mut out, c));
        put_u64(&mut out, self.capacity);
        out.push(match self.packer {
            Packer::Ffd => 0,
            Packer::Bfd => 1,
        });
        out.push(match self.strategy {
            FakeStrategy::EqualCount => 0,
            FakeStrategy::SimulatedBinPacking => 1,
        });
        for v in [self.point_pool, self.ebpb_pool, self.winsec_lambda, self.winsec_pool] {
            put_u64(&mut out, v);
        }
        for v in [self.max_dup_l, self.max_dup_o, self.field_width, self.record_width] {
            put_u32(&mut out, v);
        }
        put_u32(&mut out, self.locations.len() as u32);
        self.locations.iter().for_each(|l| put_str(&mut out, l));
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let (x, y, u) = (r.u32()?, r.u32()?, r.u32()?);
        let (epoch_start, epoch_duration) = (r.u64()?, r.u64()?);
        let n = r.u32()? as usize;
        let c_tuple = (0..n).map(|_| r.u64()).collect::<Result<_>>()?;
        let n = r.u32()? as usize;
        let cell_counts = (0..n).map(|_| r.u64()).collect::<Result<_>>()?;
        let capacity = r.u64()?;
        let packer = match r.take(1)?[0] {
            0 => Packer::Ffd,
            1 => Packer::Bfd,
            p => return Err(Error::CorruptPackage(format!("unknown packer {p}"))),
        };
        let strategy = match r.take(1)?[0] {
            0 => FakeStrategy::EqualCount,
            1 => FakeStrategy::SimulatedBinPacking,
            s => return Err(Error::CorruptPackage(format!("unknown fake strategy {s}"))),
        };
        let (point_pool, ebpb_pool, winsec_lambda, winsec_pool) = (r.u64()?, r.u64()?, r.u64()?, r.u64()?);
        let (max_dup_l, max_dup_o, field_width, record_width) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
        let n = r.u32()? as usize;
        let locations = (0..n).map(|_| r.string()).collect::<Result<_>>()?;
        if !r.is_empty() {
            return Err(Error::CorruptPackage("trailing metadata bytes".into()));
        }
        Ok(EpochMeta {
            x,
            y,
            u,
            epoch_start,
            epoch_duration,
            c_tuple,
            cell_counts,
            capacity,
            packer,
            strategy,
            point_pool,
            ebpb_pool,
            winsec_lambda,
            winsec_pool,
            max_dup_l,
            max_dup_o,
            field_width,
            record_width,
            locations,
        })
    }
}

pub fn encode_layout(cell_id: &[u32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * cell_id.len());
    put_u32(&mut out, cell_id.len() as u32);
    cell_id.iter().for_each(|&c| put_u32(&mut out, c));
    out
}

pub fn decode_layout(bytes: &[u8]) -> Result<Vec<u32>> {
    let mut r = Reader::new(bytes);
    let n = r.u32()? as usize;
    let v = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    if !r.is_empty() {
        return Err(Error::CorruptPackage("trailing layout bytes".into()));
    }
    Ok(v)
}

/// Final chain digests over the El, Eo and Er columns of one group of rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TagTriple {
    pub hl: ChainDigest,
    pub ho: ChainDigest,
    pub hr: ChainDigest,
}

impl TagTriple {
    pub const LEN: usize = 3 * DIGEST_LEN;

    pub fn to_bytes(self) -> [u8; 3 * DIGEST_LEN] {
        let mut b = [0u8; 3 * DIGEST_LEN];
        b[..DIGEST_LEN].copy_from_slice(&self.hl.0);
        b[DIGEST_LEN..2 * DIGEST_LEN].copy_from_slice(&self.ho.0);
        b[2 * DIGEST_LEN..].copy_from_slice(&self.hr.0);
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() != 3 * DIGEST_LEN {
            return Err(Error::CorruptPackage("bad tag length".into()));
        }
        let d = |i: usize| ChainDigest(b[i * DIGEST_LEN..(i + 1) * DIGEST_LEN].try_into().unwrap());
        Ok(TagTriple { hl: d(0), ho: d(1), hr: d(2) })
    }
}

/// One tag triple per cid, then one per grid cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tags {
    pub cid: Vec<TagTriple>,
    pub cell: Vec<TagTriple>,
}

impl Tags {
    /// Each triple is encrypted on its own, so the blob is a framed list of
    /// randomized ciphertexts.
    pub fn seal(&self, key: &CipherKey) -> Vec<u8> {
        let mut out = Vec::new();
        put_u32(&mut out, self.cid.len() as u32);
        put_u32(&mut out, self.cell.len() as u32);
        for t in self.cid.iter().chain(&self.cell) {
            put_bytes(&mut out, &rnd_encrypt(key, &t.to_bytes()).bytes);
        }
        out
    }

    pub fn open(blob: &[u8], key: &CipherKey) -> Result<Self> {
        let mut r = Reader::new(blob);
        let (nc, ncell) = (r.u32()? as usize, r.u32()? as usize);
        let mut all = Vec::with_capacity(nc + ncell);
        for _ in 0..nc + ncell {
            all.push(TagTriple::from_bytes(&rnd_decrypt(key, r.bytes()?)?)?);
        }
        if !r.is_empty() {
            return Err(Error::CorruptPackage("trailing tag bytes".into()));
        }
        let cell = all.split_off(nc);
        Ok(Tags { cid: all, cell })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{chain_over, derive_epoch_key, MasterSecret};

    fn meta() -> EpochMeta {
        EpochMeta {
            x: 2,
            y: 2,
            u: 3,
            epoch_start: 1000,
            epoch_duration: 60,
            c_tuple: vec![4, 1, 1],
            cell_counts: vec![1, 1, 3, 1],
            capacity: 4,
            packer: Packer::Bfd,
            strategy: FakeStrategy::EqualCount,
            point_pool: 6,
            ebpb_pool: 3,
            winsec_lambda: 1,
            winsec_pool: 2,
            max_dup_l: 1,
            max_dup_o: 2,
            field_width: 64,
            record_width: 256,
            locations: vec!["l1".into(), "l2".into()],
        }
    }

    #[test]
    fn meta_roundtrip_and_pools() {
        let m = meta();
        assert_eq!(EpochMeta::decode(&m.encode()).unwrap(), m);
        assert_eq!(m.ebpb_range(), 7..10);
        assert_eq!(m.winsec_range(), 10..12);
        assert_eq!(m.n_fake(), 11);
        let mut b = m.encode();
        b.push(0);
        assert!(EpochMeta::decode(&b).is_err());
    }

    #[test]
    fn layout_roundtrip() {
        assert_eq!(decode_layout(&encode_layout(&[1, 2, 1, 3])).unwrap(), vec![1, 2, 1, 3]);
    }

    #[test]
    fn tags_seal_open_and_tamper() {
        let k = derive_epoch_key(&MasterSecret::from_bytes([1; 32]), 1, 0);
        let t = TagTriple { hl: chain_over([&b"a"[..]]), ho: chain_over([&b"b"[..]]), hr: ChainDigest::empty() };
        let tags = Tags { cid: vec![t, t], cell: vec![t] };
        let blob = tags.seal(&k);
        assert_eq!(Tags::open(&blob, &k).unwrap(), tags);
        let mut bad = blob.clone();
        let last = bad.len() - 1;
        bad[last] ^= 1;
        assert!(matches!(Tags::open(&bad, &k), Err(Error::AuthenticationFailure)));
    }
}
