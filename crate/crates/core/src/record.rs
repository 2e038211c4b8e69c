//! Plaintext tuples and the byte layouts that get encrypted into El, Eo and Er.

use crate::crypto::{pad, unpad, SEPARATOR};
use crate::error::{Error, Result};
use crate::package::{put_str, put_u32, put_u64, Reader};

pub const DEFAULT_FIELD_WIDTH: usize = 64;
pub const DEFAULT_RECORD_WIDTH: usize = 256;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PlainTuple {
    pub location: String,
    pub time: u64,
    pub observation: String,
    pub extras: Vec<(String, String)>,
}

impl PlainTuple {
    pub fn new(location: impl Into<String>, time: u64, observation: impl Into<String>) -> Self {
        PlainTuple { location: location.into(), time, observation: observation.into(), extras: vec![] }
    }

    pub fn with_extra(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.extras.push((name.into(), value.into()));
        self
    }

    pub fn extra(&self, name: &str) -> Option<&str> {
        self.extras.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_str())
    }

    pub fn validate(&self) -> Result<()> {
        if self.location.is_empty() || self.observation.is_empty() {
            return Err(Error::Config("location and observation must be nonempty".into()));
        }
        Ok(())
    }
}

/// `value ‖ 0xFF ‖ t ‖ 0xFF ‖ k`, padded. UTF-8 never contains 0xFF, so the
/// join is unambiguous. `k` separates exact duplicates of `(value, t)`.
pub fn filter_plaintext(value: &str, t: u64, k: u32, width: usize) -> Result<Vec<u8>> {
    let mut raw = Vec::with_capacity(value.len() + 14);
    raw.extend_from_slice(value.as_bytes());
    raw.push(SEPARATOR);
    raw.extend_from_slice(&t.to_be_bytes());
    raw.push(SEPARATOR);
    raw.extend_from_slice(&k.to_be_bytes());
    pad(&raw, width)
}

/// Everything needed to rebuild a row under a fresh key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordPlain {
    pub tuple: PlainTuple,
    pub seq: u64,
    pub k_l: u32,
    pub k_o: u32,
}

impl RecordPlain {
    pub fn encode(&self, width: usize) -> Result<Vec<u8>> {
        let t = &self.tuple;
        let mut raw = Vec::new();
        put_str(&mut raw, &t.location);
        put_u64(&mut raw, t.time);
        put_str(&mut raw, &t.observation);
        put_u32(&mut raw, t.extras.len() as u32);
        for (n, v) in &t.extras {
            put_str(&mut raw, n);
            put_str(&mut raw, v);
        }
        put_u64(&mut raw, self.seq);
        put_u32(&mut raw, self.k_l);
        put_u32(&mut raw, self.k_o);
        pad(&raw, width)
    }

    pub fn decode(padded: &[u8]) -> Result<Self> {
        let raw = unpad(padded).ok_or_else(|| Error::CorruptPackage("bad record padding".into()))?;
        let mut r = Reader::new(raw);
        let location = r.string()?;
        let time = r.u64()?;
        let observation = r.string()?;
        let n = r.u32()?;
        let mut extras = Vec::with_capacity(n.min(64) as usize);
        for _ in 0..n {
            extras.push((r.string()?, r.string()?));
        }
        let seq = r.u64()?;
        let k_l = r.u32()?;
        let k_o = r.u32()?;
        Ok(RecordPlain { tuple: PlainTuple { location, time, observation, extras }, seq, k_l, k_o })
    }
}
