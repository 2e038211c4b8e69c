//! Shared fixtures and a brute-force plaintext evaluator.
#![allow(dead_code)]

use std::collections::BTreeMap;

use concealer::crypto::{decode_u64s, derive_epoch_key, det_decrypt, MasterSecret, FAKE_MARKER};
use concealer::encryptor::{encrypt_epoch, EncryptOptions};
use concealer::grid::GridConfig;
use concealer::package::EncryptedRow;
use concealer::processor::{Aggregate, Column, Predicate, ProcessorOptions, Query, TrustedProcessor, Value};
use concealer::record::{PlainTuple, RecordPlain};
use concealer::store::FileStore;
use rand::Rng;

pub fn master() -> MasterSecret {
    MasterSecret::from_bytes([0x5a; 32])
}

pub fn table_one() -> Vec<PlainTuple> {
    vec![
        PlainTuple::new("l1", 1005, "o1").with_extra("v", "3"),
        PlainTuple::new("l1", 1010, "o2").with_extra("v", "5"),
        PlainTuple::new("l2", 1020, "o2").with_extra("v", "7"),
        PlainTuple::new("l1", 1025, "o1").with_extra("v", "-1"),
        PlainTuple::new("l2", 1040, "o3").with_extra("v", "2"),
        PlainTuple::new("l3", 1050, "o2").with_extra("v", "4"),
    ]
}

pub fn table_one_grid(start: u64) -> GridConfig {
    GridConfig { x: 2, y: 2, u: 3, epoch_start: start, epoch_duration: 60, rng_seed: 6 }
}

/// One epoch per entry of `epochs`, ingested under ids 1, 2, ...
pub struct Bed {
    pub dir: tempfile::TempDir,
    pub p: TrustedProcessor<FileStore>,
    pub rows: Vec<PlainTuple>,
}

pub fn bed(epochs: &[(Vec<PlainTuple>, GridConfig)], opts: &EncryptOptions, seed: u64) -> Bed {
    let dir = tempfile::tempdir().unwrap();
    let store = FileStore::open(dir.path().join("store")).unwrap();
    let mut rows = Vec::new();
    for (i, (r, cfg)) in epochs.iter().enumerate() {
        store.ingest(encrypt_epoch(r, cfg, i as u64 + 1, &master(), opts).unwrap()).unwrap();
        rows.extend(r.iter().cloned());
    }
    let popts = ProcessorOptions { state_path: Some(dir.path().join("trusted.state")), rng_seed: Some(seed) };
    let p = TrustedProcessor::new(store, master(), popts).unwrap();
    Bed { dir, p, rows }
}

/// Random rows over `n_loc` locations and `n_obs` observations inside
/// `[start, start + secs)`, with an integer extra column `v`.
pub fn random_rows(rng: &mut impl Rng, n: usize, n_loc: u32, n_obs: u32, start: u64, secs: u64) -> Vec<PlainTuple> {
    (0..n)
        .map(|_| {
            // Squaring skews the location distribution towards l0.
            let l = (rng.gen::<f64>().powi(2) * n_loc as f64) as u32;
            PlainTuple::new(format!("l{l}"), start + rng.gen_range(0..secs), format!("o{}", rng.gen_range(0..n_obs)))
                .with_extra("v", rng.gen_range(-500i64..500).to_string())
        })
        .collect()
}

fn column(c: &Column, t: &PlainTuple) -> i64 {
    match c {
        Column::Time => t.time as i64,
        Column::Extra(n) => t.extras.iter().find(|(k, _)| k == n).unwrap().1.parse().unwrap(),
    }
}

fn matches(p: &Predicate, t: &PlainTuple) -> bool {
    let in_time = |a: u64, b: u64| a <= t.time && t.time <= b;
    match p {
        Predicate::Point { location, time } => t.location == *location && t.time == *time,
        Predicate::LocationRange { location, t0, t1 } => t.location == *location && in_time(*t0, *t1),
        Predicate::TimeRange { t0, t1 } => in_time(*t0, *t1),
        Predicate::ObservationRange { observation, t0, t1 } => t.observation == *observation && in_time(*t0, *t1),
        Predicate::LocationObservationRange { location, observation, t0, t1 } => {
            t.location == *location && t.observation == *observation && in_time(*t0, *t1)
        }
    }
}

/// Evaluates `q` over plaintext rows by scanning all of them.
pub fn oracle(rows: &[PlainTuple], q: &Query) -> Value {
    let hits: Vec<&PlainTuple> = rows.iter().filter(|t| matches(&q.predicate, t)).collect();
    match &q.aggregate {
        Aggregate::Count => Value::Count(hits.len() as u64),
        Aggregate::Sum(c) => Value::Sum(hits.iter().map(|t| column(c, t) as i128).sum()),
        Aggregate::Min(c) => Value::Min(hits.iter().map(|t| column(c, t)).min()),
        Aggregate::Max(c) => Value::Max(hits.iter().map(|t| column(c, t)).max()),
        Aggregate::Avg(c) => {
            Value::Avg { sum: hits.iter().map(|t| column(c, t) as i128).sum(), count: hits.len() as u64 }
        }
        Aggregate::TopK(k) => {
            let mut by: BTreeMap<&str, u64> = BTreeMap::new();
            for t in &hits {
                *by.entry(&t.location).or_default() += 1;
            }
            let mut v: Vec<(String, u64)> = by.into_iter().map(|(l, c)| (l.to_string(), c)).collect();
            v.sort_by_key(|(l, c)| (std::cmp::Reverse(*c), l.clone()));
            v.truncate(*k);
            Value::TopK(v)
        }
        Aggregate::Select => {
            let mut v: Vec<PlainTuple> = hits.into_iter().cloned().collect();
            v.sort_by_key(|t| (t.time, t.location.clone(), t.observation.clone(), t.extras.clone()));
            Value::Rows(v)
        }
    }
}

/// What a stored row is, as the key holder sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowId {
    Real { cid: u64, counter: u64, tuple: PlainTuple },
    Fake(u64),
}

pub fn identify(eid: u64, version: u64, row: &EncryptedRow) -> RowId {
    let key = derive_epoch_key(&master(), eid, version);
    let idx = decode_u64s(&det_decrypt(&key, &row.ec).unwrap()).unwrap();
    if idx[0] == FAKE_MARKER {
        RowId::Fake(idx[1])
    } else {
        let rec = RecordPlain::decode(&det_decrypt(&key, &row.er).unwrap()).unwrap();
        RowId::Real { cid: idx[0], counter: idx[1], tuple: rec.tuple }
    }
}
