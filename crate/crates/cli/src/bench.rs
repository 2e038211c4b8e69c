//! Desk-scale benchmark suites. Each suite builds its own throwaway store
//! from a seeded workload and returns a table with a fixed header.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use concealer::crypto::MasterSecret;
use concealer::processor::{Aggregate, Method, Predicate, Query, QueryOptions};
use concealer::record::PlainTuple;
use concealer::store::FileStore;

use crate::error::{CliError, Result};
use crate::ops::{self, IngestArgs, IngestReport, Processor};
use crate::workload::{location_name, QueryMix, WorkloadSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Point,
    Range,
    Insert,
    Binsize,
    Cells,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Point, Suite::Range, Suite::Insert, Suite::Binsize, Suite::Cells];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Point => "point",
            Suite::Range => "range",
            Suite::Insert => "insert",
            Suite::Binsize => "binsize",
            Suite::Cells => "cells",
        }
    }

    pub fn headers(self) -> &'static [&'static str] {
        match self {
            Suite::Point => &["method", "oblivious", "queries", "rows_fetched_mean", "ms_mean"],
            Suite::Range => &["method", "range_secs", "queries", "rows_fetched_mean", "ms_mean"],
            Suite::Insert => &["rows", "fakes", "bins", "capacity", "ms", "rows_per_min"],
            Suite::Binsize => &["capacity", "bins", "fakes", "queries", "rows_fetched_mean", "ms_mean"],
            Suite::Cells => &["u", "bins", "capacity", "queries", "rows_fetched_mean", "ms_mean"],
        }
    }
}

impl FromStr for Suite {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| CliError::Usage(format!("unknown suite {s:?}")))
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub rows: u64,
    pub locations: u32,
    pub grid: (u32, u32, u32),
    pub epoch_secs: u64,
    pub queries: usize,
    pub zipf_s: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { rows: 20_000, locations: 100, grid: (10, 10, 10), epoch_secs: 3600, queries: 30, zipf_s: 1.0, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub headers: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(suite: Suite) -> Self {
        Table { headers: suite.headers().to_vec(), rows: vec![] }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.headers.iter().position(|h| *h == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut width: Vec<usize> = self.headers.iter().map(|h| h.len()).collect();
        for r in &self.rows {
            for (w, c) in width.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: Vec<&str>| {
            cells.iter().zip(&width).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ")
        };
        writeln!(f, "{}", line(self.headers.clone()))?;
        writeln!(f, "{}", width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "))?;
        for r in &self.rows {
            writeln!(f, "{}", line(r.iter().map(String::as_str).collect()))?;
        }
        Ok(())
    }
}

struct Bed {
    _dir: tempfile::TempDir,
    p: Processor,
    report: IngestReport,
}

fn workload(cfg: &BenchConfig) -> WorkloadSpec {
    WorkloadSpec {
        n_rows: cfg.rows,
        n_locations: cfg.locations,
        n_observations: (cfg.locations * 5).max(1),
        epochs: 1,
        zipf_s: cfg.zipf_s,
        epoch_start: 0,
        epoch_secs: cfg.epoch_secs,
        mix: QueryMix { point: 1.0, range: 0.0, aggregate: 0.0 },
        seed: cfg.seed,
    }
}

fn master(cfg: &BenchConfig) -> MasterSecret {
    MasterSecret::generate(&mut ChaCha20Rng::seed_from_u64(cfg.seed ^ 0x6b65_79))
}

fn bed(cfg: &BenchConfig, rows: &[PlainTuple], args: IngestArgs) -> Result<Bed> {
    let dir = tempfile::tempdir()?;
    let store = FileStore::open(dir.path())?;
    let args = IngestArgs { epoch_start: Some(0), epoch_secs: Some(cfg.epoch_secs), seed: cfg.seed, ..args };
    let report = ops::ingest_rows(&store, &master(cfg), rows, &args)?;
    drop(store);
    let p = ops::open_processor(dir.path(), master(cfg), Some(cfg.seed))?;
    Ok(Bed { _dir: dir, p, report })
}

fn point_queries(cfg: &BenchConfig, rows: &[PlainTuple], rng: &mut ChaCha20Rng) -> Vec<Query> {
    (0..cfg.queries)
        .map(|_| {
            let pred = match rows.choose(rng) {
                Some(r) if rng.gen_bool(0.5) => Predicate::Point { location: r.location.clone(), time: r.time },
                _ => Predicate::Point {
                    location: location_name(rng.gen_range(0..cfg.locations)),
                    time: rng.gen_range(0..cfg.epoch_secs),
                },
            };
            Query::new(Aggregate::Count, pred)
        })
        .collect()
}

/// Mean rows fetched and mean milliseconds.
fn measure(p: &Processor, queries: &[Query], opts: &QueryOptions) -> Result<(f64, f64)> {
    let s = p.operator_session();
    let (mut rows, mut ms) = (0u64, 0f64);
    for q in queries {
        let r = ops::run_query(p, &s, q, opts)?;
        rows += r.result.rows_fetched;
        ms += r.ms;
    }
    let n = queries.len().max(1) as f64;
    Ok((rows as f64 / n, ms / n))
}

fn fmt_f(v: f64) -> String {
    format!("{v:.3}")
}

pub fn run(suite: Suite, cfg: &BenchConfig) -> Result<Table> {
    let rows = workload(cfg).generate()?.remove(0);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut t = Table::new(suite);
    let n = cfg.queries.to_string();
    let grid = cfg.grid;
    match suite {
        Suite::Point => {
            let b = bed(cfg, &rows, IngestArgs { grid, ..Default::default() })?;
            let qs = point_queries(cfg, &rows, &mut rng);
            for (method, name, oblivious) in
                [(Method::Bpb, "bpb", false), (Method::Bpb, "bpb", true), (Method::FullScan, "scan", false)]
            {
                let (f, ms) = measure(&b.p, &qs, &QueryOptions { method, oblivious, ..Default::default() })?;
                t.rows.push(vec![name.into(), oblivious.to_string(), n.clone(), fmt_f(f), fmt_f(ms)]);
            }
        }
        Suite::Range => {
            let lambda = (grid.1 as u64 / 10).max(1);
            let args = IngestArgs { grid, ebpb: true, winsec_lambda: Some(lambda), ..Default::default() };
            let b = bed(cfg, &rows, args)?;
            let sub = (cfg.epoch_secs / grid.1 as u64).max(1);
            for span in [sub, 3 * sub] {
                let span = span.min(cfg.epoch_secs);
                let qs: Vec<Query> = (0..cfg.queries)
                    .map(|_| {
                        let t0 = rng.gen_range(0..=cfg.epoch_secs - span);
                        let location = rows.choose(&mut rng).map_or_else(|| location_name(0), |r| r.location.clone());
                        Query::new(Aggregate::Count, Predicate::LocationRange { location, t0, t1: t0 + span - 1 })
                    })
                    .collect();
                for (method, name) in
                    [(Method::Bpb, "bpb"), (Method::Ebpb, "ebpb"), (Method::Winsec, "winsec"), (Method::FullScan, "scan")]
                {
                    let (f, ms) = measure(&b.p, &qs, &QueryOptions { method, ..Default::default() })?;
                    t.rows.push(vec![name.into(), span.to_string(), n.clone(), fmt_f(f), fmt_f(ms)]);
                }
            }
        }
        Suite::Insert => {
            let r = bed(cfg, &rows, IngestArgs { grid, ..Default::default() })?.report;
            t.rows.push(vec![
                r.n_real.to_string(),
                r.n_fake.to_string(),
                r.bins.to_string(),
                r.capacity.to_string(),
                fmt_f(r.encrypt_ms),
                format!("{:.0}", r.rows_per_min),
            ]);
        }
        Suite::Binsize => {
            let qs = point_queries(cfg, &rows, &mut rng);
            let base = bed(cfg, &rows, IngestArgs { grid, ..Default::default() })?.report.capacity;
            for factor in [1, 2, 4] {
                let b = bed(cfg, &rows, IngestArgs { grid, capacity: Some(base * factor), ..Default::default() })?;
                let (f, ms) = measure(&b.p, &qs, &QueryOptions::default())?;
                let r = &b.report;
                t.rows.push(vec![
                    r.capacity.to_string(),
                    r.bins.to_string(),
                    r.n_fake.to_string(),
                    n.clone(),
                    fmt_f(f),
                    fmt_f(ms),
                ]);
            }
        }
        Suite::Cells => {
            let qs = point_queries(cfg, &rows, &mut rng);
            let cells = grid.0 * grid.1;
            for u in [1, 2, 5, 10, 20, 50, 100].into_iter().filter(|&u| u <= cells) {
                let b = bed(cfg, &rows, IngestArgs { grid: (grid.0, grid.1, u), ..Default::default() })?;
                let (f, ms) = measure(&b.p, &qs, &QueryOptions::default())?;
                let r = &b.report;
                t.rows.push(vec![u.to_string(), r.bins.to_string(), r.capacity.to_string(), n.clone(), fmt_f(f), fmt_f(ms)]);
            }
        }
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchConfig {
        BenchConfig { rows: 2_000, locations: 20, grid: (5, 5, 5), epoch_secs: 600, queries: 5, ..Default::default() }
    }

    #[test]
    fn suite_names_roundtrip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn table_rendering() {
        let t = Table { headers: vec!["a", "bb"], rows: vec![vec!["1".into(), "22".into()]] };
        assert_eq!(t.to_csv().unwrap(), "a,bb\n1,22\n");
        assert_eq!(t.to_string(), "a  bb\n-  --\n1  22\n");
        assert_eq!(t.column("bb"), Some(vec!["22"]));
    }

    #[test]
    fn point_suite_scan_dominates() {
        let t = run(Suite::Point, &small()).unwrap();
        let f: Vec<f64> = t.column("rows_fetched_mean").unwrap().iter().map(|v| v.parse().unwrap()).collect();
        assert_eq!(f[0], f[1]);
        assert!(f[2] > 2.0 * f[0], "{f:?}");
    }
}
