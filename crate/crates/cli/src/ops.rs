//! The commands behind the binary, callable from tests and the bench.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use concealer::binpack::{Certificate, Packer};
use concealer::crypto::{EpochId, MasterSecret};
use concealer::encryptor::{encrypt_epoch_detailed, EncryptOptions};
use concealer::grid::GridConfig;
use concealer::meta::FakeStrategy;
use concealer::processor::{
    Aggregate, Method, Predicate, ProcessorOptions, Query, QueryOptions, QueryResult, Session, TrustedProcessor,
    Value,
};
use concealer::record::PlainTuple;
use concealer::store::{FileStore, UntrustedStore};

use crate::datafile;
use crate::error::{CliError, Result};

pub const STATE_FILE: &str = "trusted.state";
pub const REGISTRY_FILE: &str = "registry.sealed";

pub type Processor = TrustedProcessor<FileStore>;

#[derive(Clone, Debug)]
pub struct IngestArgs {
    pub grid: (u32, u32, u32),
    /// Defaults to the earliest timestamp in the data.
    pub epoch_start: Option<u64>,
    /// Defaults to the span of the data.
    pub epoch_secs: Option<u64>,
    pub strategy: FakeStrategy,
    pub seed: u64,
    /// Defaults to one past the largest ingested id.
    pub eid: Option<EpochId>,
    pub ebpb: bool,
    pub winsec_lambda: Option<u64>,
    pub capacity: Option<u64>,
    pub packer: Packer,
}

impl Default for IngestArgs {
    fn default() -> Self {
        IngestArgs {
            grid: (10, 10, 10),
            epoch_start: None,
            epoch_secs: None,
            strategy: FakeStrategy::SimulatedBinPacking,
            seed: 0,
            eid: None,
            ebpb: false,
            winsec_lambda: None,
            capacity: None,
            packer: Packer::Ffd,
        }
    }
}

#[derive(Clone, Debug)]
pub struct IngestReport {
    pub eid: EpochId,
    pub n_real: u64,
    pub n_fake: u64,
    pub capacity: u64,
    pub bins: usize,
    pub certificate: Certificate,
    pub encrypt_ms: f64,
    pub rows_per_min: f64,
}

impl fmt::Display for IngestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.certificate;
        write!(
            f,
            "eid={} n_real={} n_fake={} capacity={} bins={} bins_bound={} fake_bound={} strict={} ms={:.3} rows_per_min={:.0}",
            self.eid,
            self.n_real,
            self.n_fake,
            self.capacity,
            self.bins,
            ok(c.bins_bound_ok),
            ok(c.fake_bound_ok),
            c.strict,
            self.encrypt_ms,
            self.rows_per_min
        )
    }
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "violated"
    }
}

pub fn ingest_rows(store: &FileStore, master: &MasterSecret, rows: &[PlainTuple], args: &IngestArgs) -> Result<IngestReport> {
    if rows.is_empty() {
        return Err(concealer::Error::EmptyEpoch.into());
    }
    let lo = rows.iter().map(|r| r.time).min().unwrap_or(0);
    let hi = rows.iter().map(|r| r.time).max().unwrap_or(0);
    let epoch_start = args.epoch_start.unwrap_or(lo);
    let epoch_duration = args.epoch_secs.unwrap_or_else(|| hi.saturating_sub(epoch_start) + 1);
    let (x, y, u) = args.grid;
    let config = GridConfig { x, y, u, epoch_start, epoch_duration, rng_seed: args.seed };
    let eid = match args.eid {
        Some(e) => e,
        None => store.catalog()?.iter().map(|c| c.eid).max().unwrap_or(0) + 1,
    };
    let opts = EncryptOptions {
        strategy: args.strategy,
        capacity: args.capacity,
        packer: args.packer,
        ebpb: args.ebpb,
        winsec_lambda: args.winsec_lambda,
        ..Default::default()
    };
    let started = Instant::now();
    let (package, summary) = encrypt_epoch_detailed(rows, &config, eid, master, &opts)?;
    let secs = started.elapsed().as_secs_f64();
    store.ingest(package)?;
    Ok(IngestReport {
        eid,
        n_real: summary.n_real,
        n_fake: summary.n_fake,
        capacity: summary.capacity,
        bins: summary.plan.bins.len(),
        certificate: summary.certificate,
        encrypt_ms: secs * 1e3,
        rows_per_min: summary.n_real as f64 * 60.0 / secs.max(1e-9),
    })
}

pub fn ingest_file(store_dir: &Path, master: &MasterSecret, data: &Path, args: &IngestArgs) -> Result<IngestReport> {
    let rows = datafile::read(data)?;
    let store = FileStore::open(store_dir)?;
    ingest_rows(&store, master, &rows, args)
}

/// A processor over `store_dir` with its sealed state and user registry.
pub fn open_processor(store_dir: &Path, master: MasterSecret, seed: Option<u64>) -> Result<Processor> {
    open_processor_with_state(store_dir, master, seed, store_dir.join(STATE_FILE))
}

pub fn open_processor_with_state(store_dir: &Path, master: MasterSecret, seed: Option<u64>, state: PathBuf) -> Result<Processor> {
    if !store_dir.is_dir() {
        return Err(CliError::Usage(format!("no store at {}", store_dir.display())));
    }
    let store = FileStore::open(store_dir)?;
    let p = TrustedProcessor::new(store, master, ProcessorOptions { state_path: Some(state), rng_seed: seed })?;
    let reg = store_dir.join(REGISTRY_FILE);
    if reg.exists() {
        p.load_registry(&fs::read(reg)?)?;
    }
    Ok(p)
}

pub fn register(store_dir: &Path, master: MasterSecret, user: &str) -> Result<String> {
    let p = open_processor(store_dir, master, None)?;
    let token = p.register_user(user)?;
    let path = store_dir.join(REGISTRY_FILE);
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, p.sealed_registry())?;
    fs::rename(&tmp, &path)?;
    Ok(hex::encode(token))
}

/// The operator session when no user is given; otherwise the user's, after
/// checking the hex token.
pub fn session(p: &Processor, user: Option<&str>, token_hex: Option<&str>) -> Result<Session> {
    match user {
        None => Ok(p.operator_session()),
        Some(u) => {
            let t = token_hex.ok_or_else(|| CliError::Usage("--user needs --token".into()))?;
            let token = hex::decode(t.trim()).map_err(|_| CliError::Usage("token must be hex".into()))?;
            Ok(p.authenticate(u, &token)?)
        }
    }
}

/// Location and time alone with `t0 == t1` is a point predicate.
pub fn predicate(location: Option<&str>, observation: Option<&str>, t0: u64, t1: u64) -> Predicate {
    let (location, observation) = (location.map(str::to_string), observation.map(str::to_string));
    match (location, observation) {
        (Some(location), Some(observation)) => Predicate::LocationObservationRange { location, observation, t0, t1 },
        (Some(location), None) if t0 == t1 => Predicate::Point { location, time: t0 },
        (Some(location), None) => Predicate::LocationRange { location, t0, t1 },
        (None, Some(observation)) => Predicate::ObservationRange { observation, t0, t1 },
        (None, None) => Predicate::TimeRange { t0, t1 },
    }
}

pub struct QueryReport {
    pub result: QueryResult,
    pub ms: f64,
}

impl fmt::Display for QueryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = &self.result;
        let verified = r.verified.map_or("off".to_string(), |v| v.to_string());
        write!(f, "{} rows_fetched={} verified={} ms={:.3}", r.value, r.rows_fetched, verified, self.ms)?;
        if let Value::Rows(rows) = &r.value {
            write!(f, "\n{}", datafile::format(rows).trim_end())?;
        }
        Ok(())
    }
}

pub fn run_query(p: &Processor, session: &Session, q: &Query, opts: &QueryOptions) -> Result<QueryReport> {
    let started = Instant::now();
    let result = p.execute(session, q, opts)?;
    Ok(QueryReport { result, ms: started.elapsed().as_secs_f64() * 1e3 })
}

#[derive(Debug, Default)]
pub struct LeakReport {
    pub lines: Vec<String>,
    pub pass: bool,
}

impl fmt::Display for LeakReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            writeln!(f, "{l}")?;
        }
        write!(f, "overall {}", if self.pass { "PASS" } else { "FAIL" })
    }
}

fn issued_set(p: &Processor, eid: EpochId) -> BTreeSet<Vec<u8>> {
    p.issued_trapdoors().into_iter().filter(|(e, _)| *e == eid).flat_map(|(_, t)| t).collect()
}

fn count_query(p: &Processor, pred: Predicate, method: Method) -> Result<QueryResult> {
    let opts = QueryOptions { method, ..Default::default() };
    Ok(p.execute(&p.operator_session(), &Query::new(Aggregate::Count, pred), &opts)?)
}

/// Checks the leakage profile of one epoch:
///
/// * every point predicate (each known location plus one absent one, at
///   both ends of every subinterval, or every second when `exhaustive`)
///   fetches the same number of rows, read back from the access log;
/// * sliding two-subinterval windows under the top-ℓ method, whose fetch
///   sets differ between overlapping windows (reported, not failed);
/// * sliding one-subinterval windows under the interval method, which must
///   fetch identical sets within each interval.
///
/// Runs against a copy of the sealed state so the store's own state is
/// untouched. The access log grows by one line per query.
pub fn leakcheck(store_dir: &Path, master: MasterSecret, eid: EpochId, exhaustive: bool) -> Result<LeakReport> {
    let scratch = tempfile::tempdir()?;
    let state = scratch.path().join(STATE_FILE);
    let live = store_dir.join(STATE_FILE);
    if live.exists() {
        fs::copy(&live, &state)?;
    }
    let p = open_processor_with_state(store_dir, master, Some(0), state)?;
    let meta = p.epoch_meta(eid)?;
    let start = meta.epoch_start;
    let cfg = GridConfig {
        x: meta.x,
        y: meta.y,
        u: meta.u,
        epoch_start: start,
        epoch_duration: meta.epoch_duration,
        rng_seed: 0,
    };
    let end = cfg.epoch_end();
    let mut report = LeakReport { pass: true, ..Default::default() };

    let times: Vec<u64> = if exhaustive {
        (start..end).collect()
    } else {
        let mut t: BTreeSet<u64> = BTreeSet::new();
        for s in 0..meta.y {
            t.insert(cfg.subinterval_start(s));
            t.insert(cfg.subinterval_start(s + 1) - 1);
        }
        t.into_iter().collect()
    };
    let mut locations = meta.locations.clone();
    locations.push("\u{1}absent".to_string());
    let log_before = p.store().access_log()?.len();
    let mut fetched = BTreeSet::new();
    let mut first_of = std::collections::BTreeMap::new();
    let mut n = 0;
    for l in &locations {
        for &t in &times {
            let r = count_query(&p, Predicate::Point { location: l.clone(), time: t }, Method::Bpb)?;
            first_of.entry(r.rows_fetched).or_insert_with(|| format!("({}, {t})", l.escape_debug()));
            fetched.insert(r.rows_fetched);
            n += 1;
        }
    }
    let logged: BTreeSet<usize> =
        p.store().access_log()?[log_before..].iter().filter(|e| e.eid == eid).map(|e| e.n_trapdoors).collect();
    let constant = fetched.len() == 1 && logged.len() == 1 && fetched.iter().next().map(|&v| v as usize) == logged.iter().next().copied();
    if constant {
        report.lines.push(format!("point-volume PASS constant={} predicates={n}", logged.iter().next().unwrap()));
    } else {
        report.pass = false;
        let examples: Vec<String> = first_of.iter().map(|(v, q)| format!("{v} at {q}")).collect();
        report.lines.push(format!(
            "point-volume FAIL fetched={fetched:?} logged={logged:?} first predicates per volume: {}",
            examples.join(", ")
        ));
    }

    let Some(loc) = meta.locations.first().cloned() else {
        return Ok(report);
    };
    let window = |s: u32, len: u32| Predicate::LocationRange {
        location: loc.clone(),
        t0: cfg.subinterval_start(s),
        t1: cfg.subinterval_start(s + len) - 1,
    };

    if meta.ebpb_pool == 0 || meta.y < 2 {
        report.lines.push("ebpb-sliding SKIP epoch has no top-l pool or a single subinterval".into());
    } else {
        let mut sets = Vec::new();
        for s in 0..meta.y - 1 {
            count_query(&p, window(s, 2), Method::Ebpb)?;
            sets.push(issued_set(&p, eid));
        }
        let pairs = sets.len().saturating_sub(1);
        let differing = sets.windows(2).filter(|w| w[0] != w[1]).count();
        if differing > 0 {
            report.lines.push(format!(
                "ebpb-sliding EXPOSED {differing}/{pairs} overlapping window pairs fetch different rows; \
                 their difference isolates the subintervals entering and leaving the window (expected)"
            ));
        } else {
            report.lines.push(format!("ebpb-sliding no differing pairs among {pairs}"));
        }
    }

    if meta.winsec_lambda == 0 {
        report.lines.push("winsec-sliding SKIP epoch has no interval bins".into());
    } else {
        let lambda = meta.winsec_lambda as u32;
        let mut bad = Vec::new();
        let mut reference: Option<(u32, BTreeSet<Vec<u8>>)> = None;
        for s in 0..meta.y {
            count_query(&p, window(s, 1), Method::Winsec)?;
            let set = issued_set(&p, eid);
            match &reference {
                Some((i, r)) if *i == s / lambda => {
                    if *r != set {
                        bad.push(format!("[{}, {}]", cfg.subinterval_start(s), cfg.subinterval_start(s + 1) - 1));
                    }
                }
                _ => reference = Some((s / lambda, set)),
            }
        }
        if bad.is_empty() {
            report.lines.push(format!("winsec-sliding PASS windows={} lambda={lambda}", meta.y));
        } else {
            report.pass = false;
            report.lines.push(format!("winsec-sliding FAIL window fetch sets move within an interval at {}", bad.join(", ")));
        }
    }
    Ok(report)
}
