//! The trusted side. Holds the master secret, authenticates users and runs
//! the query protocols against an [`UntrustedStore`]; the store only sees
//! trapdoor lists and rewritten rows.

mod auth;
mod query;
mod select;
mod state;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub use auth::{Registry, Session, TOKEN_LEN};
pub use query::{Aggregate, Column, Method, Predicate, Query, QueryOptions, QueryResult, Value};
pub use select::{
    oblivious_candidate_count, oblivious_filter, oblivious_trapdoor_slots, plain_filter, verify_bins, FilterCheck,
};
pub use state::{Slot, Unit};

use query::Accumulator;
use state::{Dynamic, EpochState, FetchPlan, GroupTag};

use crate::binpack::{ebpb_bin_size, BinPlan};
use crate::crypto::{derive_labeled_key, det_decrypt, det_encrypt, rnd_decrypt, rnd_encrypt, CipherKey, EpochId, MasterSecret};
use crate::encryptor::{encrypt_real_row, generate_fake_rows, tag_of};
use crate::error::{Error, Result};
use crate::meta::EpochMeta;
use crate::package::{put_u32, put_u64, EncryptedRow, Reader};
use crate::record::{filter_plaintext, RecordPlain};
use crate::store::UntrustedStore;

pub const REGISTRY_LABEL: &str = "registry";
pub const SEALING_LABEL: &str = "sealed-state";

/// Filters are only worth generating while there are not many more of them
/// than fetched rows; past that, fetched rows are opened and tested instead.
const FILTERS_PER_ROW: u64 = 8;

#[derive(Clone, Debug, Default)]
pub struct ProcessorOptions {
    /// Where rewrite state is sealed between runs.
    pub state_path: Option<PathBuf>,
    /// Seeds the shuffle and decoy generator; fresh entropy otherwise.
    pub rng_seed: Option<u64>,
}

pub struct TrustedProcessor<S> {
    store: S,
    master: MasterSecret,
    registry: RwLock<Registry>,
    epochs: Mutex<HashMap<EpochId, Arc<Mutex<EpochState>>>>,
    sealed: Mutex<BTreeMap<EpochId, Dynamic>>,
    state_path: Option<PathBuf>,
    rng: Mutex<ChaCha20Rng>,
    issued: Mutex<Vec<(EpochId, Vec<Vec<u8>>)>>,
}

fn ceil_log2(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

/// DET filters for `value` at every time in `[lo, hi]` and every duplicate
/// index. Values too long for the column cannot occur in it.
fn filters_for(key: &CipherKey, value: &str, lo: u64, hi: u64, dups: u32, width: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    for t in lo..=hi {
        for k in 0..dups {
            match filter_plaintext(value, t, k, width) {
                Ok(p) => out.push(det_encrypt(key, &p).bytes),
                Err(_) => return vec![],
            }
        }
    }
    out
}

impl<S: UntrustedStore> TrustedProcessor<S> {
    pub fn new(store: S, master: MasterSecret, opts: ProcessorOptions) -> Result<Self> {
        let sealed = match &opts.state_path {
            Some(p) if p.exists() => open_sealed(&fs::read(p)?, &derive_labeled_key(&master, SEALING_LABEL))?,
            _ => BTreeMap::new(),
        };
        let rng = match opts.rng_seed {
            Some(s) => ChaCha20Rng::seed_from_u64(s),
            None => ChaCha20Rng::from_entropy(),
        };
        Ok(TrustedProcessor {
            store,
            master,
            registry: RwLock::new(Registry::new()),
            epochs: Mutex::new(HashMap::new()),
            sealed: Mutex::new(sealed),
            state_path: opts.state_path,
            rng: Mutex::new(rng),
            issued: Mutex::new(Vec::new()),
        })
    }

    pub fn store(&self) -> &S {
        &self.store
    }

    pub fn load_registry(&self, blob: &[u8]) -> Result<()> {
        let reg = Registry::open(blob, &derive_labeled_key(&self.master, REGISTRY_LABEL))?;
        *self.registry.write().unwrap() = reg;
        Ok(())
    }

    pub fn sealed_registry(&self) -> Vec<u8> {
        self.registry.read().unwrap().seal(&derive_labeled_key(&self.master, REGISTRY_LABEL))
    }

    pub fn register_user(&self, user: &str) -> Result<Vec<u8>> {
        self.registry.write().unwrap().register(user)
    }

    pub fn authenticate(&self, user: &str, token: &[u8]) -> Result<Session> {
        self.registry.read().unwrap().authenticate(user, token)
    }

    /// Unrestricted session for whoever runs the processor with the master
    /// secret.
    pub fn operator_session(&self) -> Session {
        Session::operator()
    }

    /// Trapdoor lists sent to the store by the most recent query.
    pub fn issued_trapdoors(&self) -> Vec<(EpochId, Vec<Vec<u8>>)> {
        self.issued.lock().unwrap().clone()
    }

    pub fn bin_plan(&self, eid: EpochId) -> Result<BinPlan> {
        Ok(self.epoch(eid)?.lock().unwrap().plan.clone())
    }

    pub fn epoch_meta(&self, eid: EpochId) -> Result<EpochMeta> {
        Ok(self.epoch(eid)?.lock().unwrap().meta.clone())
    }

    /// Current key version counter of an epoch (0 until the first rewrite).
    pub fn rewrite_round(&self, eid: EpochId) -> Result<u64> {
        Ok(self.epoch(eid)?.lock().unwrap().dynamic.round)
    }

    fn epoch(&self, eid: EpochId) -> Result<Arc<Mutex<EpochState>>> {
        let mut map = self.epochs.lock().unwrap();
        if let Some(e) = map.get(&eid) {
            return Ok(e.clone());
        }
        let dynamic = self.sealed.lock().unwrap().get(&eid).cloned().unwrap_or_default();
        let st = Arc::new(Mutex::new(EpochState::load(&self.store, &self.master, eid, dynamic)?));
        map.insert(eid, st.clone());
        Ok(st)
    }

    fn persist(&self, st: &EpochState) -> Result<()> {
        let mut sealed = self.sealed.lock().unwrap();
        sealed.insert(st.eid, st.dynamic.clone());
        if let Some(path) = &self.state_path {
            let blob = seal_state(&sealed, &derive_labeled_key(&self.master, SEALING_LABEL));
            let tmp = path.with_extension("tmp");
            fs::write(&tmp, blob)?;
            fs::rename(&tmp, path)?;
        }
        Ok(())
    }

    pub fn execute(&self, session: &Session, q: &Query, opts: &QueryOptions) -> Result<QueryResult> {
        q.predicate.validate()?;
        if let Some(o) = q.predicate.observation() {
            session.may_read(o)?;
        }
        if opts.super_bins.is_some() && opts.method != Method::Bpb {
            return Err(Error::InvalidQuery("super-bins apply to the bpb method only".into()));
        }
        if opts.method == Method::Ebpb && q.predicate.location().is_none() {
            return Err(Error::InvalidQuery("the ebpb method needs a location".into()));
        }
        let (t0, t1) = q.predicate.time_range();
        let mut eids = Vec::new();
        for c in self.store.catalog()? {
            if self.store.header(c.eid)?.overlaps(t0, t1) {
                eids.push(c.eid);
            }
        }
        eids.sort_unstable();
        self.issued.lock().unwrap().clear();

        let mut acc = Accumulator::default();
        let mut fetched = 0;
        for eid in eids {
            let e = self.epoch(eid)?;
            let mut st = e.lock().unwrap();
            fetched += self.run_epoch(&mut st, q, opts, &mut acc)?;
        }
        Ok(QueryResult { value: acc.finish(&q.aggregate)?, rows_fetched: fetched, verified: opts.verify.then_some(true) })
    }

    fn run_epoch(&self, st: &mut EpochState, q: &Query, opts: &QueryOptions, acc: &mut Accumulator) -> Result<u64> {
        let (t0, t1) = q.predicate.time_range();
        let start = st.meta.epoch_start;
        let end = start + st.meta.epoch_duration;
        if t1 < start || t0 >= end {
            return Ok(0);
        }
        let (lo, hi) = (t0.max(start), t1.min(end - 1));
        let (s0, s1) = (st.grid.subinterval(lo)?, st.grid.subinterval(hi)?);
        let column = q.predicate.location().map(|l| st.grid.column(l));
        let cells = st.covered_cells(column, s0, s1);

        let fp = match opts.method {
            Method::Bpb => plan_bpb(st, &cells, opts)?,
            Method::Ebpb => self.plan_ebpb(st, &cells, s1 - s0 + 1)?,
            Method::Winsec => plan_winsec(st, s0, s1)?,
            Method::MultiEpoch => self.plan_multi(st, &cells),
            Method::FullScan => {
                let units: Vec<Unit> = (1..=st.grid.u()).map(|cid| Unit { cids: vec![cid], fakes: vec![] }).collect();
                let mut fp = st.plan_units(&units);
                fp.push_fakes(1..st.meta.n_fake() + 1);
                fp
            }
        };
        let (trapdoors, rows) = self.fetch(st, &fp)?;
        if opts.verify {
            let complete = rows.iter().all(Option::is_some);
            let groups = fp.groups.iter().map(|g| (st.expected_tag(g.tag), &rows[g.slots.clone()]));
            if !(verify_bins(groups) && complete) {
                return Err(Error::IntegrityFailure(st.eid));
            }
        }
        self.filter(st, q, opts.oblivious, (lo, hi), &fp, &rows, acc)?;
        if opts.method == Method::MultiEpoch {
            self.rewrite(st, &fp, trapdoors, rows)?;
        }
        Ok(fp.slots.len() as u64)
    }

    /// Top-ℓ range bin. Its size follows the largest ℓ queried so far.
    fn plan_ebpb(&self, st: &mut EpochState, cells: &[usize], l: u32) -> Result<FetchPlan> {
        if st.meta.ebpb_pool == 0 {
            return Err(Error::InsufficientPadding { eid: st.eid, what: "top-ℓ range" });
        }
        if l as u64 > st.dynamic.ebpb_watermark {
            st.dynamic.ebpb_watermark = l as u64;
            self.persist(st)?;
        }
        let bsize = ebpb_bin_size(&st.column_counts(), st.dynamic.ebpb_watermark as usize);
        let real: u64 = cells.iter().map(|&c| st.grid.cell_counts[c]).sum();
        let n_fake = bsize - real;
        if n_fake > st.meta.ebpb_pool {
            return Err(Error::InsufficientPadding { eid: st.eid, what: "top-ℓ range" });
        }
        let first = st.meta.ebpb_range().start;
        Ok(st.plan_cells(cells, first..first + n_fake))
    }

    /// The bins holding the covered cells' rows, topped up with random
    /// decoy bins to `max(⌈log2 |bins|⌉, needed)`.
    fn plan_multi(&self, st: &EpochState, cells: &[usize]) -> FetchPlan {
        let nb = st.plan.bins.len();
        let needed: BTreeSet<usize> = cells
            .iter()
            .filter(|&&c| st.grid.cell_counts[c] > 0)
            .map(|&c| st.bin_of(st.grid.cell_id[c]))
            .collect();
        let m = nb.min(ceil_log2(nb).max(needed.len()).max(1));
        let others: Vec<usize> = (0..nb).filter(|b| !needed.contains(b)).collect();
        let mut bins = needed.clone();
        bins.extend(others.choose_multiple(&mut *self.rng.lock().unwrap(), m - needed.len()));
        let units: Vec<Unit> = bins.into_iter().map(|b| st.bin_unit(b)).collect();
        st.plan_units(&units)
    }

    /// Sends the plan's trapdoors in random order and returns the trapdoors
    /// and rows in plan order.
    fn fetch(&self, st: &mut EpochState, fp: &FetchPlan) -> Result<(Vec<Vec<u8>>, Vec<Option<EncryptedRow>>)> {
        let tds: Vec<Vec<u8>> = fp.slots.iter().map(|&s| st.trapdoor(&self.master, s)).collect();
        let mut perm: Vec<usize> = (0..tds.len()).collect();
        perm.shuffle(&mut *self.rng.lock().unwrap());
        let req: Vec<Vec<u8>> = perm.iter().map(|&i| tds[i].clone()).collect();
        let resp = self.store.multi_get(st.eid, &req)?;
        if resp.len() != req.len() {
            return Err(Error::IntegrityFailure(st.eid));
        }
        let mut rows = vec![None; tds.len()];
        for (r, &i) in resp.into_iter().zip(&perm) {
            rows[i] = r;
        }
        self.issued.lock().unwrap().push((st.eid, req));
        Ok((tds, rows))
    }

    #[allow(clippy::too_many_arguments)]
    fn filter(
        &self,
        st: &mut EpochState,
        q: &Query,
        oblivious: bool,
        (lo, hi): (u64, u64),
        fp: &FetchPlan,
        rows: &[Option<EncryptedRow>],
        acc: &mut Accumulator,
    ) -> Result<()> {
        let pred = &q.predicate;
        let keep_rows = q.aggregate != Aggregate::Count;
        let present: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].is_some()).collect();
        let versions: BTreeSet<u64> =
            fp.slots.iter().filter(|s| matches!(s, Slot::Real { .. })).map(|&s| st.version(s)).collect();
        let locations: Vec<String> = match (pred.location(), pred.observation()) {
            (Some(l), _) => vec![l.to_string()],
            (None, None) => st.meta.locations.clone(),
            (None, Some(_)) => vec![],
        };
        let span = hi - lo + 1;
        let per_version = span
            * (locations.len() as u64 * st.meta.max_dup_l as u64
                + pred.observation().map_or(0, |_| st.meta.max_dup_o as u64));
        let n_filters = per_version * versions.len() as u64;

        let open = |st: &mut EpochState, i: usize| -> Result<RecordPlain> {
            let key = st.key(&self.master, st.version(fp.slots[i]));
            let row = rows[i].as_ref().expect("only present rows are opened");
            let plain = det_decrypt(&key, &row.er).map_err(|_| Error::IntegrityFailure(st.eid))?;
            RecordPlain::decode(&plain).map_err(|_| Error::IntegrityFailure(st.eid))
        };

        if !oblivious && n_filters > FILTERS_PER_ROW * present.len().max(1) as u64 {
            for &i in &present {
                if let Slot::Real { .. } = fp.slots[i] {
                    let rec = open(st, i)?;
                    if pred.matches(&rec.tuple) {
                        acc.count += 1;
                        if keep_rows {
                            acc.rows.push(rec.tuple);
                        }
                    }
                }
            }
            return Ok(());
        }

        let (fw, dl, dobs) = (st.meta.field_width as usize, st.meta.max_dup_l, st.meta.max_dup_o);
        let mut el_filters = Vec::new();
        let mut eo_filters = Vec::new();
        for &v in &versions {
            let key = st.key(&self.master, v);
            for l in &locations {
                el_filters.extend(filters_for(&key, l, lo, hi, dl, fw));
            }
            if let Some(o) = pred.observation() {
                eo_filters.extend(filters_for(&key, o, lo, hi, dobs, fw));
            }
        }
        let mut checks = Vec::new();
        if !locations.is_empty() {
            checks.push(FilterCheck {
                column: present.iter().map(|&i| rows[i].as_ref().unwrap().el.as_slice()).collect(),
                filters: el_filters.iter().map(Vec::as_slice).collect(),
            });
        }
        if pred.observation().is_some() {
            checks.push(FilterCheck {
                column: present.iter().map(|&i| rows[i].as_ref().unwrap().eo.as_slice()).collect(),
                filters: eo_filters.iter().map(Vec::as_slice).collect(),
            });
        }
        let matched = if oblivious {
            oblivious_filter(&checks, present.len(), None)
        } else {
            plain_filter(&checks, present.len())
        };
        acc.count += matched.len() as u64;
        if keep_rows {
            for m in matched {
                acc.rows.push(open(st, present[m])?.tuple);
            }
        }
        Ok(())
    }

    /// Re-encrypts every fetched row under the next key version, replaces
    /// the rows at the store in random order and records the new tags.
    fn rewrite(
        &self,
        st: &mut EpochState,
        fp: &FetchPlan,
        trapdoors: Vec<Vec<u8>>,
        rows: Vec<Option<EncryptedRow>>,
    ) -> Result<()> {
        if rows.iter().any(Option::is_none) {
            return Err(Error::IntegrityFailure(st.eid));
        }
        let version = st.dynamic.round + 1;
        let new_key = st.key(&self.master, version);
        let (fw, rw) = (st.meta.field_width as usize, st.meta.record_width as usize);
        let mut by_cid: BTreeMap<u32, Vec<EncryptedRow>> = BTreeMap::new();
        let mut replaced = Vec::with_capacity(rows.len());
        for ((&slot, old), row) in fp.slots.iter().zip(trapdoors).zip(rows) {
            let row = row.expect("checked above");
            let fresh = match slot {
                Slot::Real { cid, counter } => {
                    let key = st.key(&self.master, st.version(slot));
                    let plain = det_decrypt(&key, &row.er).map_err(|_| Error::IntegrityFailure(st.eid))?;
                    let rec = RecordPlain::decode(&plain).map_err(|_| Error::IntegrityFailure(st.eid))?;
                    let fresh = encrypt_real_row(&new_key, &rec, cid, counter, fw, rw)?;
                    by_cid.entry(cid).or_default().push(fresh.clone());
                    fresh
                }
                Slot::Fake(j) => generate_fake_rows(j..j + 1, &new_key, fw, rw).pop().expect("one fake row"),
            };
            replaced.push((old, fresh));
        }

        let mut dynamic = st.dynamic.clone();
        let mut tags = st.tags.clone();
        for (&cid, cid_rows) in &by_cid {
            debug_assert_eq!(cid_rows.len() as u64, st.grid.c_tuple[cid as usize - 1]);
            let t = tag_of(cid_rows);
            tags.cid[cid as usize - 1] = t;
            dynamic.cid_tags.insert(cid, t);
            dynamic.cid_version.insert(cid, version);
            for cell in st.grid.cells_of_cid(cid) {
                let i = st.grid.cell_index(cell.p, cell.q);
                let r = st.cell_counters(i);
                let t = tag_of(&cid_rows[r.start as usize - 1..r.end as usize - 1]);
                tags.cell[i] = t;
                dynamic.cell_tags.insert(i as u32, t);
            }
        }
        for &s in &fp.slots {
            if let Slot::Fake(j) = s {
                dynamic.fake_version.insert(j, version);
            }
        }
        dynamic.round = version;

        replaced.shuffle(&mut *self.rng.lock().unwrap());
        self.store.rewrite_epoch(st.eid, replaced)?;
        st.dynamic = dynamic;
        st.tags = tags;
        self.persist(st)
    }
}

fn plan_bpb(st: &mut EpochState, cells: &[usize], opts: &QueryOptions) -> Result<FetchPlan> {
    let bins: BTreeSet<usize> = cells.iter().map(|&c| st.bin_of(st.grid.cell_id[c])).collect();
    let (units, targets): (Vec<Unit>, BTreeSet<usize>) = match opts.super_bins {
        Some(f) => {
            let sb = st.super_bins(f)?;
            let targets = bins.iter().map(|&b| sb.plan.super_of(b).expect("every bin has a super-bin")).collect();
            (sb.units.clone(), targets)
        }
        None if opts.oblivious => ((0..st.plan.bins.len()).map(|b| st.bin_unit(b)).collect(), bins),
        None => {
            let units: Vec<Unit> = bins.iter().map(|&b| st.bin_unit(b)).collect();
            return Ok(st.plan_units(&units));
        }
    };
    if opts.oblivious {
        let mut slots = Vec::new();
        for t in targets {
            slots.extend(oblivious_trapdoor_slots(&units, &st.grid.c_tuple, t, None));
        }
        Ok(FetchPlan::from_slots(slots))
    } else {
        let chosen: Vec<Unit> = targets.into_iter().map(|t| units[t].clone()).collect();
        Ok(st.plan_units(&chosen))
    }
}

/// Every cell of each λ-interval touched by `s0..=s1`, padded to the
/// largest interval.
fn plan_winsec(st: &EpochState, s0: u32, s1: u32) -> Result<FetchPlan> {
    let plan = st.intervals.as_ref().ok_or(Error::InsufficientPadding { eid: st.eid, what: "fixed-interval range" })?;
    let mut fp = FetchPlan::default();
    let mut fake = st.meta.winsec_range().start;
    let wanted = plan.intervals_for(s0 as u64, s1 as u64);
    for (i, r) in plan.intervals.iter().enumerate() {
        let n_fake = plan.fake_count(i);
        if wanted.contains(&i) {
            for c in st.covered_cells(None, r.start as u32, r.end as u32 - 1) {
                fp.push_reals(GroupTag::Cell(c), st.grid.cell_id[c], st.cell_counters(c));
            }
            fp.push_fakes(fake..fake + n_fake);
        }
        fake += n_fake;
    }
    Ok(fp)
}

fn seal_state(map: &BTreeMap<EpochId, Dynamic>, key: &CipherKey) -> Vec<u8> {
    let mut plain = Vec::new();
    put_u32(&mut plain, map.len() as u32);
    for (&eid, d) in map {
        put_u64(&mut plain, eid);
        d.encode(&mut plain);
    }
    rnd_encrypt(key, &plain).bytes
}

fn open_sealed(blob: &[u8], key: &CipherKey) -> Result<BTreeMap<EpochId, Dynamic>> {
    let plain = rnd_decrypt(key, blob)?;
    let mut r = Reader::new(&plain);
    let mut map = BTreeMap::new();
    for _ in 0..r.u32()? {
        let eid = r.u64()?;
        map.insert(eid, Dynamic::decode(&mut r)?);
    }
    if !r.is_empty() {
        return Err(Error::CorruptPackage("trailing sealed state bytes".into()));
    }
    Ok(map)
}
