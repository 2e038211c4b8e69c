//! Per-epoch state inside the trusted processor: decrypted metadata, the
//! bin plan, and everything that changes when rows are rewritten.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use crate::binpack::{build_super_bins, interval_bins, BinPlan, IntervalPlan, SuperBinPlan};
use crate::crypto::{
    derive_epoch_key, det_encrypt, fake_index_plaintext, index_plaintext, rnd_decrypt, CipherKey, EpochId,
    MasterSecret,
};
use crate::encryptor::{plan_bins, subinterval_counts};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridConfig};
use crate::meta::{decode_layout, EpochMeta, TagTriple, Tags};
use crate::package::{put_u32, put_u64, EpochHeader, Reader};
use crate::store::UntrustedStore;

/// State that survives process restarts (sealed to disk by the processor).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub(crate) struct Dynamic {
    /// Rewrites performed so far; version `round` is the newest key.
    pub round: u64,
    /// Key version per cid; absent means 0.
    pub cid_version: BTreeMap<u32, u64>,
    pub fake_version: BTreeMap<u64, u64>,
    pub cid_tags: BTreeMap<u32, TagTriple>,
    pub cell_tags: BTreeMap<u32, TagTriple>,
    /// Largest ℓ seen by a top-ℓ range query.
    pub ebpb_watermark: u64,
}

impl Dynamic {
    pub fn encode(&self, out: &mut Vec<u8>) {
        put_u64(out, self.round);
        put_u64(out, self.ebpb_watermark);
        put_u32(out, self.cid_version.len() as u32);
        for (&c, &v) in &self.cid_version {
            put_u32(out, c);
            put_u64(out, v);
        }
        put_u32(out, self.fake_version.len() as u32);
        for (&j, &v) in &self.fake_version {
            put_u64(out, j);
            put_u64(out, v);
        }
        for tags in [&self.cid_tags, &self.cell_tags] {
            put_u32(out, tags.len() as u32);
            for (&k, t) in tags {
                put_u32(out, k);
                out.extend_from_slice(&t.to_bytes());
            }
        }
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let mut d = Dynamic { round: r.u64()?, ebpb_watermark: r.u64()?, ..Default::default() };
        for _ in 0..r.u32()? {
            d.cid_version.insert(r.u32()?, r.u64()?);
        }
        for _ in 0..r.u32()? {
            d.fake_version.insert(r.u64()?, r.u64()?);
        }
        for tags in [&mut d.cid_tags, &mut d.cell_tags] {
            for _ in 0..r.u32()? {
                let k = r.u32()?;
                tags.insert(k, TagTriple::from_bytes(r.take(TagTriple::LEN)?)?);
            }
        }
        Ok(d)
    }
}

/// One retrieval: a real row `(cid, counter)` or a fake id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Real { cid: u32, counter: u64 },
    Fake(u64),
}

/// A run of consecutive real slots whose chain tag is known.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum GroupTag {
    Cid(u32),
    Cell(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Group {
    pub tag: GroupTag,
    pub slots: Range<usize>,
}

/// What a query asks the store for, in issue order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub(crate) struct FetchPlan {
    pub slots: Vec<Slot>,
    pub groups: Vec<Group>,
}

impl FetchPlan {
    pub(crate) fn push_reals(&mut self, tag: GroupTag, cid: u32, counters: Range<u64>) {
        let start = self.slots.len();
        self.slots.extend(counters.map(|counter| Slot::Real { cid, counter }));
        self.groups.push(Group { tag, slots: start..self.slots.len() });
    }

    pub(crate) fn push_fakes(&mut self, ids: impl IntoIterator<Item = u64>) {
        self.slots.extend(ids.into_iter().map(Slot::Fake));
    }
}

/// Retrieval unit of the point protocol: a bin, or a super-bin.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Unit {
    pub cids: Vec<u32>,
    pub fakes: Vec<u64>,
}

pub(crate) struct SuperBins {
    pub plan: SuperBinPlan,
    pub units: Vec<Unit>,
}

pub(crate) struct EpochState {
    pub eid: EpochId,
    pub grid: Grid,
    pub meta: EpochMeta,
    pub plan: BinPlan,
    /// Current tags: the shipped ones with rewrite overrides applied.
    pub tags: Tags,
    /// Counter offset of each cell inside its cid.
    pub cell_start: Vec<u64>,
    pub intervals: Option<IntervalPlan>,
    pub dynamic: Dynamic,
    keys: HashMap<u64, CipherKey>,
    super_bins: HashMap<usize, SuperBins>,
}

fn check_header(h: &EpochHeader, m: &EpochMeta, eid: EpochId) -> Result<()> {
    let same = h.eid == eid
        && (h.x, h.y, h.u) == (m.x, m.y, m.u)
        && (h.epoch_start, h.duration) == (m.epoch_start, m.epoch_duration)
        && h.n_fake == m.n_fake()
        && m.c_tuple.len() == m.u as usize
        && m.cell_counts.len() == m.x as usize * m.y as usize;
    if same {
        Ok(())
    } else {
        Err(Error::IntegrityFailure(eid))
    }
}

impl EpochState {
    pub fn load(store: &dyn UntrustedStore, master: &MasterSecret, eid: EpochId, dynamic: Dynamic) -> Result<Self> {
        let header = store.header(eid)?;
        let md = store.fetch_metadata(eid)?;
        let k0: CipherKey = (*derive_epoch_key(master, eid, 0)).clone();
        let layout = decode_layout(&rnd_decrypt(&k0, &md.enc_cell_id)?)?;
        let meta = EpochMeta::decode(&rnd_decrypt(&k0, &md.enc_c_tuple)?)?;
        let mut tags = Tags::open(&md.tags, &k0)?;
        check_header(&header, &meta, eid)?;
        if tags.cid.len() != meta.c_tuple.len() || tags.cell.len() != meta.cell_counts.len() {
            return Err(Error::IntegrityFailure(eid));
        }
        let config = GridConfig {
            x: meta.x,
            y: meta.y,
            u: meta.u,
            epoch_start: meta.epoch_start,
            epoch_duration: meta.epoch_duration,
            rng_seed: 0,
        };
        let mut grid = Grid::from_parts(config, layout)?;
        grid.c_tuple = meta.c_tuple.clone();
        grid.cell_counts = meta.cell_counts.clone();

        let plan = plan_bins(&meta.c_tuple, Some(meta.capacity), meta.packer)?;
        let intervals = match meta.winsec_lambda {
            0 => None,
            l => Some(interval_bins(grid.y() as u64, l, &subinterval_counts(&grid))?),
        };

        // Counters run through each cid's cells by subinterval, then column.
        let mut cell_start = vec![0u64; grid.cell_id.len()];
        let mut next = vec![0u64; grid.u() as usize];
        for s in 0..grid.y() {
            for p in 0..grid.x() {
                let c = grid.cell_at_sub(p, s);
                let i = grid.cell_index(c.p, c.q);
                cell_start[i] = next[c.cid as usize - 1];
                next[c.cid as usize - 1] += grid.cell_counts[i];
            }
        }
        if next != grid.c_tuple {
            return Err(Error::IntegrityFailure(eid));
        }

        for (&c, t) in &dynamic.cid_tags {
            *tags.cid.get_mut(c as usize - 1).ok_or(Error::IntegrityFailure(eid))? = *t;
        }
        for (&c, t) in &dynamic.cell_tags {
            *tags.cell.get_mut(c as usize).ok_or(Error::IntegrityFailure(eid))? = *t;
        }
        let mut keys = HashMap::new();
        keys.insert(0, k0);
        Ok(EpochState {
            eid,
            grid,
            meta,
            plan,
            tags,
            cell_start,
            intervals,
            dynamic,
            keys,
            super_bins: HashMap::new(),
        })
    }

    pub fn key(&mut self, master: &MasterSecret, version: u64) -> CipherKey {
        let eid = self.eid;
        self.keys.entry(version).or_insert_with(|| (*derive_epoch_key(master, eid, version)).clone()).clone()
    }

    pub fn version(&self, slot: Slot) -> u64 {
        let v = match slot {
            Slot::Real { cid, .. } => self.dynamic.cid_version.get(&cid),
            Slot::Fake(j) => self.dynamic.fake_version.get(&j),
        };
        v.copied().unwrap_or(0)
    }

    pub fn slot_plaintext(slot: Slot) -> Vec<u8> {
        match slot {
            Slot::Real { cid, counter } => index_plaintext(cid as u64, counter),
            Slot::Fake(j) => fake_index_plaintext(j),
        }
    }

    pub fn trapdoor(&mut self, master: &MasterSecret, slot: Slot) -> Vec<u8> {
        let key = self.key(master, self.version(slot));
        det_encrypt(&key, &Self::slot_plaintext(slot)).bytes
    }

    pub fn expected_tag(&self, tag: GroupTag) -> TagTriple {
        match tag {
            GroupTag::Cid(c) => self.tags.cid[c as usize - 1],
            GroupTag::Cell(i) => self.tags.cell[i],
        }
    }

    pub fn cell_counters(&self, cell: usize) -> Range<u64> {
        let s = self.cell_start[cell];
        s + 1..s + 1 + self.grid.cell_counts[cell]
    }

    /// Cell indexes covered by a column (or every column) over subintervals
    /// `s0..=s1`.
    pub fn covered_cells(&self, column: Option<u32>, s0: u32, s1: u32) -> Vec<usize> {
        let cols: Vec<u32> = match column {
            Some(p) => vec![p],
            None => (0..self.grid.x()).collect(),
        };
        let mut out = Vec::new();
        for s in s0..=s1 {
            for &p in &cols {
                let c = self.grid.cell_at_sub(p, s);
                out.push(self.grid.cell_index(c.p, c.q));
            }
        }
        out
    }

    /// Bin index containing `cid`.
    pub fn bin_of(&self, cid: u32) -> usize {
        self.plan.bins.iter().position(|b| b.members.contains(&cid)).expect("every cid is packed")
    }

    pub fn bin_unit(&self, bin: usize) -> Unit {
        let b = &self.plan.bins[bin];
        Unit { cids: b.members.clone(), fakes: b.fake_range.clone().collect() }
    }

    /// Whole bins, in the given order.
    pub fn plan_units(&self, units: &[Unit]) -> FetchPlan {
        let mut fp = FetchPlan::default();
        for u in units {
            for &cid in &u.cids {
                fp.push_reals(GroupTag::Cid(cid), cid, 1..self.grid.c_tuple[cid as usize - 1] + 1);
            }
            fp.push_fakes(u.fakes.iter().copied());
        }
        fp
    }

    /// Individual cells plus `fakes`.
    pub fn plan_cells(&self, cells: &[usize], fakes: Range<u64>) -> FetchPlan {
        let mut fp = FetchPlan::default();
        for &c in cells {
            let cid = self.grid.cell_id[c];
            fp.push_reals(GroupTag::Cell(c), cid, self.cell_counters(c));
        }
        fp.push_fakes(fakes);
        fp
    }

    /// Per-column counts in subinterval order, for top-ℓ sizing.
    pub fn column_counts(&self) -> Vec<Vec<u64>> {
        (0..self.grid.x())
            .map(|p| {
                (0..self.grid.y())
                    .map(|s| {
                        let c = self.grid.cell_at_sub(p, s);
                        self.grid.count_of_cell(c)
                    })
                    .collect()
            })
            .collect()
    }

    /// Unit grouping for `f` super-bins. Bin counts not divisible by `f` are
    /// topped up with empty bins built from unused point-pool fakes.
    pub fn super_bins(&mut self, f: usize) -> Result<&SuperBins> {
        if !self.super_bins.contains_key(&f) {
            let sb = self.build_super_bins(f)?;
            self.super_bins.insert(f, sb);
        }
        Ok(&self.super_bins[&f])
    }

    fn build_super_bins(&self, f: usize) -> Result<SuperBins> {
        let nb = self.plan.bins.len();
        if f == 0 || f > nb {
            return Err(Error::Divisibility { bins: nb, f });
        }
        let pad = (f - nb % f) % f;
        let spare = self.meta.point_pool - self.plan.total_fake;
        let cap = self.plan.capacity;
        if pad as u64 * cap > spare {
            return Err(Error::Divisibility { bins: nb, f });
        }
        let mut bin_units: Vec<Unit> = (0..nb).map(|b| self.bin_unit(b)).collect();
        let first = self.plan.total_fake + 1;
        for i in 0..pad as u64 {
            let s = first + i * cap;
            bin_units.push(Unit { cids: vec![], fakes: (s..s + cap).collect() });
        }
        // A bin's unique values are its nonempty cells.
        let counts: Vec<u64> = bin_units
            .iter()
            .map(|u| {
                u.cids
                    .iter()
                    .map(|&cid| self.grid.cells_of_cid(cid).iter().filter(|c| self.grid.count_of_cell(**c) > 0).count() as u64)
                    .sum()
            })
            .collect();
        let plan = build_super_bins(&counts, f)?;
        let units = plan
            .assignment
            .iter()
            .map(|members| {
                let mut u = Unit::default();
                for &b in members {
                    u.cids.extend(&bin_units[b].cids);
                    u.fakes.extend(&bin_units[b].fakes);
                }
                u
            })
            .collect();
        Ok(SuperBins { plan, units })
    }
}
