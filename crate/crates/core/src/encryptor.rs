//! Data-provider side: turns one epoch of plaintext tuples into an
//! [`EpochPackage`] with index keys, fake rows and chain tags.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::binpack::{certify_bounds, equi_size, interval_bins, BinPlan, Certificate, PackInput, Packer};
use crate::crypto::{
    chain_extend, derive_epoch_key, det_encrypt, fake_index_plaintext, index_plaintext, rnd_encrypt,
    ChainDigest, CipherKey, EpochId, EpochKey, MasterSecret, NONCE_LEN,
};
use crate::error::{Error, Result};
use crate::grid::{build_grid, Grid, GridConfig};
use crate::meta::{encode_layout, EpochMeta, FakeStrategy, TagTriple, Tags};
use crate::package::{EncryptedRow, EpochHeader, EpochPackage, Metadata};
use crate::record::{filter_plaintext, PlainTuple, RecordPlain, DEFAULT_FIELD_WIDTH, DEFAULT_RECORD_WIDTH};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncryptOptions {
    pub strategy: FakeStrategy,
    /// Bin capacity; defaults to the largest cid count.
    pub capacity: Option<u64>,
    pub packer: Packer,
    /// Add a fake pool for top-ℓ range bins.
    pub ebpb: bool,
    /// Add interval bins of this many subintervals.
    pub winsec_lambda: Option<u64>,
    pub field_width: usize,
    pub record_width: usize,
}

impl Default for EncryptOptions {
    fn default() -> Self {
        EncryptOptions {
            strategy: FakeStrategy::SimulatedBinPacking,
            capacity: None,
            packer: Packer::Ffd,
            ebpb: false,
            winsec_lambda: None,
            field_width: DEFAULT_FIELD_WIDTH,
            record_width: DEFAULT_RECORD_WIDTH,
        }
    }
}

/// What the data provider learns from encrypting an epoch. Never shipped.
#[derive(Clone, Debug)]
pub struct IngestSummary {
    pub n_real: u64,
    pub n_fake: u64,
    pub capacity: u64,
    pub plan: BinPlan,
    pub certificate: Certificate,
    pub grid: Grid,
}

/// Bin plan over per-cid counts (`c_tuple[cid - 1]`).
pub fn plan_bins(c_tuple: &[u64], capacity: Option<u64>, packer: Packer) -> Result<BinPlan> {
    let capacity = capacity.unwrap_or_else(|| c_tuple.iter().copied().max().unwrap_or(0)).max(1);
    let inputs: Vec<PackInput> = c_tuple
        .iter()
        .enumerate()
        .map(|(i, &w)| PackInput { cid: i as u32 + 1, weight: w })
        .collect();
    Ok(equi_size(packer.pack(&inputs, capacity)?, capacity))
}

pub fn tag_of<'a>(rows: impl IntoIterator<Item = &'a EncryptedRow>) -> TagTriple {
    let (mut hl, mut ho, mut hr): (Option<ChainDigest>, Option<ChainDigest>, Option<ChainDigest>) =
        (None, None, None);
    for r in rows {
        hl = Some(chain_extend(hl.as_ref(), &r.el));
        ho = Some(chain_extend(ho.as_ref(), &r.eo));
        hr = Some(chain_extend(hr.as_ref(), &r.er));
    }
    let e = ChainDigest::empty;
    TagTriple { hl: hl.unwrap_or_else(e), ho: ho.unwrap_or_else(e), hr: hr.unwrap_or_else(e) }
}

/// Encrypts one real row. Used at ingestion and when rows are rewritten.
pub fn encrypt_real_row(
    key: &CipherKey,
    rec: &RecordPlain,
    cid: u32,
    counter: u64,
    field_width: usize,
    record_width: usize,
) -> Result<EncryptedRow> {
    let t = &rec.tuple;
    Ok(EncryptedRow {
        el: det_encrypt(key, &filter_plaintext(&t.location, t.time, rec.k_l, field_width)?).bytes,
        eo: det_encrypt(key, &filter_plaintext(&t.observation, t.time, rec.k_o, field_width)?).bytes,
        er: det_encrypt(key, &rec.encode(record_width)?).bytes,
        ec: det_encrypt(key, &index_plaintext(cid as u64, counter)).bytes,
    })
}

/// Fake rows with ids in `ids`. Filler columns are randomized ciphertexts of
/// the same length as real DET ciphertexts.
pub fn generate_fake_rows(
    ids: Range<u64>,
    key: &CipherKey,
    field_width: usize,
    record_width: usize,
) -> Vec<EncryptedRow> {
    let mut rng = rand::thread_rng();
    let mut filler = |w: usize| {
        let mut b = vec![0u8; w - NONCE_LEN];
        rng.fill_bytes(&mut b);
        rnd_encrypt(key, &b).bytes
    };
    ids.map(|j| EncryptedRow {
        el: filler(field_width),
        eo: filler(field_width),
        er: filler(record_width),
        ec: det_encrypt(key, &fake_index_plaintext(j)).bytes,
    })
    .collect()
}

/// Row order used for counters: by subinterval, then location bucket, then
/// input position. Each cell's rows get a contiguous counter range in its cid.
struct Placed {
    input: usize,
    cid: u32,
    cell: usize,
    counter: u64,
    k_l: u32,
    k_o: u32,
}

fn place(grid: &mut Grid, rows: &[PlainTuple]) -> Result<Vec<Placed>> {
    let mut keyed = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        r.validate()?;
        let s = grid.subinterval(r.time)?;
        let p = grid.column(&r.location);
        keyed.push((s, p, i));
    }
    keyed.sort_unstable();
    let mut dup_l: HashMap<(&str, u64), u32> = HashMap::new();
    let mut dup_o: HashMap<(&str, u64), u32> = HashMap::new();
    let mut out = Vec::with_capacity(rows.len());
    for (s, p, i) in keyed {
        let cell = grid.cell_at_sub(p, s);
        let counter = grid.assign_counter(cell);
        let r = &rows[i];
        let kl = dup_l.entry((r.location.as_str(), r.time)).or_insert(0);
        let ko = dup_o.entry((r.observation.as_str(), r.time)).or_insert(0);
        out.push(Placed {
            input: i,
            cid: cell.cid,
            cell: grid.cell_index(cell.p, cell.q),
            counter,
            k_l: *kl,
            k_o: *ko,
        });
        *kl += 1;
        *ko += 1;
    }
    Ok(out)
}

pub fn encrypt_epoch(
    rows: &[PlainTuple],
    config: &GridConfig,
    eid: EpochId,
    master: &MasterSecret,
    opts: &EncryptOptions,
) -> Result<EpochPackage> {
    encrypt_epoch_detailed(rows, config, eid, master, opts).map(|(p, _)| p)
}

pub fn encrypt_epoch_detailed(
    rows: &[PlainTuple],
    config: &GridConfig,
    eid: EpochId,
    master: &MasterSecret,
    opts: &EncryptOptions,
) -> Result<(EpochPackage, IngestSummary)> {
    if rows.is_empty() {
        return Err(Error::EmptyEpoch);
    }
    if opts.field_width < 2 * NONCE_LEN || opts.record_width < 2 * NONCE_LEN {
        return Err(Error::Config(format!("column widths must be at least {} bytes", 2 * NONCE_LEN)));
    }
    let key: EpochKey = derive_epoch_key(master, eid, 0);
    let mut grid = build_grid(config.clone())?;
    let placed = place(&mut grid, rows)?;
    let n_real = rows.len() as u64;

    let plan = plan_bins(&grid.c_tuple, opts.capacity, opts.packer)?;
    let certificate = certify_bounds(&plan, n_real)?;
    let point_pool = match opts.strategy {
        FakeStrategy::EqualCount => {
            if plan.total_fake > n_real {
                return Err(Error::Config(format!(
                    "equal-count padding gives {n_real} fakes but the bin plan needs {}",
                    plan.total_fake
                )));
            }
            n_real
        }
        FakeStrategy::SimulatedBinPacking => plan.total_fake,
    };
    let ebpb_pool = if opts.ebpb {
        (0..grid.x())
            .map(|p| (0..grid.y()).map(|q| grid.cell_counts[grid.cell_index(p, q)]).sum::<u64>())
            .max()
            .unwrap_or(0)
    } else {
        0
    };
    let (winsec_lambda, winsec_pool) = match opts.winsec_lambda {
        Some(lambda) => {
            let plan = interval_bins(grid.y() as u64, lambda, &subinterval_counts(&grid))?;
            (lambda, plan.total_fake())
        }
        None => (0, 0),
    };

    let mut encrypted: Vec<(usize, EncryptedRow)> = Vec::with_capacity(placed.len());
    let mut max_dup = (0u32, 0u32);
    for pl in &placed {
        let rec = RecordPlain { tuple: rows[pl.input].clone(), seq: pl.input as u64, k_l: pl.k_l, k_o: pl.k_o };
        max_dup = (max_dup.0.max(pl.k_l + 1), max_dup.1.max(pl.k_o + 1));
        let row = encrypt_real_row(&key, &rec, pl.cid, pl.counter, opts.field_width, opts.record_width)?;
        encrypted.push((pl.cell, row));
    }

    // Placement order is counter order within every cid and every cell.
    let mut by_cid: Vec<Vec<&EncryptedRow>> = vec![Vec::new(); grid.u() as usize];
    let mut by_cell: Vec<Vec<&EncryptedRow>> = vec![Vec::new(); grid.cell_id.len()];
    for (pl, (cell, row)) in placed.iter().zip(&encrypted) {
        by_cid[pl.cid as usize - 1].push(row);
        by_cell[*cell].push(row);
    }
    let tags = Tags {
        cid: by_cid.into_iter().map(tag_of).collect(),
        cell: by_cell.into_iter().map(tag_of).collect(),
    };

    let locations: BTreeSet<&str> = rows.iter().map(|r| r.location.as_str()).collect();
    let meta = EpochMeta {
        x: config.x,
        y: config.y,
        u: config.u,
        epoch_start: config.epoch_start,
        epoch_duration: config.epoch_duration,
        c_tuple: grid.c_tuple.clone(),
        cell_counts: grid.cell_counts.clone(),
        capacity: plan.capacity,
        packer: opts.packer,
        strategy: opts.strategy,
        point_pool,
        ebpb_pool,
        winsec_lambda,
        winsec_pool,
        max_dup_l: max_dup.0,
        max_dup_o: max_dup.1,
        field_width: opts.field_width as u32,
        record_width: opts.record_width as u32,
        locations: locations.into_iter().map(String::from).collect(),
    };
    let n_fake = meta.n_fake();

    let mut all: Vec<EncryptedRow> = encrypted.into_iter().map(|(_, r)| r).collect();
    all.extend(generate_fake_rows(1..n_fake + 1, &key, opts.field_width, opts.record_width));
    // Fresh seed per epoch, dropped with the generator.
    let mut shuffler = ChaCha20Rng::from_entropy();
    all.shuffle(&mut shuffler);

    let package = EpochPackage {
        header: EpochHeader {
            eid,
            epoch_start: config.epoch_start,
            duration: config.epoch_duration,
            x: config.x,
            y: config.y,
            u: config.u,
            n_rows: all.len() as u64,
            n_fake,
        },
        metadata: Metadata {
            enc_cell_id: rnd_encrypt(&key, &encode_layout(&grid.cell_id)).bytes,
            enc_c_tuple: rnd_encrypt(&key, &meta.encode()).bytes,
            tags: tags.seal(&key),
        },
        rows: all,
    };
    let summary = IngestSummary { n_real, n_fake, capacity: plan.capacity, plan, certificate, grid };
    Ok((package, summary))
}

/// Real tuples per subinterval, over all locations.
pub fn subinterval_counts(grid: &Grid) -> Vec<u64> {
    (0..grid.y())
        .map(|s| {
            let q = grid.row_of_subinterval(s);
            (0..grid.x()).map(|p| grid.cell_counts[grid.cell_index(p, q)]).sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{det_decrypt, decode_u64s, rnd_decrypt, FAKE_MARKER};
    use crate::meta::decode_layout;
    use std::collections::HashSet;

    fn table_one() -> Vec<PlainTuple> {
        vec![
            PlainTuple::new("l1", 1005, "o1"),
            PlainTuple::new("l1", 1010, "o2"),
            PlainTuple::new("l2", 1020, "o2"),
            PlainTuple::new("l1", 1025, "o1"),
            PlainTuple::new("l2", 1040, "o3"),
            PlainTuple::new("l3", 1050, "o2"),
        ]
    }

    fn cfg() -> GridConfig {
        GridConfig { x: 2, y: 2, u: 3, epoch_start: 1000, epoch_duration: 60, rng_seed: 6 }
    }

    fn master() -> MasterSecret {
        MasterSecret::from_bytes([9; 32])
    }

    fn decoded_keys(p: &EpochPackage, key: &CipherKey) -> Vec<Vec<u64>> {
        p.rows.iter().map(|r| decode_u64s(&det_decrypt(key, &r.ec).unwrap()).unwrap()).collect()
    }

    #[test]
    fn table_one_package() {
        let (p, s) = encrypt_epoch_detailed(&table_one(), &cfg(), 1, &master(), &Default::default()).unwrap();
        assert_eq!(s.grid.cell_id, vec![1, 2, 1, 3]);
        assert_eq!(s.grid.c_tuple, vec![4, 1, 1]);
        assert_eq!((s.n_real, s.n_fake, s.capacity), (6, 2, 4));
        assert_eq!(p.rows.len(), 8);
        assert_eq!(p.header.n_fake, 2);
        let key = derive_epoch_key(&master(), 1, 0);
        let keys: HashSet<Vec<u64>> = decoded_keys(&p, &key).into_iter().collect();
        let want: HashSet<Vec<u64>> = [[1, 1], [1, 2], [1, 3], [1, 4], [2, 1], [3, 1], [FAKE_MARKER, 1], [FAKE_MARKER, 2]]
            .iter()
            .map(|k| k.to_vec())
            .collect();
        assert_eq!(keys, want);
        let layout = decode_layout(&rnd_decrypt(&key, &p.metadata.enc_cell_id).unwrap()).unwrap();
        assert_eq!(layout, vec![1, 2, 1, 3]);
        let meta = EpochMeta::decode(&rnd_decrypt(&key, &p.metadata.enc_c_tuple).unwrap()).unwrap();
        assert_eq!(meta.c_tuple, vec![4, 1, 1]);
        assert_eq!(meta.locations, vec!["l1", "l2", "l3"]);
        let tags = Tags::open(&p.metadata.tags, &key).unwrap();
        assert_eq!(tags.cid.len(), 3);
        assert_eq!(tags.cell.len(), 4);
    }

    #[test]
    fn counters_follow_table_one() {
        // r1, r2, r4, r6 get cid1 counters 1..4; r3 is cid3, r5 is cid2.
        let (p, _) = encrypt_epoch_detailed(&table_one(), &cfg(), 1, &master(), &Default::default()).unwrap();
        let key = derive_epoch_key(&master(), 1, 0);
        let mut seen = Vec::new();
        for r in &p.rows {
            let k = decode_u64s(&det_decrypt(&key, &r.ec).unwrap()).unwrap();
            if k[0] == FAKE_MARKER {
                continue;
            }
            let rec = RecordPlain::decode(&det_decrypt(&key, &r.er).unwrap()).unwrap();
            seen.push((rec.seq + 1, k[0], k[1]));
        }
        seen.sort();
        assert_eq!(seen, vec![(1, 1, 1), (2, 1, 2), (3, 3, 1), (4, 1, 3), (5, 2, 1), (6, 1, 4)]);
    }

    #[test]
    fn equal_count_fakes() {
        let opts = EncryptOptions { strategy: FakeStrategy::EqualCount, ..Default::default() };
        let p = encrypt_epoch(&table_one(), &cfg(), 1, &master(), &opts).unwrap();
        assert_eq!(p.rows.len(), 12);
        assert_eq!(p.header.n_fake, 6);
    }

    #[test]
    fn rows_have_uniform_length() {
        let p = encrypt_epoch(&table_one(), &cfg(), 1, &master(), &Default::default()).unwrap();
        let lens: HashSet<(usize, usize, usize, usize)> =
            p.rows.iter().map(|r| (r.el.len(), r.eo.len(), r.er.len(), r.ec.len())).collect();
        assert_eq!(lens.len(), 1);
    }

    #[test]
    fn fake_rows() {
        let key = derive_epoch_key(&master(), 4, 0);
        assert!(generate_fake_rows(1..1, &key, 64, 256).is_empty());
        let f = generate_fake_rows(1..3, &key, 64, 256);
        let ids: Vec<Vec<u64>> = f.iter().map(|r| decode_u64s(&det_decrypt(&key, &r.ec).unwrap()).unwrap()).collect();
        assert_eq!(ids, vec![vec![FAKE_MARKER, 1], vec![FAKE_MARKER, 2]]);
        assert_eq!(f[0].el.len(), 64 + 16);
        assert_eq!(f[0].er.len(), 256 + 16);
    }

    #[test]
    fn errors() {
        let m = master();
        assert!(matches!(encrypt_epoch(&[], &cfg(), 1, &m, &Default::default()), Err(Error::EmptyEpoch)));
        let late = vec![PlainTuple::new("l1", 2000, "o")];
        assert!(matches!(encrypt_epoch(&late, &cfg(), 1, &m, &Default::default()), Err(Error::OutOfEpoch { .. })));
    }

    #[test]
    fn duplicates_and_distinct_el() {
        let rows = vec![
            PlainTuple::new("l1", 1005, "o1"),
            PlainTuple::new("l1", 1005, "o1"),
            PlainTuple::new("l1", 1005, "o2"),
        ];
        let p = encrypt_epoch(&rows, &cfg(), 1, &master(), &Default::default()).unwrap();
        let el: HashSet<&Vec<u8>> = p.rows.iter().map(|r| &r.el).collect();
        let er: HashSet<&Vec<u8>> = p.rows.iter().map(|r| &r.er).collect();
        let ec: HashSet<&Vec<u8>> = p.rows.iter().map(|r| &r.ec).collect();
        assert_eq!((el.len(), er.len(), ec.len()), (p.rows.len(), p.rows.len(), p.rows.len()));
        let key = derive_epoch_key(&master(), 1, 0);
        let meta = EpochMeta::decode(&rnd_decrypt(&key, &p.metadata.enc_c_tuple).unwrap()).unwrap();
        assert_eq!((meta.max_dup_l, meta.max_dup_o), (3, 2));
    }

    #[test]
    fn epochs_are_unlinkable() {
        let a = encrypt_epoch(&table_one(), &cfg(), 1, &master(), &Default::default()).unwrap();
        let b = encrypt_epoch(&table_one(), &cfg(), 2, &master(), &Default::default()).unwrap();
        let cts = |p: &EpochPackage| -> HashSet<Vec<u8>> {
            p.rows.iter().flat_map(|r| [r.el.clone(), r.eo.clone(), r.er.clone(), r.ec.clone()]).collect()
        };
        assert!(cts(&a).is_disjoint(&cts(&b)));
    }

    #[test]
    fn pools_are_sized() {
        let opts = EncryptOptions { ebpb: true, winsec_lambda: Some(1), ..Default::default() };
        let (p, s) = encrypt_epoch_detailed(&table_one(), &cfg(), 1, &master(), &opts).unwrap();
        // Column totals: p0 has 4 rows, p1 has 2. Subintervals hold 4 and 2.
        assert_eq!(s.n_fake, 2 + 4 + 2);
        assert_eq!(p.rows.len(), 6 + 8);
    }
}
