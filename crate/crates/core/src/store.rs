//! The untrusted service provider: per-epoch package files with an
//! exact-match index over the index-key column. It only ever handles opaque
//! bytes and holds no keys.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::crypto::EpochId;
use crate::error::{Error, Result};
use crate::package::{put_bytes, put_u64, EncryptedRow, EpochHeader, EpochPackage, Metadata, Reader};

pub const PACKAGE_FILE: &str = "package.cncl";
pub const INDEX_FILE: &str = "index.idx";
pub const CATALOG_FILE: &str = "catalog";
pub const ACCESS_LOG: &str = "access.log";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CatalogEntry {
    pub eid: EpochId,
    pub rows: u64,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccessEntry {
    pub eid: EpochId,
    pub n_trapdoors: usize,
    pub unix_ts: u64,
}

/// The message boundary between the trusted processor and the store.
pub trait UntrustedStore: Send + Sync {
    fn catalog(&self) -> Result<Vec<CatalogEntry>>;
    fn header(&self, eid: EpochId) -> Result<EpochHeader>;
    fn fetch_metadata(&self, eid: EpochId) -> Result<Metadata>;
    /// Exact-match lookups; `None` marks a key with no row.
    fn multi_get(&self, eid: EpochId, trapdoors: &[Vec<u8>]) -> Result<Vec<Option<EncryptedRow>>>;
    /// Replaces the rows stored under each old key; new rows are appended in
    /// the order given.
    fn rewrite_epoch(&self, eid: EpochId, replaced: Vec<(Vec<u8>, EncryptedRow)>) -> Result<()>;
}

struct EpochData {
    package: EpochPackage,
    index: BTreeMap<Vec<u8>, usize>,
}

impl EpochData {
    fn from_package(package: EpochPackage) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, r) in package.rows.iter().enumerate() {
            if index.insert(r.ec.clone(), i).is_some() {
                return Err(Error::CorruptPackage("duplicate index key".into()));
            }
        }
        Ok(EpochData { package, index })
    }
}

pub struct FileStore {
    root: PathBuf,
    epochs: RwLock<HashMap<EpochId, Arc<RwLock<EpochData>>>>,
    catalog_lock: Mutex<()>,
    log_lock: Mutex<()>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn encode_index(package_offsets: &[u64], rows: &[EncryptedRow]) -> Vec<u8> {
    let mut pairs: Vec<(&[u8], u64)> = rows.iter().map(|r| r.ec.as_slice()).zip(package_offsets.iter().copied()).collect();
    pairs.sort_unstable();
    let mut out = Vec::with_capacity(8 + pairs.len() * 48);
    put_u64(&mut out, pairs.len() as u64);
    for (k, off) in pairs {
        put_bytes(&mut out, k);
        put_u64(&mut out, off);
    }
    out
}

impl FileStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        Ok(FileStore {
            root,
            epochs: RwLock::new(HashMap::new()),
            catalog_lock: Mutex::new(()),
            log_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn epoch_dir(&self, eid: EpochId) -> PathBuf {
        self.root.join(eid.to_string())
    }

    pub fn ingest_bytes(&self, bytes: &[u8]) -> Result<u64> {
        self.ingest(EpochPackage::from_bytes(bytes)?)
    }

    pub fn ingest(&self, package: EpochPackage) -> Result<u64> {
        let eid = package.header.eid;
        if package.rows.len() as u64 != package.header.n_rows {
            return Err(Error::CorruptPackage("row count does not match header".into()));
        }
        let _cat = self.catalog_lock.lock().unwrap();
        let mut catalog = self.catalog()?;
        if catalog.iter().any(|c| c.eid == eid) || self.epoch_dir(eid).exists() {
            return Err(Error::DuplicateEpoch(eid));
        }
        let data = EpochData::from_package(package)?;
        let n = data.package.rows.len() as u64;
        fs::create_dir_all(self.epoch_dir(eid))?;
        self.persist(eid, &data.package)?;
        catalog.push(CatalogEntry { eid, rows: n, file: format!("{eid}/{PACKAGE_FILE}") });
        self.write_catalog(&catalog)?;
        self.epochs.write().unwrap().insert(eid, Arc::new(RwLock::new(data)));
        Ok(n)
    }

    fn persist(&self, eid: EpochId, package: &EpochPackage) -> Result<()> {
        let dir = self.epoch_dir(eid);
        let (bytes, offsets) = package.to_bytes_with_offsets();
        write_atomic(&dir.join(PACKAGE_FILE), &bytes)?;
        write_atomic(&dir.join(INDEX_FILE), &encode_index(&offsets, &package.rows))?;
        Ok(())
    }

    fn write_catalog(&self, catalog: &[CatalogEntry]) -> Result<()> {
        let mut s = String::new();
        for c in catalog {
            s.push_str(&format!("{}\t{}\t{}\n", c.eid, c.rows, c.file));
        }
        write_atomic(&self.root.join(CATALOG_FILE), s.as_bytes())
    }

    fn load(&self, eid: EpochId) -> Result<Arc<RwLock<EpochData>>> {
        if let Some(e) = self.epochs.read().unwrap().get(&eid) {
            return Ok(e.clone());
        }
        let dir = self.epoch_dir(eid);
        let bytes = match fs::read(dir.join(PACKAGE_FILE)) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::UnknownEpoch(eid)),
            Err(e) => return Err(e.into()),
        };
        let (package, offsets) = EpochPackage::parse(&bytes)?;
        let by_offset: HashMap<u64, usize> = offsets.iter().enumerate().map(|(i, &o)| (o, i)).collect();
        let idx_bytes = fs::read(dir.join(INDEX_FILE))?;
        let mut r = Reader::new(&idx_bytes);
        let n = r.u64()?;
        let mut index = BTreeMap::new();
        for _ in 0..n {
            let key = r.bytes()?.to_vec();
            let off = r.u64()?;
            let row = *by_offset
                .get(&off)
                .ok_or_else(|| Error::CorruptPackage(format!("index offset {off} is not a record")))?;
            if package.rows[row].ec != key {
                return Err(Error::CorruptPackage("index key does not match record".into()));
            }
            index.insert(key, row);
        }
        if index.len() != package.rows.len() {
            return Err(Error::CorruptPackage("index does not cover every row".into()));
        }
        let data = Arc::new(RwLock::new(EpochData { package, index }));
        Ok(self.epochs.write().unwrap().entry(eid).or_insert(data).clone())
    }

    fn log_access(&self, eid: EpochId, n: usize) -> Result<()> {
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let _g = self.log_lock.lock().unwrap();
        let mut f = OpenOptions::new().create(true).append(true).open(self.root.join(ACCESS_LOG))?;
        writeln!(f, "{eid}\t{n}\t{ts}")?;
        Ok(())
    }

    pub fn access_log(&self) -> Result<Vec<AccessEntry>> {
        read_access_log(&self.root)
    }

    pub fn clear_access_log(&self) -> Result<()> {
        let _g = self.log_lock.lock().unwrap();
        match fs::remove_file(self.root.join(ACCESS_LOG)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
            _ => Ok(()),
        }
    }

    /// All index keys of an epoch, as an observer of the table sees them.
    pub fn keys(&self, eid: EpochId) -> Result<Vec<Vec<u8>>> {
        let e = self.load(eid)?;
        let g = e.read().unwrap();
        Ok(g.index.keys().cloned().collect())
    }

    /// Direct row manipulation, bypassing every protocol check. Models a
    /// malicious or faulty provider in tests and in the CLI leak tooling.
    pub fn tamper_rows(&self, eid: EpochId, f: impl FnOnce(&mut Vec<EncryptedRow>)) -> Result<()> {
        self.tamper(eid, |p| f(&mut p.rows))
    }

    pub fn tamper_metadata(&self, eid: EpochId, f: impl FnOnce(&mut Metadata)) -> Result<()> {
        self.tamper(eid, |p| f(&mut p.metadata))
    }

    fn tamper(&self, eid: EpochId, f: impl FnOnce(&mut EpochPackage)) -> Result<()> {
        let e = self.load(eid)?;
        let mut g = e.write().unwrap();
        let mut package = g.package.clone();
        f(&mut package);
        package.header.n_rows = package.rows.len() as u64;
        // Duplicate keys may be part of an attack; keep the first occurrence.
        let mut index = BTreeMap::new();
        for (i, r) in package.rows.iter().enumerate() {
            index.entry(r.ec.clone()).or_insert(i);
        }
        let (bytes, offsets) = package.to_bytes_with_offsets();
        let dir = self.epoch_dir(eid);
        write_atomic(&dir.join(PACKAGE_FILE), &bytes)?;
        let kept: Vec<usize> = index.values().copied().collect();
        let rows: Vec<EncryptedRow> = kept.iter().map(|&i| package.rows[i].clone()).collect();
        let offs: Vec<u64> = kept.iter().map(|&i| offsets[i]).collect();
        write_atomic(&dir.join(INDEX_FILE), &encode_index(&offs, &rows))?;
        *g = EpochData { package, index };
        Ok(())
    }
}

pub fn read_access_log(root: &Path) -> Result<Vec<AccessEntry>> {
    let text = match fs::read_to_string(root.join(ACCESS_LOG)) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(vec![]),
        Err(e) => return Err(e.into()),
    };
    text.lines()
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            let bad = || Error::CorruptPackage(format!("bad access log line {l:?}"));
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(AccessEntry {
                eid: f[0].parse().map_err(|_| bad())?,
                n_trapdoors: f[1].parse().map_err(|_| bad())?,
                unix_ts: f[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

impl UntrustedStore for FileStore {
    fn catalog(&self) -> Result<Vec<CatalogEntry>> {
        let text = match fs::read_to_string(self.root.join(CATALOG_FILE)) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(vec![]),
            Err(e) => return Err(e.into()),
        };
        text.lines()
            .filter(|l| !l.is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split('\t').collect();
                let bad = || Error::CorruptPackage(format!("bad catalog line {l:?}"));
                if f.len() != 3 {
                    return Err(bad());
                }
                Ok(CatalogEntry {
                    eid: f[0].parse().map_err(|_| bad())?,
                    rows: f[1].parse().map_err(|_| bad())?,
                    file: f[2].to_string(),
                })
            })
            .collect()
    }

    fn header(&self, eid: EpochId) -> Result<EpochHeader> {
        Ok(self.load(eid)?.read().unwrap().package.header.clone())
    }

    fn fetch_metadata(&self, eid: EpochId) -> Result<Metadata> {
        Ok(self.load(eid)?.read().unwrap().package.metadata.clone())
    }

    fn multi_get(&self, eid: EpochId, trapdoors: &[Vec<u8>]) -> Result<Vec<Option<EncryptedRow>>> {
        let e = self.load(eid)?;
        let out = {
            let g = e.read().unwrap();
            trapdoors
                .iter()
                .map(|t| g.index.get(t).map(|&i| g.package.rows[i].clone()))
                .collect()
        };
        self.log_access(eid, trapdoors.len())?;
        Ok(out)
    }

    fn rewrite_epoch(&self, eid: EpochId, replaced: Vec<(Vec<u8>, EncryptedRow)>) -> Result<()> {
        let e = self.load(eid)?;
        let mut g = e.write().unwrap();
        let mut drop = vec![false; g.package.rows.len()];
        for (old, _) in &replaced {
            let &i = g.index.get(old).ok_or(Error::UnknownKey)?;
            drop[i] = true;
        }
        let mut package = g.package.clone();
        let mut keep = drop.iter();
        package.rows.retain(|_| !*keep.next().unwrap());
        package.rows.extend(replaced.into_iter().map(|(_, r)| r));
        package.header.n_rows = package.rows.len() as u64;
        let data = EpochData::from_package(package)?;
        self.persist(eid, &data.package)?;
        *g = data;
        Ok(())
    }
}
