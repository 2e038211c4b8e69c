//! The x×y grid shared by the data provider and the enclave: cell-id
//! allocation, cell lookup and per-cell-id counters.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::crypto::grid_hash;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridConfig {
    /// Location buckets (columns).
    pub x: u32,
    /// Time subintervals (rows).
    pub y: u32,
    /// Number of distinct cell-ids.
    pub u: u32,
    pub epoch_start: u64,
    pub epoch_duration: u64,
    pub rng_seed: u64,
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.x == 0 || self.y == 0 || self.u == 0 {
            return Err(Error::Config("x, y and u must be positive".into()));
        }
        if self.u as u64 > self.x as u64 * self.y as u64 {
            return Err(Error::Config(format!(
                "u={} exceeds the {} cells of a {}x{} grid",
                self.u,
                self.x as u64 * self.y as u64,
                self.x,
                self.y
            )));
        }
        if self.epoch_duration < self.y as u64 {
            return Err(Error::Config(format!(
                "epoch of {}s cannot hold {} subintervals",
                self.epoch_duration, self.y
            )));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.x as usize * self.y as usize
    }

    /// First timestamp of subinterval `s`; `s == y` gives the epoch end.
    pub fn subinterval_start(&self, s: u32) -> u64 {
        let d = self.epoch_duration as u128;
        let y = self.y as u128;
        self.epoch_start + ((s as u128 * d).div_ceil(y)) as u64
    }

    pub fn epoch_end(&self) -> u64 {
        self.epoch_start + self.epoch_duration
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CellRef {
    /// Location bucket.
    pub p: u32,
    /// Grid row of the time subinterval.
    pub q: u32,
    pub cid: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid {
    pub config: GridConfig,
    /// Row-major, index `q * x + p`.
    pub cell_id: Vec<u32>,
    /// `c_tuple[cid - 1]`.
    pub c_tuple: Vec<u64>,
    /// Real tuples per cell, same indexing as `cell_id`.
    pub cell_counts: Vec<u64>,
    row_of_sub: Vec<u32>,
    sub_of_row: Vec<u32>,
}

pub fn build_grid(config: GridConfig) -> Result<Grid> {
    config.validate()?;
    let cells = config.cells();
    let u = config.u;
    let mut rng = ChaCha20Rng::seed_from_u64(config.rng_seed);
    let mut cell_id: Vec<u32> = (1..=u).collect();
    while cell_id.len() < cells {
        cell_id.push(rng.gen_range(1..=u));
    }
    cell_id.shuffle(&mut rng);
    Grid::from_parts(config, cell_id)
}

/// Row of each subinterval: subintervals ranked by their grid hash (ties by
/// index), so the mapping is a bijection that does not preserve adjacency.
fn time_rows(y: u32) -> Vec<u32> {
    let mut subs: Vec<(u64, u32)> = (0..y)
        .map(|s| (grid_hash(&(s as u64).to_be_bytes(), u64::MAX), s))
        .collect();
    subs.sort();
    let mut row_of_sub = vec![0u32; y as usize];
    for (rank, (_, s)) in subs.into_iter().enumerate() {
        row_of_sub[s as usize] = rank as u32;
    }
    row_of_sub
}

impl Grid {
    /// Rebuilds a grid from a known cell-id layout (the enclave side, after
    /// decrypting the layout vector).
    pub fn from_parts(config: GridConfig, cell_id: Vec<u32>) -> Result<Grid> {
        config.validate()?;
        if cell_id.len() != config.cells() {
            return Err(Error::Config(format!(
                "layout has {} cells, expected {}",
                cell_id.len(),
                config.cells()
            )));
        }
        let mut seen = vec![false; config.u as usize];
        for &c in &cell_id {
            if c == 0 || c > config.u {
                return Err(Error::Config(format!("cell-id {c} outside 1..={}", config.u)));
            }
            seen[c as usize - 1] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("cell-id {} never allocated", missing + 1)));
        }
        let row_of_sub = time_rows(config.y);
        let mut sub_of_row = vec![0u32; row_of_sub.len()];
        for (s, &q) in row_of_sub.iter().enumerate() {
            sub_of_row[q as usize] = s as u32;
        }
        Ok(Grid {
            c_tuple: vec![0; config.u as usize],
            cell_counts: vec![0; cell_id.len()],
            config,
            cell_id,
            row_of_sub,
            sub_of_row,
        })
    }

    pub fn x(&self) -> u32 {
        self.config.x
    }

    pub fn y(&self) -> u32 {
        self.config.y
    }

    pub fn u(&self) -> u32 {
        self.config.u
    }

    pub fn check_time(&self, t: u64) -> Result<()> {
        let (start, end) = (self.config.epoch_start, self.config.epoch_end());
        if t < start || t >= end {
            return Err(Error::OutOfEpoch { time: t, start, end });
        }
        Ok(())
    }

    /// Subinterval index of `t`, in `[0, y)`.
    pub fn subinterval(&self, t: u64) -> Result<u32> {
        self.check_time(t)?;
        let off = (t - self.config.epoch_start) as u128;
        Ok((off * self.config.y as u128 / self.config.epoch_duration as u128) as u32)
    }

    /// First timestamp of subinterval `s`.
    pub fn subinterval_start(&self, s: u32) -> u64 {
        self.config.subinterval_start(s)
    }

    pub fn column(&self, location: &str) -> u32 {
        grid_hash(location.as_bytes(), self.config.x as u64) as u32
    }

    pub fn row_of_subinterval(&self, s: u32) -> u32 {
        self.row_of_sub[s as usize]
    }

    pub fn subinterval_of_row(&self, q: u32) -> u32 {
        self.sub_of_row[q as usize]
    }

    pub fn cell_index(&self, p: u32, q: u32) -> usize {
        q as usize * self.config.x as usize + p as usize
    }

    pub fn cell(&self, p: u32, q: u32) -> CellRef {
        CellRef { p, q, cid: self.cell_id[self.cell_index(p, q)] }
    }

    /// Cell of subinterval `s` and column `p`.
    pub fn cell_at_sub(&self, p: u32, s: u32) -> CellRef {
        self.cell(p, self.row_of_subinterval(s))
    }

    pub fn locate(&self, location: &str, t: u64) -> Result<CellRef> {
        let s = self.subinterval(t)?;
        Ok(self.cell_at_sub(self.column(location), s))
    }

    /// Increments the counter of the cell's cid and returns the new value.
    pub fn assign_counter(&mut self, cell: CellRef) -> u64 {
        let idx = self.cell_index(cell.p, cell.q);
        self.cell_counts[idx] += 1;
        let c = &mut self.c_tuple[cell.cid as usize - 1];
        *c += 1;
        *c
    }

    pub fn count_of_cid(&self, cid: u32) -> u64 {
        self.c_tuple[cid as usize - 1]
    }

    pub fn count_of_cell(&self, cell: CellRef) -> u64 {
        self.cell_counts[self.cell_index(cell.p, cell.q)]
    }

    pub fn total(&self) -> u64 {
        self.c_tuple.iter().sum()
    }

    /// Cells allocated to `cid`, in row-major order.
    pub fn cells_of_cid(&self, cid: u32) -> Vec<CellRef> {
        let x = self.config.x;
        self.cell_id
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == cid)
            .map(|(i, &c)| CellRef { p: i as u32 % x, q: i as u32 / x, cid: c })
            .collect()
    }
}
