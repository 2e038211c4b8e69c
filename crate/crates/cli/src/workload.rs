//! Seeded synthetic workloads: Zipf-skewed locations over a fixed number of
//! epochs, plus query samples drawn against the generated data.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use concealer::processor::{Aggregate, Column, Predicate, Query};
use concealer::record::PlainTuple;

use crate::error::{CliError, Result};

/// Fractions of point, range and aggregate queries; need not sum to one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryMix {
    pub point: f64,
    pub range: f64,
    pub aggregate: f64,
}

impl Default for QueryMix {
    fn default() -> Self {
        QueryMix { point: 0.5, range: 0.3, aggregate: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadSpec {
    pub n_rows: u64,
    pub n_locations: u32,
    pub n_observations: u32,
    pub epochs: u32,
    /// Zipf exponent of the location distribution; 0 is uniform.
    pub zipf_s: f64,
    pub epoch_start: u64,
    pub epoch_secs: u64,
    pub mix: QueryMix,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            n_rows: 10_000,
            n_locations: 100,
            n_observations: 500,
            epochs: 1,
            zipf_s: 1.0,
            epoch_start: 0,
            epoch_secs: 3600,
            mix: QueryMix::default(),
            seed: 0,
        }
    }
}

pub const EXTRA_COLUMN: &str = "bytes";

pub fn location_name(i: u32) -> String {
    format!("l{}", i + 1)
}

pub fn observation_name(i: u32) -> String {
    format!("o{}", i + 1)
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_locations == 0 || self.n_observations == 0 || self.epochs == 0 || self.epoch_secs == 0 {
            return Err(CliError::Usage("locations, observations, epochs and epoch length must be positive".into()));
        }
        if !(self.zipf_s.is_finite() && self.zipf_s >= 0.0) {
            return Err(CliError::Usage(format!("zipf exponent {} must be finite and nonnegative", self.zipf_s)));
        }
        let m = &self.mix;
        if [m.point, m.range, m.aggregate].iter().any(|f| !(f.is_finite() && *f >= 0.0))
            || m.point + m.range + m.aggregate <= 0.0
        {
            return Err(CliError::Usage("query mix fractions must be nonnegative and not all zero".into()));
        }
        Ok(())
    }

    pub fn epoch_bounds(&self, e: u32) -> (u64, u64) {
        let s = self.epoch_start + e as u64 * self.epoch_secs;
        (s, s + self.epoch_secs)
    }

    /// Rows of every epoch, each sorted by time. Epoch `e` gets
    /// `n_rows / epochs` rows, the first ones one extra of the remainder.
    pub fn generate(&self) -> Result<Vec<Vec<PlainTuple>>> {
        self.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        let weights: Vec<f64> = (1..=self.n_locations).map(|k| (k as f64).powf(-self.zipf_s)).collect();
        let loc = WeightedIndex::new(&weights).map_err(|e| CliError::Usage(e.to_string()))?;
        let per = self.n_rows / self.epochs as u64;
        let extra = self.n_rows % self.epochs as u64;
        let mut out = Vec::with_capacity(self.epochs as usize);
        for e in 0..self.epochs {
            let n = per + u64::from((e as u64) < extra);
            let (lo, hi) = self.epoch_bounds(e);
            let mut rows: Vec<PlainTuple> = (0..n)
                .map(|_| {
                    PlainTuple::new(
                        location_name(loc.sample(&mut rng) as u32),
                        rng.gen_range(lo..hi),
                        observation_name(rng.gen_range(0..self.n_observations)),
                    )
                    .with_extra(EXTRA_COLUMN, rng.gen_range(0..10_000u32).to_string())
                })
                .collect();
            rows.sort_by_key(|r| r.time);
            out.push(rows);
        }
        Ok(out)
    }

    /// Queries following the mix. Point queries hit an existing row half the
    /// time; ranges stay inside one epoch and span at most a quarter of it.
    pub fn queries(&self, data: &[Vec<PlainTuple>], n: usize, rng: &mut impl Rng) -> Vec<Query> {
        let m = self.mix;
        let total = m.point + m.range + m.aggregate;
        let all: Vec<&PlainTuple> = data.iter().flatten().collect();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let e = rng.gen_range(0..self.epochs);
            let (lo, hi) = self.epoch_bounds(e);
            let location = location_name(rng.gen_range(0..self.n_locations));
            let span = rng.gen_range(0..(self.epoch_secs / 4).max(1));
            let t0 = rng.gen_range(lo..hi - span.min(hi - lo - 1));
            let t1 = t0 + span;
            let roll = rng.gen::<f64>() * total;
            let q = if roll < m.point {
                match all.choose(rng) {
                    Some(r) if rng.gen_bool(0.5) => {
                        Query::new(Aggregate::Count, Predicate::Point { location: r.location.clone(), time: r.time })
                    }
                    _ => Query::new(Aggregate::Count, Predicate::Point { location, time: rng.gen_range(lo..hi) }),
                }
            } else if roll < m.point + m.range {
                Query::new(Aggregate::Count, Predicate::LocationRange { location, t0, t1 })
            } else {
                let col = Column::Extra(EXTRA_COLUMN.into());
                let agg = match rng.gen_range(0..5) {
                    0 => Aggregate::Sum(col),
                    1 => Aggregate::Min(col),
                    2 => Aggregate::Max(col),
                    3 => Aggregate::Avg(col),
                    _ => Aggregate::TopK(3),
                };
                let pred = if matches!(agg, Aggregate::TopK(_)) {
                    Predicate::TimeRange { t0, t1 }
                } else {
                    Predicate::LocationRange { location, t0, t1 }
                };
                Query::new(agg, pred)
            };
            out.push(q);
        }
        out
    }
}
