use std::ops::Range;

use crate::error::{Error, Result};

/// Bin size for ℓ-cell range queries: the largest sum of any location's ℓ
/// fullest cells. `columns[p]` holds the per-cell counts of location `p`.
///
/// Time rows are laid out by a hash, so a range of ℓ subintervals can land on
/// any ℓ cells of a column; the top-ℓ sum covers all of them.
pub fn ebpb_bin_size(columns: &[Vec<u64>], l: usize) -> u64 {
    columns
        .iter()
        .map(|col| {
            let mut c = col.clone();
            c.sort_unstable_by(|a, b| b.cmp(a));
            c.iter().take(l).sum::<u64>()
        })
        .max()
        .unwrap_or(0)
}

/// Fixed-length intervals over a value domain `[0, n)`, each padded to the
/// row count of the fullest interval.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntervalPlan {
    pub lambda: u64,
    pub intervals: Vec<Range<u64>>,
    pub totals: Vec<u64>,
    pub bin_size: u64,
}

pub fn interval_bins(n: u64, lambda: u64, counts: &[u64]) -> Result<IntervalPlan> {
    if lambda == 0 {
        return Err(Error::Config("interval length must be at least 1".into()));
    }
    if counts.len() as u64 != n {
        return Err(Error::Config(format!("{} counts for a domain of {n}", counts.len())));
    }
    let intervals: Vec<Range<u64>> =
        (0..n.div_ceil(lambda)).map(|i| i * lambda..((i + 1) * lambda).min(n)).collect();
    let totals: Vec<u64> = intervals
        .iter()
        .map(|r| counts[r.start as usize..r.end as usize].iter().sum())
        .collect();
    let bin_size = totals.iter().copied().max().unwrap_or(0);
    Ok(IntervalPlan { lambda, intervals, totals, bin_size })
}

impl IntervalPlan {
    /// Indexes of the intervals overlapping the inclusive value range `[lo, hi]`.
    pub fn intervals_for(&self, lo: u64, hi: u64) -> Range<usize> {
        debug_assert!(lo <= hi);
        (lo / self.lambda) as usize..(hi / self.lambda) as usize + 1
    }

    pub fn fake_count(&self, interval: usize) -> u64 {
        self.bin_size - self.totals[interval]
    }

    pub fn total_fake(&self) -> u64 {
        self.totals.iter().map(|t| self.bin_size - t).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Counts per location, T1..T4.
    fn table_three() -> Vec<Vec<u64>> {
        vec![vec![40, 60, 50, 40], vec![50, 40, 50, 30], vec![10, 45, 21, 2], vec![50, 48, 60, 9]]
    }

    #[test]
    fn table_three_sizes() {
        assert_eq!(ebpb_bin_size(&table_three(), 3), 158);
        assert_eq!(ebpb_bin_size(&table_three(), 1), 60);
        assert_eq!(ebpb_bin_size(&table_three(), 4), 190);
        assert_eq!(ebpb_bin_size(&[], 3), 0);
    }

    #[test]
    fn interval_cases() {
        let plan = interval_bins(12, 3, &[1; 12]).unwrap();
        let want: Vec<Range<u64>> = vec![0..3, 3..6, 6..9, 9..12];
        assert_eq!(plan.intervals, want);
        // Values are 0-based here: v1 is 0.
        assert_eq!(plan.intervals_for(0, 1), 0..1);
        assert_eq!(plan.intervals_for(1, 3), 0..2);
        assert_eq!(plan.intervals_for(2, 7), 0..3);
        let one = interval_bins(12, 12, &[1; 12]).unwrap();
        assert_eq!(one.intervals.len(), 1);
        assert!(interval_bins(3, 0, &[1; 3]).is_err());
    }

    #[test]
    fn ragged_last_interval() {
        let plan = interval_bins(5, 2, &[3, 1, 4, 1, 5]).unwrap();
        assert_eq!(plan.totals, vec![4, 5, 5]);
        assert_eq!(plan.bin_size, 5);
        assert_eq!(plan.total_fake(), 1);
    }

    fn subsets_max(col: &[u64], l: usize) -> u64 {
        let n = col.len();
        (0u32..1 << n)
            .filter(|m| m.count_ones() as usize == l.min(n))
            .map(|m| (0..n).filter(|i| m >> i & 1 == 1).map(|i| col[i]).sum())
            .max()
            .unwrap_or(0)
    }

    proptest! {
        #[test]
        fn bsize_covers_every_l_subset(cols in prop::collection::vec(prop::collection::vec(0u64..100, 1..9), 1..6), l in 1usize..9) {
            let want = cols.iter().map(|c| subsets_max(c, l)).max().unwrap();
            prop_assert_eq!(ebpb_bin_size(&cols, l), want);
        }

        #[test]
        fn intervals_partition_domain(n in 1u64..200, lambda in 1u64..30) {
            let plan = interval_bins(n, lambda, &vec![2; n as usize]).unwrap();
            prop_assert_eq!(plan.intervals.len() as u64, n.div_ceil(lambda));
            let mut next = 0;
            for r in &plan.intervals {
                prop_assert_eq!(r.start, next);
                next = r.end;
            }
            prop_assert_eq!(next, n);
            for lo in 0..n {
                let hi = (lo + lambda).min(n - 1);
                let touched = plan.intervals_for(lo, hi);
                prop_assert!(touched.len() <= 2);
                for i in touched {
                    prop_assert!(plan.intervals[i].start <= hi && plan.intervals[i].end > lo);
                }
            }
        }
    }
}
