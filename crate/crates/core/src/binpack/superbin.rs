use crate::error::{Error, Result};

/// Bins grouped into `f` equally sized super-bins.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuperBinPlan {
    pub f: usize,
    /// Bin indexes per super-bin, in assignment order.
    pub assignment: Vec<Vec<usize>>,
    /// Accumulated unique-value count per super-bin.
    pub totals: Vec<u64>,
}

impl SuperBinPlan {
    pub fn super_of(&self, bin: usize) -> Option<usize> {
        self.assignment.iter().position(|s| s.contains(&bin))
    }

    /// Fetches per super-bin when every unique value is queried once.
    pub fn uniform_fetch_counts(&self, counts: &[u64]) -> Vec<u64> {
        let mut fetched = vec![0u64; self.f];
        for (bin, &c) in counts.iter().enumerate() {
            if let Some(s) = self.super_of(bin) {
                fetched[s] += c;
            }
        }
        fetched
    }
}

/// Groups bins by descending unique-value count (ties by bin index).
pub fn build_super_bins(counts: &[u64], f: usize) -> Result<SuperBinPlan> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    build_super_bins_in_order(&order, counts, f)
}

/// Same greedy assignment, with the caller choosing the order among bins of
/// equal count. `order` must list every bin once, by non-increasing count.
pub fn build_super_bins_in_order(order: &[usize], counts: &[u64], f: usize) -> Result<SuperBinPlan> {
    let n = counts.len();
    if f == 0 || n % f != 0 {
        return Err(Error::Divisibility { bins: n, f });
    }
    let mut seen = vec![false; n];
    for &b in order {
        if b >= n || std::mem::replace(&mut seen[b], true) {
            return Err(Error::Config(format!("bin order repeats or exceeds bin {b}")));
        }
    }
    if order.len() != n || order.windows(2).any(|w| counts[w[0]] < counts[w[1]]) {
        return Err(Error::Config("bin order must cover all bins by non-increasing count".into()));
    }

    let mut assignment: Vec<Vec<usize>> = vec![Vec::with_capacity(n / f); f];
    let mut totals = vec![0u64; f];
    for (i, &bin) in order.iter().enumerate() {
        let round = i / f;
        // Candidates are super-bins that have not yet received a bin this round.
        let target = (0..f)
            .filter(|&s| assignment[s].len() == round)
            .min_by_key(|&s| (totals[s], s))
            .expect("a round never has more bins than super-bins");
        assignment[target].push(bin);
        totals[target] += counts[bin];
    }
    Ok(SuperBinPlan { f, assignment, totals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const COUNTS: [u64; 12] = [1, 2, 9, 1, 2, 10, 1, 1, 1, 8, 2, 7];

    #[test]
    fn worked_example_order() {
        let order: Vec<usize> = [6, 3, 10, 12, 11, 2, 5, 7, 1, 9, 4, 8].iter().map(|b| b - 1).collect();
        let plan = build_super_bins_in_order(&order, &COUNTS, 4).unwrap();
        let named: Vec<Vec<usize>> =
            plan.assignment.iter().map(|s| s.iter().map(|b| b + 1).collect()).collect();
        assert_eq!(named, vec![vec![6, 7, 4], vec![3, 5, 8], vec![10, 2, 9], vec![12, 11, 1]]);
        assert_eq!(plan.uniform_fetch_counts(&COUNTS), vec![12, 12, 11, 10]);
        assert_eq!(plan.super_of(5), Some(0));
    }

    #[test]
    fn default_order_same_profile() {
        let plan = build_super_bins(&COUNTS, 4).unwrap();
        let mut t = plan.totals.clone();
        t.sort_unstable_by(|a, b| b.cmp(a));
        assert_eq!(t, vec![12, 12, 11, 10]);
        assert!(plan.assignment.iter().all(|s| s.len() == 3));
        let firsts: Vec<usize> = plan.assignment.iter().map(|s| s[0] + 1).collect();
        assert_eq!(firsts, vec![6, 3, 10, 12]);
    }

    #[test]
    fn errors() {
        assert!(matches!(build_super_bins(&COUNTS, 5), Err(Error::Divisibility { bins: 12, f: 5 })));
        assert!(build_super_bins(&COUNTS, 0).is_err());
        assert!(build_super_bins_in_order(&[0, 1], &[1, 2], 1).is_err());
        assert!(build_super_bins_in_order(&[1, 1], &[1, 2], 1).is_err());
    }

    #[test]
    fn degenerate_f() {
        let plan = build_super_bins(&COUNTS, 12).unwrap();
        assert!(plan.assignment.iter().all(|s| s.len() == 1));
        let plan = build_super_bins(&[3; 8], 4).unwrap();
        assert!(plan.totals.iter().all(|&t| t == 6));
    }

    proptest! {
        #[test]
        fn balanced_within_one_bin(counts in prop::collection::vec(0u64..50, 1..10), f in 1usize..5) {
            let mut counts = counts;
            while counts.len() % f != 0 {
                counts.push(0);
            }
            let plan = build_super_bins(&counts, f).unwrap();
            let max = *plan.totals.iter().max().unwrap();
            let min = *plan.totals.iter().min().unwrap();
            prop_assert!(max - min <= *counts.iter().max().unwrap());
            prop_assert_eq!(plan.uniform_fetch_counts(&counts), plan.totals.clone());
            let mut all: Vec<usize> = plan.assignment.concat();
            all.sort();
            prop_assert_eq!(all, (0..counts.len()).collect::<Vec<_>>());
        }
    }
}
