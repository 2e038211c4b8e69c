//! Packing cell-ids into fixed-size bins and padding every bin to the same
//! number of rows with disjoint fake ids.

mod range;
mod superbin;

pub use range::{ebpb_bin_size, interval_bins, IntervalPlan};
pub use superbin::{build_super_bins, build_super_bins_in_order, SuperBinPlan};

use std::ops::Range;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PackInput {
    pub cid: u32,
    pub weight: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Packer {
    #[default]
    Ffd,
    Bfd,
}

impl Packer {
    pub fn pack(self, inputs: &[PackInput], capacity: u64) -> Result<Vec<Vec<PackInput>>> {
        match self {
            Packer::Ffd => ffd_pack(inputs, capacity),
            Packer::Bfd => bfd_pack(inputs, capacity),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bin {
    pub id: usize,
    pub members: Vec<u32>,
    pub real_count: u64,
    /// Half-open range of fake ids padding this bin.
    pub fake_range: Range<u64>,
    pub capacity: u64,
}

impl Bin {
    pub fn fake_count(&self) -> u64 {
        self.fake_range.end - self.fake_range.start
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinPlan {
    pub bins: Vec<Bin>,
    pub capacity: u64,
    pub total_fake: u64,
}

impl BinPlan {
    pub fn bin_of(&self, cid: u32) -> Option<&Bin> {
        self.bins.iter().find(|b| b.members.contains(&cid))
    }

    pub fn real_total(&self) -> u64 {
        self.bins.iter().map(|b| b.real_count).sum()
    }
}

fn sorted_desc(inputs: &[PackInput], capacity: u64) -> Result<Vec<PackInput>> {
    if capacity == 0 {
        return Err(Error::Config("bin capacity must be positive".into()));
    }
    if let Some(big) = inputs.iter().find(|i| i.weight > capacity) {
        return Err(Error::Capacity { weight: big.weight, capacity });
    }
    let mut items = inputs.to_vec();
    items.sort_by(|a, b| b.weight.cmp(&a.weight).then(a.cid.cmp(&b.cid)));
    Ok(items)
}

/// First-fit decreasing; equal weights are taken in ascending cid order.
pub fn ffd_pack(inputs: &[PackInput], capacity: u64) -> Result<Vec<Vec<PackInput>>> {
    let mut bins: Vec<(u64, Vec<PackInput>)> = Vec::new();
    for item in sorted_desc(inputs, capacity)? {
        match bins.iter_mut().find(|(fill, _)| fill + item.weight <= capacity) {
            Some((fill, members)) => {
                *fill += item.weight;
                members.push(item);
            }
            None => bins.push((item.weight, vec![item])),
        }
    }
    Ok(bins.into_iter().map(|(_, m)| m).collect())
}

/// Best-fit decreasing: each item goes to the fullest bin that still has room.
pub fn bfd_pack(inputs: &[PackInput], capacity: u64) -> Result<Vec<Vec<PackInput>>> {
    let mut bins: Vec<(u64, Vec<PackInput>)> = Vec::new();
    for item in sorted_desc(inputs, capacity)? {
        let best = bins
            .iter()
            .enumerate()
            .filter(|(_, (fill, _))| fill + item.weight <= capacity)
            .min_by_key(|(i, (fill, _))| (capacity - fill - item.weight, *i))
            .map(|(i, _)| i);
        match best {
            Some(i) => {
                bins[i].0 += item.weight;
                bins[i].1.push(item);
            }
            None => bins.push((item.weight, vec![item])),
        }
    }
    Ok(bins.into_iter().map(|(_, m)| m).collect())
}

/// Pads every bin to `capacity` rows. Fake ids start at 1 and each bin gets
/// its own consecutive range, so no id is shared between bins.
pub fn equi_size(bins: Vec<Vec<PackInput>>, capacity: u64) -> BinPlan {
    let mut next = 1u64;
    let mut out = Vec::with_capacity(bins.len());
    for (id, members) in bins.into_iter().enumerate() {
        let real_count: u64 = members.iter().map(|m| m.weight).sum();
        debug_assert!(real_count <= capacity);
        let fakes = capacity - real_count;
        out.push(Bin {
            id,
            members: members.iter().map(|m| m.cid).collect(),
            real_count,
            fake_range: next..next + fakes,
            capacity,
        });
        next += fakes;
    }
    BinPlan { bins: out, capacity, total_fake: next - 1 }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Certificate {
    pub bins_bound_ok: bool,
    pub fake_bound_ok: bool,
    /// Whether the strict bounds were asserted (`n >= 10·|b|`).
    pub strict: bool,
}

/// Checks the bin-count and fake-count upper bounds. Below `n = 10·|b|` one
/// bin of slack is allowed; from there on the strict bounds must hold.
pub fn certify_bounds(plan: &BinPlan, n: u64) -> Result<Certificate> {
    let b = plan.capacity;
    let bins = plan.bins.len() as u64;
    let fake = plan.total_fake;
    let strict = b > 0 && n >= 10 * b;
    let (bins_ok, fake_ok) = if strict {
        (bins * b <= 2 * n, 2 * fake <= 2 * n + b)
    } else {
        let bins_cap = if b == 0 { 0 } else { (2 * n).div_ceil(b) + 1 };
        (bins <= bins_cap, 2 * fake <= 2 * n + b + 2 * b)
    };
    if !bins_ok {
        return Err(Error::BoundViolation(format!("{bins} bins for n={n}, |b|={b}")));
    }
    if !fake_ok {
        return Err(Error::BoundViolation(format!("{fake} fakes for n={n}, |b|={b}")));
    }
    Ok(Certificate { bins_bound_ok: bins_ok, fake_bound_ok: fake_ok, strict })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use std::collections::BTreeSet;

    fn inputs(ws: &[u64]) -> Vec<PackInput> {
        ws.iter().enumerate().map(|(i, &w)| PackInput { cid: i as u32 + 1, weight: w }).collect()
    }

    fn cid_sets(bins: &[Vec<PackInput>]) -> Vec<BTreeSet<u32>> {
        bins.iter().map(|b| b.iter().map(|i| i.cid).collect()).collect()
    }

    #[test]
    fn packs_the_four_one_example() {
        let bins = ffd_pack(&inputs(&[79, 2, 73, 7, 7]), 79).unwrap();
        let sets = cid_sets(&bins);
        let want: Vec<BTreeSet<u32>> =
            vec![[1].into(), [3, 2].into(), [5, 4].into()];
        assert_eq!(sets, want);
        let plan = equi_size(bins, 79);
        let fakes: Vec<u64> = plan.bins.iter().map(Bin::fake_count).collect();
        assert_eq!(fakes, vec![0, 4, 65]);
        assert_eq!(plan.total_fake, 69);
        let cert = certify_bounds(&plan, 168).unwrap();
        assert!(cert.bins_bound_ok && cert.fake_bound_ok && !cert.strict);
    }

    #[test]
    fn table_one_counts() {
        let plan = equi_size(ffd_pack(&inputs(&[4, 1, 1]), 4).unwrap(), 4);
        assert_eq!(plan.bins.len(), 2);
        assert_eq!(plan.bins[0].members, vec![1]);
        assert_eq!(plan.bins[1].members, vec![2, 3]);
        assert_eq!(plan.bins[1].fake_range, 1..3);
        assert_eq!(plan.total_fake, 2);
    }

    #[test]
    fn single_and_full_bins() {
        assert_eq!(ffd_pack(&inputs(&[5]), 9).unwrap().len(), 1);
        let plan = equi_size(ffd_pack(&inputs(&[3, 3, 3]), 3).unwrap(), 3);
        assert_eq!(plan.total_fake, 0);
        assert!(ffd_pack(&[], 3).unwrap().is_empty());
        let empty = equi_size(vec![], 3);
        assert_eq!((empty.bins.len(), empty.total_fake), (0, 0));
        certify_bounds(&empty, 0).unwrap();
    }

    #[test]
    fn zero_weights_are_placed() {
        let bins = ffd_pack(&inputs(&[0, 4, 0]), 4).unwrap();
        let all: BTreeSet<u32> = cid_sets(&bins).into_iter().flatten().collect();
        assert_eq!(all, [1, 2, 3].into());
        assert_eq!(bins.len(), 1);
    }

    #[test]
    fn capacity_error() {
        assert!(matches!(ffd_pack(&inputs(&[5, 9]), 8), Err(Error::Capacity { weight: 9, .. })));
        assert!(matches!(bfd_pack(&inputs(&[9]), 8), Err(Error::Capacity { .. })));
    }

    #[test]
    fn bfd_prefers_tightest_bin() {
        // 6 and 5 open two bins; 4 fits both (room 4 and 5) and goes to the fuller.
        let bins = bfd_pack(&inputs(&[6, 5, 4]), 10).unwrap();
        assert_eq!(cid_sets(&bins), vec![[1, 3].into(), [2].into()]);
        let ffd = ffd_pack(&inputs(&[6, 5, 4]), 10).unwrap();
        assert_eq!(cid_sets(&ffd), vec![[1, 3].into(), [2].into()]);
        let bins = bfd_pack(&inputs(&[5, 4, 3, 1]), 6).unwrap();
        assert_eq!(cid_sets(&bins), vec![[1, 4].into(), [2].into(), [3].into()]);
    }

    #[test]
    fn random_instances_half_full_and_bounded() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for round in 0..500 {
            let k = rng.gen_range(1..60);
            let ws: Vec<u64> = (0..k).map(|_| rng.gen_range(0..100)).collect();
            let cap = ws.iter().copied().max().unwrap().max(1) + rng.gen_range(0..50);
            let packer = if round % 2 == 0 { Packer::Ffd } else { Packer::Bfd };
            let bins = packer.pack(&inputs(&ws), cap).unwrap();
            let n: u64 = ws.iter().sum();
            assert!((bins.len() as u64) * cap <= 2 * n + cap);
            let fills: Vec<u64> = bins.iter().map(|b| b.iter().map(|i| i.weight).sum()).collect();
            let under_half = fills.iter().filter(|&&f| 2 * f < cap).count();
            assert!(under_half <= 1, "{fills:?} cap {cap}");
            let plan = equi_size(bins, cap);
            for b in &plan.bins {
                assert_eq!(b.real_count + b.fake_count(), cap);
            }
        }
    }

    proptest! {
        #[test]
        fn packing_is_complete_and_ranges_disjoint(ws in prop::collection::vec(0u64..50, 1..40), extra in 0u64..30, bfd: bool) {
            let cap = ws.iter().copied().max().unwrap().max(1) + extra;
            let packer = if bfd { Packer::Bfd } else { Packer::Ffd };
            let plan = equi_size(packer.pack(&inputs(&ws), cap).unwrap(), cap);
            let mut cids: Vec<u32> = plan.bins.iter().flat_map(|b| b.members.clone()).collect();
            cids.sort();
            prop_assert_eq!(cids, (1..=ws.len() as u32).collect::<Vec<_>>());
            let mut next = 1;
            for b in &plan.bins {
                prop_assert!(b.real_count <= cap);
                prop_assert_eq!(b.fake_range.start, next);
                next = b.fake_range.end;
            }
            prop_assert_eq!(plan.total_fake, next - 1);
            prop_assert!(certify_bounds(&plan, ws.iter().sum()).is_ok());
        }
    }
}
