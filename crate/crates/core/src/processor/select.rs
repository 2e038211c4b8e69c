//! Trapdoor selection, filtering and chain verification.

use std::collections::HashSet;

use subtle::{Choice, ConditionallySelectable, ConstantTimeEq};

use super::state::{FetchPlan, Group, GroupTag, Slot, Unit};
use crate::crypto::digest_eq;
use crate::encryptor::tag_of;
use crate::meta::TagTriple;
use crate::oblivious::{count_flags, ct_lt, flag_matches, partition_by_flag, record, Event, Trace};
use crate::package::EncryptedRow;

/// Candidate count of the oblivious selection for these units.
pub fn oblivious_candidate_count(units: &[Unit], c_tuple: &[u64]) -> usize {
    let cmax = units.iter().map(|u| u.cids.len()).max().unwrap_or(0);
    let fmax = units.iter().map(|u| u.fakes.len()).max().unwrap_or(0);
    let mx = c_tuple.iter().copied().max().unwrap_or(0) as usize;
    cmax * mx + fmax
}

/// Retrievals for `units[target]`, chosen without branching on the target.
///
/// Every unit is scanned; the target's cid list and fake ids are copied out
/// through selects. Then `cmax × max-count` real candidates and `fmax` fake
/// candidates are flagged, sorted flagged-first by a sorting network and cut
/// to the flagged prefix. Padding candidates carry cid 0.
pub fn oblivious_trapdoor_slots(
    units: &[Unit],
    c_tuple: &[u64],
    target: usize,
    mut trace: Option<&mut Trace>,
) -> Vec<Slot> {
    let cmax = units.iter().map(|u| u.cids.len()).max().unwrap_or(0);
    let fmax = units.iter().map(|u| u.fakes.len()).max().unwrap_or(0);
    let mx = c_tuple.iter().copied().max().unwrap_or(0);

    let mut cids = vec![0u32; cmax];
    let mut fakes = vec![0u64; fmax];
    let mut n_fakes = 0u64;
    for (ui, u) in units.iter().enumerate() {
        let hit = (ui as u64).ct_eq(&(target as u64));
        for (i, slot) in cids.iter_mut().enumerate() {
            record(&mut trace, Event::Select(ui as u32, i as u32));
            slot.conditional_assign(&u.cids.get(i).copied().unwrap_or(0), hit);
        }
        for (j, slot) in fakes.iter_mut().enumerate() {
            record(&mut trace, Event::Select(ui as u32, (cmax + j) as u32));
            slot.conditional_assign(&u.fakes.get(j).copied().unwrap_or(0), hit);
        }
        n_fakes.conditional_assign(&(u.fakes.len() as u64), hit);
    }
    let counts: Vec<u64> = cids
        .iter()
        .map(|&cid| {
            let mut n = 0u64;
            for (k, &c) in c_tuple.iter().enumerate() {
                n.conditional_assign(&c, cid.ct_eq(&(k as u32 + 1)));
            }
            n
        })
        .collect();

    let mut slots = Vec::with_capacity(cmax * mx as usize + fmax);
    let mut flags: Vec<Choice> = Vec::with_capacity(slots.capacity());
    for (i, &cid) in cids.iter().enumerate() {
        for j in 1..=mx {
            slots.push(Slot::Real { cid, counter: j });
            flags.push(ct_lt(j - 1, counts[i]));
        }
    }
    for (j, &id) in fakes.iter().enumerate() {
        slots.push(Slot::Fake(id));
        flags.push(ct_lt(j as u64, n_fakes));
    }
    let keep = count_flags(&flags);
    let order = partition_by_flag(&flags, trace);
    order[..keep].iter().map(|&i| slots[i]).collect()
}

/// One column of fetched rows and the filters it must match.
pub struct FilterCheck<'a> {
    pub column: Vec<&'a [u8]>,
    pub filters: Vec<&'a [u8]>,
}

/// Positions of rows matching every check, in original order. Each row is
/// compared with every filter and the flags are partitioned by a sorting
/// network; only the flagged prefix is returned.
pub fn oblivious_filter(checks: &[FilterCheck<'_>], n_rows: usize, mut trace: Option<&mut Trace>) -> Vec<usize> {
    let mut flags = vec![Choice::from(1u8); n_rows];
    for c in checks {
        debug_assert_eq!(c.column.len(), n_rows);
        let f = flag_matches(&c.column, &c.filters, trace.as_deref_mut());
        for (a, b) in flags.iter_mut().zip(f) {
            *a &= b;
        }
    }
    let keep = count_flags(&flags);
    let mut order = partition_by_flag(&flags, trace);
    order.truncate(keep);
    order
}

/// Same result as [`oblivious_filter`], with hash lookups.
pub fn plain_filter(checks: &[FilterCheck<'_>], n_rows: usize) -> Vec<usize> {
    let sets: Vec<HashSet<&[u8]>> = checks.iter().map(|c| c.filters.iter().copied().collect()).collect();
    (0..n_rows)
        .filter(|&i| checks.iter().zip(&sets).all(|(c, s)| s.contains(c.column[i])))
        .collect()
}

/// True iff every group is complete and its chains equal the tag.
pub fn verify_bins<'a>(groups: impl IntoIterator<Item = (TagTriple, &'a [Option<EncryptedRow>])>) -> bool {
    let mut ok = true;
    for (want, rows) in groups {
        let Some(rows) = rows.iter().map(Option::as_ref).collect::<Option<Vec<_>>>() else {
            return false;
        };
        let got = tag_of(rows);
        ok &= digest_eq(&got.hl, &want.hl) & digest_eq(&got.ho, &want.ho) & digest_eq(&got.hr, &want.hr);
    }
    ok
}

impl FetchPlan {
    /// Groups runs of equal cids, which the oblivious selection emits in
    /// counter order.
    pub(crate) fn from_slots(slots: Vec<Slot>) -> Self {
        let mut groups: Vec<Group> = Vec::new();
        for (i, s) in slots.iter().enumerate() {
            if let Slot::Real { cid, .. } = *s {
                match groups.last_mut() {
                    Some(g) if g.tag == GroupTag::Cid(cid) && g.slots.end == i => g.slots.end = i + 1,
                    _ => groups.push(Group { tag: GroupTag::Cid(cid), slots: i..i + 1 }),
                }
            }
        }
        FetchPlan { slots, groups }
    }
}
