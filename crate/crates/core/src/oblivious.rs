//! Data-independent building blocks: a bitonic sorting network and
//! branch-free flag computation. Every loop bound and every index touched
//! depends only on input sizes; secret-dependent choices go through
//! `subtle` selects.
//!
//! An optional [`Trace`] records the sequence of operations so tests can
//! check that it is identical for inputs of the same shape.

use subtle::{Choice, ConditionallySelectable, ConstantTimeEq, ConstantTimeLess};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Event {
    /// Compare-exchange of two positions.
    Cmp(u32, u32),
    /// Row `r` compared with filter `f`.
    Match(u32, u32),
    /// Candidate `i` selected from unit `u`.
    Select(u32, u32),
}

pub type Trace = Vec<Event>;

pub(crate) fn record(trace: &mut Option<&mut Trace>, e: Event) {
    if let Some(t) = trace.as_deref_mut() {
        t.push(e);
    }
}

fn compare_exchange(keys: &mut [u64], a: usize, b: usize, ascending: bool, trace: &mut Option<&mut Trace>) {
    record(trace, Event::Cmp(a as u32, b as u32));
    let (ka, kb) = (keys[a], keys[b]);
    let out_of_order = if ascending { kb.ct_lt(&ka) } else { ka.ct_lt(&kb) };
    let (mut x, mut y) = (ka, kb);
    u64::conditional_swap(&mut x, &mut y, out_of_order);
    keys[a] = x;
    keys[b] = y;
}

/// In-place ascending bitonic sort; `keys.len()` must be a power of two.
fn bitonic(keys: &mut [u64], trace: &mut Option<&mut Trace>) {
    let n = keys.len();
    debug_assert!(n.is_power_of_two());
    let mut k = 2;
    while k <= n {
        let mut j = k / 2;
        while j > 0 {
            for i in 0..n {
                let l = i ^ j;
                if l > i {
                    compare_exchange(keys, i, l, i & k == 0, trace);
                }
            }
            j /= 2;
        }
        k *= 2;
    }
}

/// Sorts `keys` ascending with a data-independent network.
pub fn oblivious_sort(keys: &[u64], mut trace: Option<&mut Trace>) -> Vec<u64> {
    if keys.is_empty() {
        return vec![];
    }
    let n = keys.len().next_power_of_two();
    let mut buf = keys.to_vec();
    buf.resize(n, u64::MAX);
    bitonic(&mut buf, &mut trace);
    buf.truncate(keys.len());
    buf
}

/// Permutation that moves every flagged position (v = 1) in front of the
/// unflagged ones, keeping the original order inside each group.
pub fn partition_by_flag(flags: &[Choice], trace: Option<&mut Trace>) -> Vec<usize> {
    let keys: Vec<u64> = flags
        .iter()
        .enumerate()
        .map(|(i, v)| {
            // (1 - v) << 32 | i
            let hi = u64::conditional_select(&(1u64 << 32), &0, *v);
            hi | i as u64
        })
        .collect();
    oblivious_sort(&keys, trace).into_iter().map(|k| (k & 0xFFFF_FFFF) as usize).collect()
}

/// Number of set flags, without branching on them.
pub fn count_flags(flags: &[Choice]) -> usize {
    flags.iter().map(|v| v.unwrap_u8() as usize).sum()
}

/// Little-endian words of `b`, zero-padded, with the length in front so
/// values differing only in trailing zeros stay distinct.
fn words(b: &[u8]) -> Vec<u64> {
    let mut out = Vec::with_capacity(1 + b.len().div_ceil(8));
    out.push(b.len() as u64);
    out.extend(b.chunks(8).map(|c| {
        let mut w = [0u8; 8];
        w[..c.len()].copy_from_slice(c);
        u64::from_le_bytes(w)
    }));
    out
}

/// Branch-free equality of two word vectors. Lengths are public.
fn words_eq(a: &[u64], b: &[u64]) -> Choice {
    if a.len() != b.len() {
        return Choice::from(0);
    }
    let diff = a.iter().zip(b).fold(0u64, |d, (x, y)| d | (x ^ y));
    diff.ct_eq(&0)
}

/// One flag per row: whether `rows[r]` equals any of `filters`. Every row is
/// compared with every filter; once a row has matched, later results are
/// folded in through a select that keeps the flag set.
pub fn flag_matches(rows: &[&[u8]], filters: &[&[u8]], mut trace: Option<&mut Trace>) -> Vec<Choice> {
    let filters: Vec<Vec<u64>> = filters.iter().map(|f| words(f)).collect();
    rows.iter()
        .enumerate()
        .map(|(r, row)| {
            let row = words(row);
            let mut v = 0u8;
            for (f, filt) in filters.iter().enumerate() {
                record(&mut trace, Event::Match(r as u32, f as u32));
                v = u8::conditional_select(&v, &1, words_eq(&row, filt));
            }
            Choice::from(v)
        })
        .collect()
}

/// Branch-free `a < b` for unsigned values.
pub fn ct_lt(a: u64, b: u64) -> Choice {
    a.ct_lt(&b)
}
