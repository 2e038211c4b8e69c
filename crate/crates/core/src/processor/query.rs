use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::record::PlainTuple;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Predicate {
    Point { location: String, time: u64 },
    LocationRange { location: String, t0: u64, t1: u64 },
    TimeRange { t0: u64, t1: u64 },
    ObservationRange { observation: String, t0: u64, t1: u64 },
    LocationObservationRange { location: String, observation: String, t0: u64, t1: u64 },
}

impl Predicate {
    /// Inclusive time bounds.
    pub fn time_range(&self) -> (u64, u64) {
        match self {
            Predicate::Point { time, .. } => (*time, *time),
            Predicate::LocationRange { t0, t1, .. }
            | Predicate::TimeRange { t0, t1 }
            | Predicate::ObservationRange { t0, t1, .. }
            | Predicate::LocationObservationRange { t0, t1, .. } => (*t0, *t1),
        }
    }

    pub fn location(&self) -> Option<&str> {
        match self {
            Predicate::Point { location, .. }
            | Predicate::LocationRange { location, .. }
            | Predicate::LocationObservationRange { location, .. } => Some(location),
            _ => None,
        }
    }

    pub fn observation(&self) -> Option<&str> {
        match self {
            Predicate::ObservationRange { observation, .. }
            | Predicate::LocationObservationRange { observation, .. } => Some(observation),
            _ => None,
        }
    }

    pub fn matches(&self, t: &PlainTuple) -> bool {
        let (t0, t1) = self.time_range();
        t.time >= t0
            && t.time <= t1
            && self.location().is_none_or(|l| l == t.location)
            && self.observation().is_none_or(|o| o == t.observation)
    }

    pub fn validate(&self) -> Result<()> {
        let (t0, t1) = self.time_range();
        if t0 > t1 {
            return Err(Error::InvalidQuery(format!("empty time range [{t0}, {t1}]")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Column {
    Time,
    Extra(String),
}

impl Column {
    pub fn value(&self, t: &PlainTuple) -> Result<i64> {
        match self {
            Column::Time => i64::try_from(t.time).map_err(|_| Error::InvalidQuery("time overflows i64".into())),
            Column::Extra(name) => {
                let v = t
                    .extra(name)
                    .ok_or_else(|| Error::InvalidQuery(format!("row has no column {name:?}")))?;
                v.parse().map_err(|_| Error::InvalidQuery(format!("column {name:?} value {v:?} is not an integer")))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Aggregate {
    Count,
    Sum(Column),
    Min(Column),
    Max(Column),
    Avg(Column),
    /// Locations with the most matching rows.
    TopK(usize),
    Select,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub aggregate: Aggregate,
    pub predicate: Predicate,
}

impl Query {
    pub fn new(aggregate: Aggregate, predicate: Predicate) -> Self {
        Query { aggregate, predicate }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Method {
    /// Bin-packing based retrieval; ranges fetch the union of the covered
    /// cells' bins.
    #[default]
    Bpb,
    /// One bin sized by the top-ℓ cells of any location.
    Ebpb,
    /// Fixed-length time intervals.
    Winsec,
    /// Bins plus random decoys per epoch, with re-encryption afterwards.
    MultiEpoch,
    /// Every row of every touched epoch. A baseline, hides nothing but
    /// the predicate.
    FullScan,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct QueryOptions {
    pub method: Method,
    pub oblivious: bool,
    pub verify: bool,
    pub super_bins: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Value {
    Count(u64),
    Sum(i128),
    Min(Option<i64>),
    Max(Option<i64>),
    Avg { sum: i128, count: u64 },
    TopK(Vec<(String, u64)>),
    Rows(Vec<PlainTuple>),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: &Option<i64>| v.map_or_else(|| "none".to_string(), |v| v.to_string());
        match self {
            Value::Count(n) => write!(f, "count={n}"),
            Value::Sum(s) => write!(f, "sum={s}"),
            Value::Min(v) => write!(f, "min={}", opt(v)),
            Value::Max(v) => write!(f, "max={}", opt(v)),
            Value::Avg { count: 0, .. } => write!(f, "avg=none"),
            Value::Avg { sum, count } => write!(f, "avg={:.6}", *sum as f64 / *count as f64),
            Value::TopK(v) => {
                let parts: Vec<String> = v.iter().map(|(l, c)| format!("{l}:{c}")).collect();
                write!(f, "topk={}", parts.join(","))
            }
            Value::Rows(r) => write!(f, "rows={}", r.len()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryResult {
    pub value: Value,
    pub rows_fetched: u64,
    /// `None` when verification was not requested.
    pub verified: Option<bool>,
}

/// Matching rows collected across epochs. Counting never needs the rows
/// themselves, so they are only kept for the other aggregates.
#[derive(Debug, Default)]
pub(crate) struct Accumulator {
    pub count: u64,
    pub rows: Vec<PlainTuple>,
}

impl Accumulator {
    pub fn finish(mut self, agg: &Aggregate) -> Result<Value> {
        Ok(match agg {
            Aggregate::Count => Value::Count(self.count),
            Aggregate::Sum(c) => Value::Sum(self.values(c)?.into_iter().map(i128::from).sum()),
            Aggregate::Min(c) => Value::Min(self.values(c)?.into_iter().min()),
            Aggregate::Max(c) => Value::Max(self.values(c)?.into_iter().max()),
            Aggregate::Avg(c) => {
                let v = self.values(c)?;
                Value::Avg { sum: v.iter().copied().map(i128::from).sum(), count: v.len() as u64 }
            }
            Aggregate::TopK(k) => {
                let mut per: BTreeMap<&str, u64> = BTreeMap::new();
                for r in &self.rows {
                    *per.entry(r.location.as_str()).or_default() += 1;
                }
                let mut v: Vec<(String, u64)> = per.into_iter().map(|(l, c)| (l.to_string(), c)).collect();
                v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                v.truncate(*k);
                Value::TopK(v)
            }
            Aggregate::Select => {
                self.rows.sort_by(|a, b| (a.time, &a.location, &a.observation, &a.extras).cmp(&(b.time, &b.location, &b.observation, &b.extras)));
                Value::Rows(self.rows)
            }
        })
    }

    fn values(&self, c: &Column) -> Result<Vec<i64>> {
        self.rows.iter().map(|r| c.value(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<PlainTuple> {
        vec![
            PlainTuple::new("b", 5, "o1").with_extra("p", "10"),
            PlainTuple::new("a", 3, "o2").with_extra("p", "-4"),
            PlainTuple::new("b", 9, "o1").with_extra("p", "7"),
        ]
    }

    fn acc() -> Accumulator {
        Accumulator { count: 3, rows: rows() }
    }

    #[test]
    fn aggregates() {
        let p = Column::Extra("p".into());
        assert_eq!(acc().finish(&Aggregate::Count).unwrap(), Value::Count(3));
        assert_eq!(acc().finish(&Aggregate::Sum(p.clone())).unwrap(), Value::Sum(13));
        assert_eq!(acc().finish(&Aggregate::Min(p.clone())).unwrap(), Value::Min(Some(-4)));
        assert_eq!(acc().finish(&Aggregate::Max(Column::Time)).unwrap(), Value::Max(Some(9)));
        assert_eq!(acc().finish(&Aggregate::Avg(p)).unwrap(), Value::Avg { sum: 13, count: 3 });
        assert_eq!(
            acc().finish(&Aggregate::TopK(5)).unwrap(),
            Value::TopK(vec![("b".into(), 2), ("a".into(), 1)])
        );
        match acc().finish(&Aggregate::Select).unwrap() {
            Value::Rows(r) => assert_eq!(r.iter().map(|t| t.time).collect::<Vec<_>>(), vec![3, 5, 9]),
            v => panic!("{v:?}"),
        }
    }

    #[test]
    fn empty_matches() {
        let e = || Accumulator::default();
        assert_eq!(e().finish(&Aggregate::Sum(Column::Time)).unwrap(), Value::Sum(0));
        assert_eq!(e().finish(&Aggregate::Min(Column::Time)).unwrap(), Value::Min(None));
        assert_eq!(e().finish(&Aggregate::Max(Column::Time)).unwrap(), Value::Max(None));
        assert_eq!(e().finish(&Aggregate::Avg(Column::Time)).unwrap().to_string(), "avg=none");
        assert!(Accumulator { count: 1, rows: vec![PlainTuple::new("a", 1, "o")] }
            .finish(&Aggregate::Sum(Column::Extra("x".into())))
            .is_err());
    }

    #[test]
    fn predicates() {
        let t = PlainTuple::new("l1", 10, "o1");
        assert!(Predicate::Point { location: "l1".into(), time: 10 }.matches(&t));
        assert!(!Predicate::Point { location: "l1".into(), time: 11 }.matches(&t));
        assert!(Predicate::TimeRange { t0: 10, t1: 10 }.matches(&t));
        assert!(!Predicate::ObservationRange { observation: "o2".into(), t0: 0, t1: 20 }.matches(&t));
        assert!(Predicate::LocationObservationRange { location: "l1".into(), observation: "o1".into(), t0: 0, t1: 20 }
            .matches(&t));
        assert!(Predicate::TimeRange { t0: 5, t1: 4 }.validate().is_err());
    }

    #[test]
    fn display() {
        assert_eq!(Value::Count(1).to_string(), "count=1");
        assert_eq!(Value::Avg { sum: 3, count: 2 }.to_string(), "avg=1.500000");
        assert_eq!(Value::TopK(vec![("l1".into(), 2)]).to_string(), "topk=l1:2");
    }
}
