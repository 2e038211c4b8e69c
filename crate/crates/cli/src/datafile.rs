//! Plaintext epoch files: one record per line,
//! `location<TAB>time<TAB>observation[<TAB>name=value...]`.
//! Blank lines and lines starting with `#` are skipped.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use concealer::record::PlainTuple;

use crate::error::{CliError, Result};

pub fn parse(text: &str, origin: &str) -> Result<Vec<PlainTuple>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| CliError::Parse { path: origin.to_string(), line: i + 1, msg };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 3 {
            return Err(err(format!("expected at least 3 tab-separated fields, got {}", f.len())));
        }
        let time = f[1].parse::<u64>().map_err(|_| err(format!("bad time {:?}", f[1])))?;
        let mut t = PlainTuple::new(f[0], time, f[2]);
        for extra in &f[3..] {
            let (k, v) = extra.split_once('=').ok_or_else(|| err(format!("extra {extra:?} is not name=value")))?;
            t = t.with_extra(k, v);
        }
        out.push(t);
    }
    Ok(out)
}

pub fn read(path: &Path) -> Result<Vec<PlainTuple>> {
    parse(&fs::read_to_string(path)?, &path.display().to_string())
}

pub fn format(rows: &[PlainTuple]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = write!(s, "{}\t{}\t{}", r.location, r.time, r.observation);
        for (k, v) in &r.extras {
            let _ = write!(s, "\t{k}={v}");
        }
        s.push('\n');
    }
    s
}
