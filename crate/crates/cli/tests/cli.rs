//! End-to-end runs of the binary on the six-row fixture.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use concealer::store::FileStore;

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/table1.tsv");
const HEADERS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/bench_headers.csv");

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Self {
        let env = Env { dir: tempfile::tempdir().unwrap() };
        let out = env.run(&["keygen", "--seed", "7", "--out", env.key().to_str().unwrap()]);
        assert!(out.status.success());
        env
    }

    fn key(&self) -> PathBuf {
        self.dir.path().join("master.key")
    }

    fn store(&self) -> PathBuf {
        self.dir.path().join("store")
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_concealer"))
            .args(args)
            .env("CONCEALER_MASTER_KEY_FILE", self.key())
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    /// Ingests with the fixture grid; flags in `extra` replace the defaults.
    fn ingest(&self, data: &Path, extra: &[&str]) -> String {
        let store = self.store();
        let mut args = vec!["ingest", "--data", data.to_str().unwrap(), "--store", store.to_str().unwrap()];
        for (flag, value) in [("--grid", "2,2,3"), ("--epoch-start", "1000"), ("--epoch-secs", "60"), ("--seed", "6")] {
            if !extra.contains(&flag) {
                args.extend_from_slice(&[flag, value]);
            }
        }
        args.extend_from_slice(extra);
        self.ok(&args)
    }

    fn query(&self, extra: &[&str]) -> Output {
        let store = self.store();
        let mut args = vec!["query", "--store", store.to_str().unwrap()];
        args.extend_from_slice(extra);
        self.run(&args)
    }

    /// Output with the wall-clock field dropped.
    fn answer(&self, extra: &[&str]) -> String {
        let out = self.query(extra);
        assert!(out.status.success(), "{extra:?}: {}", String::from_utf8_lossy(&out.stderr));
        let text = String::from_utf8(out.stdout).unwrap();
        text.split_whitespace().filter(|w| !w.starts_with("ms=")).collect::<Vec<_>>().join(" ")
    }
}

fn fields(line: &str) -> Vec<&str> {
    line.split_whitespace().collect()
}

#[test]
fn ingest_reports_worked_plan() {
    let env = Env::new();
    let out = env.ingest(Path::new(FIXTURE), &[]);
    let f = fields(&out);
    for want in ["eid=1", "n_real=6", "n_fake=2", "capacity=4", "bins=2", "bins_bound=ok", "fake_bound=ok"] {
        assert!(f.contains(&want), "{want} missing from {out}");
    }
    assert!(f.iter().any(|w| w.starts_with("rows_per_min=")));
}

#[test]
fn worked_point_query() {
    let env = Env::new();
    env.ingest(Path::new(FIXTURE), &[]);
    assert_eq!(env.answer(&["--loc", "l2", "--t0", "1040", "--verify", "on"]), "count=1 rows_fetched=4 verified=true");
    assert_eq!(
        env.answer(&["--loc", "l2", "--t0", "1040", "--oblivious", "on"]),
        "count=1 rows_fetched=4 verified=off"
    );
}

#[test]
fn every_aggregate() {
    let env = Env::new();
    env.ingest(Path::new(FIXTURE), &[]);
    let l1 = ["--loc", "l1", "--t0", "1000", "--t1", "1059"];
    let ask = |qa: &str| {
        let mut a = vec!["--qa", qa, "--column", "v"];
        a.extend_from_slice(&l1);
        env.answer(&a)
    };
    assert!(ask("count").starts_with("count=3 "));
    assert!(ask("sum").starts_with("sum=7 "));
    assert!(ask("min").starts_with("min=-1 "));
    assert!(ask("max").starts_with("max=5 "));
    assert!(ask("avg").starts_with("avg=2.333333 "));
    let sel = ask("select");
    assert!(sel.starts_with("rows=3 "));
    assert!(sel.contains("l1 1005 o1 v=3 l1 1010 o2 v=5 l1 1025 o1 v=-1"), "{sel}");
    let top = env.answer(&["--qa", "topk", "--k", "2", "--t0", "1000", "--t1", "1059"]);
    assert!(top.starts_with("topk=l1:3,l2:2 "), "{top}");
    let miss = env.answer(&["--qa", "min", "--column", "v", "--loc", "l9", "--t0", "1000", "--t1", "1059"]);
    assert!(miss.starts_with("min=none "), "{miss}");
}

#[test]
fn range_methods_agree() {
    let env = Env::new();
    env.ingest(Path::new(FIXTURE), &["--ebpb", "--winsec-lambda", "1"]);
    let mut counts = Vec::new();
    for m in ["bpb", "ebpb", "winsec", "scan", "multi"] {
        let a = env.answer(&["--loc", "l1", "--t0", "1000", "--t1", "1029", "--method", m, "--verify", "on"]);
        assert!(a.ends_with("verified=true"), "{m}: {a}");
        counts.push(fields(&a)[0].to_string());
    }
    assert!(counts.iter().all(|c| c == "count=3"), "{counts:?}");
}

#[test]
fn tampered_store_exits_3() {
    let env = Env::new();
    env.ingest(Path::new(FIXTURE), &[]);
    FileStore::open(env.store())
        .unwrap()
        .tamper_rows(1, |rows| {
            for r in rows {
                r.er[0] ^= 1;
            }
        })
        .unwrap();
    let out = env.query(&["--loc", "l2", "--t0", "1040", "--verify", "on"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn empty_file_fails() {
    let env = Env::new();
    let empty = env.dir.path().join("empty.tsv");
    fs::write(&empty, "").unwrap();
    let store = env.store();
    let out = env.run(&["ingest", "--data", empty.to_str().unwrap(), "--store", store.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no rows"));
}

#[test]
fn users_and_tokens() {
    let env = Env::new();
    env.ingest(Path::new(FIXTURE), &[]);
    let store = env.store();
    let token = env.ok(&["register", "--store", store.to_str().unwrap(), "--user", "o2"]).trim().to_string();
    assert_eq!(token.len(), 64);
    let own = env.answer(&["--obs", "o2", "--t0", "1000", "--t1", "1059", "--user", "o2", "--token", &token]);
    assert!(own.starts_with("count=3 "), "{own}");
    let other = env.query(&["--obs", "o1", "--t0", "1000", "--t1", "1059", "--user", "o2", "--token", &token]);
    assert_eq!(other.status.code(), Some(2));
    let bad = env.query(&["--obs", "o2", "--t0", "1000", "--user", "o2", "--token", &"0".repeat(64)]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_4() {
    let env = Env::new();
    let store = env.store();
    let out = env.run(&["ingest", "--data", FIXTURE, "--store", store.to_str().unwrap(), "--grid", "2,2"]);
    assert_eq!(out.status.code(), Some(4));
    env.ingest(Path::new(FIXTURE), &[]);
    assert_eq!(env.query(&["--t0", "1000", "--t1", "1059", "--method", "ebpb"]).status.code(), Some(4));
    assert_eq!(env.query(&["--loc", "l1", "--t0", "1010", "--t1", "1000"]).status.code(), Some(4));
    let nokey = Command::new(env!("CARGO_BIN_EXE_concealer"))
        .args(["query", "--store", store.to_str().unwrap(), "--t0", "1000"])
        .env_remove("CONCEALER_MASTER_KEY_FILE")
        .output()
        .unwrap();
    assert_eq!(nokey.status.code(), Some(4));
}

#[test]
fn multi_epoch_across_runs() {
    let env = Env::new();
    env.ingest(Path::new(FIXTURE), &[]);
    let shifted = env.dir.path().join("second.tsv");
    let text: String = fs::read_to_string(FIXTURE)
        .unwrap()
        .lines()
        .map(|l| {
            let mut f: Vec<String> = l.split('\t').map(String::from).collect();
            f[1] = (f[1].parse::<u64>().unwrap() + 60).to_string();
            f.join("\t") + "\n"
        })
        .collect();
    fs::write(&shifted, text).unwrap();
    let store = env.store();
    env.ingest(&shifted, &["--epoch-start", "1060"]);
    let q = ["--loc", "l1", "--t0", "1000", "--t1", "1119", "--method", "multi", "--verify", "on"];
    let first = env.answer(&q);
    assert!(first.starts_with("count=6 "), "{first}");
    assert!(store.join("trusted.state").exists());
    assert_eq!(env.answer(&q), first);
    let bpb = env.answer(&["--loc", "l1", "--t0", "1000", "--t1", "1119", "--verify", "on"]);
    assert!(bpb.starts_with("count=6 "), "{bpb}");
}

#[test]
fn leakcheck_on_fixture() {
    let env = Env::new();
    env.ingest(Path::new(FIXTURE), &["--ebpb", "--winsec-lambda", "1"]);
    let store = env.store();
    let out = env.ok(&["leakcheck", "--store", store.to_str().unwrap(), "--epoch", "1", "--exhaustive"]);
    assert!(out.contains("point-volume PASS constant=4"), "{out}");
    assert!(out.contains("winsec-sliding PASS"), "{out}");
    assert!(out.trim_end().ends_with("overall PASS"));
    assert!(!store.join("trusted.state").exists(), "leakcheck must not touch the live state");
}

#[test]
fn seeded_outputs_are_identical() {
    let env = Env::new();
    let a = env.dir.path().join("a");
    let b = env.dir.path().join("b");
    for d in [&a, &b] {
        env.ok(&["gen-data", "--out", d.to_str().unwrap(), "--rows", "300", "--epochs", "2", "--seed", "9"]);
    }
    for f in ["epoch-0001.tsv", "epoch-0002.tsv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    assert_eq!(env.ok(&["keygen", "--seed", "2"]), env.ok(&["keygen", "--seed", "2"]));

    let grid = ["--grid", "10,10,10", "--epoch-start", "0", "--epoch-secs", "3600"];
    env.ingest(&a.join("epoch-0001.tsv"), &grid);
    let q = ["--loc", "l1", "--t0", "0", "--t1", "900", "--method", "multi", "--seed", "3"];
    let store2 = env.dir.path().join("store2");
    let first = env.answer(&q);
    fs::rename(env.store(), &store2).unwrap();
    env.ingest(&a.join("epoch-0001.tsv"), &grid);
    assert_eq!(env.answer(&q), first);
}

#[test]
fn bench_csv_headers_are_stable() {
    let env = Env::new();
    let golden = fs::read_to_string(HEADERS).unwrap();
    for line in golden.lines() {
        let (suite, header) = line.split_once(':').unwrap();
        let csv = env.dir.path().join(format!("{suite}.csv"));
        let out = env.ok(&[
            "bench", "--suite", suite, "--rows", "400", "--locations", "10", "--grid", "3,3,3",
            "--epoch-secs", "300", "--queries", "2", "--csv", csv.to_str().unwrap(),
        ]);
        assert_eq!(fields(out.lines().next().unwrap()), header.split(',').collect::<Vec<_>>());
        let text = fs::read_to_string(&csv).unwrap();
        assert_eq!(text.lines().next().unwrap(), header, "{suite}");
        assert!(text.lines().count() > 1);
    }
}
