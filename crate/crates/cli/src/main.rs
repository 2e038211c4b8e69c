use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use concealer::binpack::Packer;
use concealer::meta::FakeStrategy;
use concealer::processor::{Aggregate, Column, Method, Query, QueryOptions};
use concealer_cli::bench::{self, BenchConfig, Suite};
use concealer_cli::ops::{self, IngestArgs};
use concealer_cli::workload::{QueryMix, WorkloadSpec};
use concealer_cli::{datafile, keys, CliError, Result};

#[derive(Parser)]
#[command(name = "concealer", version, about = "Encrypted spatial time-series store")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum FakeMode {
    Equal,
    Binpack,
}

#[derive(Clone, Copy, ValueEnum)]
enum PackerArg {
    Ffd,
    Bfd,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

impl From<OnOff> for bool {
    fn from(v: OnOff) -> bool {
        matches!(v, OnOff::On)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Qa {
    Count,
    Sum,
    Min,
    Max,
    Avg,
    Topk,
    Select,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Bpb,
    Ebpb,
    Winsec,
    Multi,
    Scan,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Point,
    Range,
    Insert,
    Binsize,
    Cells,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write seeded synthetic epoch files.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        rows: u64,
        #[arg(long, default_value_t = 100)]
        locations: u32,
        #[arg(long, default_value_t = 500)]
        observations: u32,
        #[arg(long, default_value_t = 1)]
        epochs: u32,
        #[arg(long, default_value_t = 1.0)]
        zipf: f64,
        #[arg(long, default_value_t = 0)]
        epoch_start: u64,
        #[arg(long, default_value_t = 3600)]
        epoch_secs: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Encrypt one epoch file into a store.
    Ingest {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// Grid as X,Y,U.
        #[arg(long, default_value = "10,10,10")]
        grid: String,
        #[arg(long)]
        epoch_secs: Option<u64>,
        #[arg(long)]
        epoch_start: Option<u64>,
        #[arg(long, value_enum, default_value = "binpack")]
        fake_mode: FakeMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        eid: Option<u64>,
        /// Also pad for top-ℓ range bins.
        #[arg(long)]
        ebpb: bool,
        /// Also build interval bins of this many subintervals.
        #[arg(long)]
        winsec_lambda: Option<u64>,
        #[arg(long)]
        capacity: Option<u64>,
        #[arg(long, value_enum, default_value = "ffd")]
        packer: PackerArg,
        #[arg(long)]
        key: Option<PathBuf>,
    },
    /// Run one query through the trusted processor.
    Query {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, value_enum, default_value = "count")]
        qa: Qa,
        /// `time` or the name of an integer extra column.
        #[arg(long, default_value = "time")]
        column: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        loc: Option<String>,
        #[arg(long)]
        obs: Option<String>,
        #[arg(long)]
        t0: u64,
        /// Defaults to --t0.
        #[arg(long)]
        t1: Option<u64>,
        #[arg(long, value_enum, default_value = "bpb")]
        method: MethodArg,
        #[arg(long, value_enum, default_value = "off")]
        oblivious: OnOff,
        #[arg(long, value_enum, default_value = "off")]
        verify: OnOff,
        #[arg(long)]
        super_bins: Option<usize>,
        #[arg(long)]
        user: Option<String>,
        /// Hex token printed by `register`.
        #[arg(long)]
        token: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        key: Option<PathBuf>,
    },
    /// Check the leakage profile of one epoch.
    Leakcheck {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        epoch: u64,
        /// Query every second of the epoch instead of subinterval ends.
        #[arg(long)]
        exhaustive: bool,
        #[arg(long)]
        key: Option<PathBuf>,
    },
    /// Run a benchmark suite.
    Bench {
        #[arg(long, value_enum)]
        suite: SuiteArg,
        #[arg(long, default_value_t = 20_000)]
        rows: u64,
        #[arg(long, default_value_t = 100)]
        locations: u32,
        #[arg(long, default_value = "10,10,10")]
        grid: String,
        #[arg(long, default_value_t = 3600)]
        epoch_secs: u64,
        #[arg(long, default_value_t = 30)]
        queries: usize,
        #[arg(long, default_value_t = 1.0)]
        zipf: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the table as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print a new master key as hex.
    Keygen {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Register a user and print their token.
    Register {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        user: String,
        #[arg(long)]
        key: Option<PathBuf>,
    },
}

fn parse_grid(s: &str) -> Result<(u32, u32, u32)> {
    let parts: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("grid {s:?} is not X,Y,U")))?;
    match parts[..] {
        [x, y, u] => Ok((x, y, u)),
        _ => Err(CliError::Usage(format!("grid {s:?} is not X,Y,U"))),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData { out, rows, locations, observations, epochs, zipf, epoch_start, epoch_secs, seed } => {
            let spec = WorkloadSpec {
                n_rows: rows,
                n_locations: locations,
                n_observations: observations,
                epochs,
                zipf_s: zipf,
                epoch_start,
                epoch_secs,
                mix: QueryMix::default(),
                seed,
            };
            fs::create_dir_all(&out)?;
            for (e, rows) in spec.generate()?.iter().enumerate() {
                let path = out.join(format!("epoch-{:04}.tsv", e + 1));
                fs::write(&path, datafile::format(rows))?;
                let (lo, hi) = spec.epoch_bounds(e as u32);
                println!("{} rows={} start={lo} secs={}", path.display(), rows.len(), hi - lo);
            }
        }
        Cmd::Ingest {
            data,
            store,
            grid,
            epoch_secs,
            epoch_start,
            fake_mode,
            seed,
            eid,
            ebpb,
            winsec_lambda,
            capacity,
            packer,
            key,
        } => {
            let master = keys::load_master(key.as_deref())?;
            let args = IngestArgs {
                grid: parse_grid(&grid)?,
                epoch_start,
                epoch_secs,
                strategy: match fake_mode {
                    FakeMode::Equal => FakeStrategy::EqualCount,
                    FakeMode::Binpack => FakeStrategy::SimulatedBinPacking,
                },
                seed,
                eid,
                ebpb,
                winsec_lambda,
                capacity,
                packer: match packer {
                    PackerArg::Ffd => Packer::Ffd,
                    PackerArg::Bfd => Packer::Bfd,
                },
            };
            println!("{}", ops::ingest_file(&store, &master, &data, &args)?);
        }
        Cmd::Query {
            store,
            qa,
            column,
            k,
            loc,
            obs,
            t0,
            t1,
            method,
            oblivious,
            verify,
            super_bins,
            user,
            token,
            seed,
            key,
        } => {
            let master = keys::load_master(key.as_deref())?;
            let col = if column == "time" { Column::Time } else { Column::Extra(column) };
            let aggregate = match qa {
                Qa::Count => Aggregate::Count,
                Qa::Sum => Aggregate::Sum(col),
                Qa::Min => Aggregate::Min(col),
                Qa::Max => Aggregate::Max(col),
                Qa::Avg => Aggregate::Avg(col),
                Qa::Topk => Aggregate::TopK(k),
                Qa::Select => Aggregate::Select,
            };
            let q = Query::new(aggregate, ops::predicate(loc.as_deref(), obs.as_deref(), t0, t1.unwrap_or(t0)));
            let opts = QueryOptions {
                method: match method {
                    MethodArg::Bpb => Method::Bpb,
                    MethodArg::Ebpb => Method::Ebpb,
                    MethodArg::Winsec => Method::Winsec,
                    MethodArg::Multi => Method::MultiEpoch,
                    MethodArg::Scan => Method::FullScan,
                },
                oblivious: oblivious.into(),
                verify: verify.into(),
                super_bins,
            };
            let p = ops::open_processor(&store, master, seed)?;
            let s = ops::session(&p, user.as_deref(), token.as_deref())?;
            println!("{}", ops::run_query(&p, &s, &q, &opts)?);
        }
        Cmd::Leakcheck { store, epoch, exhaustive, key } => {
            let master = keys::load_master(key.as_deref())?;
            let report = ops::leakcheck(&store, master, epoch, exhaustive)?;
            println!("{report}");
            if !report.pass {
                return Err(CliError::Check("leakage check failed".into()));
            }
        }
        Cmd::Bench { suite, rows, locations, grid, epoch_secs, queries, zipf, seed, csv } => {
            let suite = match suite {
                SuiteArg::Point => Suite::Point,
                SuiteArg::Range => Suite::Range,
                SuiteArg::Insert => Suite::Insert,
                SuiteArg::Binsize => Suite::Binsize,
                SuiteArg::Cells => Suite::Cells,
            };
            let cfg = BenchConfig { rows, locations, grid: parse_grid(&grid)?, epoch_secs, queries, zipf_s: zipf, seed };
            let table = bench::run(suite, &cfg)?;
            print!("{table}");
            if let Some(path) = csv {
                fs::write(path, table.to_csv()?)?;
            }
        }
        Cmd::Keygen { seed, out } => {
            let key = keys::generate_hex(seed);
            match out {
                Some(p) => fs::write(p, format!("{key}\n"))?,
                None => println!("{key}"),
            }
        }
        Cmd::Register { store, user, key } => {
            let master = keys::load_master(key.as_deref())?;
            println!("{}", ops::register(&store, master, &user)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
