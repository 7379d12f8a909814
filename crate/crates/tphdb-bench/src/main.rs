use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use tphdb::{EngineConfig, EngineMode, WalSyncPolicy};
use tphdb_bench::runner::{self, VerifyOutcome};
use tphdb_bench::workload::{Distribution, WorkloadName, WorkloadSpec};

#[derive(Parser)]
#[command(name = "bench", about = "Workload driver for the tphdb storage engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SpecArgs {
    /// fillrandom | readrandom | readwhilewriting | ycsb_a..ycsb_f
    #[arg(long)]
    workload: WorkloadName,
    #[arg(long, default_value_t = 1_000_000)]
    num_keys: u64,
    #[arg(long, default_value_t = 20)]
    key_size: usize,
    #[arg(long, default_value_t = 128)]
    value_size: usize,
    /// Operations in the measured phase; defaults to num_keys.
    #[arg(long)]
    op_count: Option<u64>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Read probability for readwhilewriting.
    #[arg(long, default_value_t = 0.9)]
    read_fraction: f64,
    /// uniform | zipfian | latest
    #[arg(long, default_value = "uniform")]
    distribution: Distribution,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl SpecArgs {
    fn to_spec(&self) -> WorkloadSpec {
        let mut spec = WorkloadSpec::new(self.workload, self.num_keys, self.seed);
        spec.key_size = self.key_size;
        spec.value_size = self.value_size;
        spec.op_count = self.op_count.unwrap_or(self.num_keys);
        spec.threads = self.threads;
        spec.read_fraction = self.read_fraction;
        spec.distribution = self.distribution;
        spec
    }
}

#[derive(Args, Clone)]
struct EngineArgs {
    #[arg(long)]
    dir: PathBuf,
    /// leveled_hash_range | one_level | single_tier
    #[arg(long, default_value = "leveled_hash_range")]
    mode: EngineMode,
    #[arg(long, default_value_t = 64)]
    memtable_mb: u64,
    #[arg(long)]
    fanout: Option<u32>,
    #[arg(long)]
    max_pieces: Option<usize>,
    #[arg(long)]
    levels: Option<u32>,
    #[arg(long, default_value_t = false)]
    direct_io: bool,
    /// always | never | a record count for periodic syncing
    #[arg(long, default_value = "never")]
    wal_sync: String,
}

impl EngineArgs {
    fn to_config(&self, dir: PathBuf, seed: u64) -> Result<EngineConfig> {
        let mut cfg = EngineConfig::new(dir);
        cfg.mode = self.mode;
        cfg.memtable_bytes = self.memtable_mb << 20;
        cfg.hash_seed = seed;
        if let Some(f) = self.fanout {
            cfg.fanout = f;
        }
        if let Some(p) = self.max_pieces {
            cfg.max_pieces = p;
        }
        if let Some(l) = self.levels {
            cfg.levels = l;
        }
        cfg.direct_io = self.direct_io;
        cfg.wal_sync = match self.wal_sync.as_str() {
            "always" => WalSyncPolicy::Always,
            "never" => WalSyncPolicy::Never,
            n => WalSyncPolicy::EveryN(n.parse()?),
        };
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one workload against a fresh store and print the report.
    Run {
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Run the same workload under several engine settings side by side.
    Compare {
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        engine: EngineArgs,
        /// Comma-separated modes to compare.
        #[arg(long, default_value = "leveled_hash_range,one_level,single_tier")]
        modes: String,
        /// Comma-separated fanouts paired against each mode.
        #[arg(long, default_value = "2")]
        fanouts: String,
    },
    /// Check a store produced by `run` against its recorded workload.
    Verify {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn main_inner() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { spec, engine } => {
            let spec = spec.to_spec();
            let config = engine.to_config(engine.dir.clone(), spec.seed)?;
            let report = runner::run(&spec, config)?;
            print!("{}", report.render());
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare {
            spec,
            engine,
            modes,
            fanouts,
        } => {
            let spec = spec.to_spec();
            let modes: Vec<EngineMode> = modes
                .split(',')
                .map(|m| m.trim().parse::<EngineMode>().map_err(|e| anyhow::anyhow!("{e}")))
                .collect::<Result<_>>()?;
            let fanouts: Vec<u32> = fanouts
                .split(',')
                .map(|f| Ok(f.trim().parse::<u32>()?))
                .collect::<Result<Vec<u32>>>()?;
            let mut settings = Vec::new();
            for &mode in &modes {
                for &fanout in &fanouts {
                    settings.push((mode, fanout));
                }
            }
            let (rows, _) =
                runner::compare_modes(&spec, &engine.dir, &settings, |mode, fanout, dir| {
                    let mut cfg = engine.to_config(dir, spec.seed).expect("engine config");
                    cfg.mode = mode;
                    cfg.fanout = fanout;
                    cfg
                })?;
            print!("{}", runner::render_comparison(&rows));
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { dir, seed } => match runner::verify(&dir, seed)? {
            VerifyOutcome::Pass { keys_checked } => {
                println!("verify: pass ({keys_checked} keys checked)");
                Ok(ExitCode::SUCCESS)
            }
            VerifyOutcome::Fail { diagnostics } => {
                println!("verify: FAIL — {diagnostics}");
                Ok(ExitCode::from(2))
            }
        },
    }
}
