use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use axsched::ru_plan::{LayoutDump, RuLayout};
use axsched::sim::{self, ScenarioConfig, SchedulerKind};
use axsched::Error;

/// 802.11ax uplink scheduling simulator.
#[derive(Parser)]
#[command(name = "axsched", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML). Defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// dhqn, sinr_searched, sinr_fixed, buffer_fixed or oracle.
    #[arg(long)]
    scheduler: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the learned scheduler or run a baseline; writes per-episode CSVs.
    Train(Common),
    /// Greedy evaluation without learning.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint written by `train` (required for dhqn).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Decision latency against the number of STAs.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated STA counts, replacing `[bench] stations`.
        #[arg(long, value_delimiter = ',')]
        stations: Option<Vec<usize>>,
    },
    /// Parse and check a scenario file, then print the resolved values.
    ValidateConfig(Common),
    /// Print the RU layout, coverage and goal table as TOML.
    DumpGoals {
        /// Alternative layout table.
        #[arg(long)]
        layout: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load(c: &Common) -> Result<ScenarioConfig, Error> {
    let mut cfg = match &c.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::from_toml_with("", std::env::vars())?,
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.output {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = &c.scheduler {
        cfg.scheduler = s.parse::<SchedulerKind>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_out(path: Option<&PathBuf>, text: &str) -> Result<(), Error> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train(c) => {
            let cfg = load(&c)?;
            let out = sim::run(&cfg)?;
            for p in out.metrics.iter().chain(&out.checkpoints) {
                println!("wrote {}", p.display());
            }
        }
        Command::Evaluate { common, checkpoint } => {
            let cfg = load(&common)?;
            let eval = sim::evaluate(&cfg, checkpoint.as_deref())?;
            for p in sim::write_evaluation(&cfg.output_dir, &eval)? {
                println!("wrote {}", p.display());
            }
            let t = &eval.throughput;
            if t.degenerate {
                println!(
                    "{}: mean throughput {:.3} Mbit/s over {} replication(s); confidence interval degenerate",
                    eval.scheduler.as_str(),
                    t.mean,
                    t.samples
                );
            } else {
                println!(
                    "{}: mean throughput {:.3} +/- {:.3} Mbit/s (95%, {} replications)",
                    eval.scheduler.as_str(),
                    t.mean,
                    t.half_width,
                    t.samples
                );
            }
        }
        Command::Bench { common, stations } => {
            let mut cfg = load(&common)?;
            if let Some(s) = stations {
                cfg.bench.stations = s;
            }
            let rows = sim::bench_scaling(&cfg)?;
            std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::Io {
                path: cfg.output_dir.clone(),
                source: e,
            })?;
            let path = cfg.output_dir.join("bench.csv");
            sim::write_bench(&path, &rows)?;
            for r in &rows {
                println!(
                    "K={:>3}  dhqn {:>10.1} us  sinr_searched {:>10.1} us",
                    r.stations, r.dhqn_median_us, r.sinr_searched_median_us
                );
            }
            println!("wrote {}", path.display());
        }
        Command::ValidateConfig(c) => {
            let cfg = load(&c)?;
            if cfg.scheduler == SchedulerKind::Oracle {
                sim::preflight(&cfg, cfg.scheduler)?;
            } else {
                cfg.cell()?;
            }
            print!("{}", cfg.to_toml());
        }
        Command::DumpGoals { layout, output } => {
            let layout = match layout {
                Some(p) => RuLayout::load(&p).map_err(|e| match e {
                    Error::InvalidArgument(m) => Error::Config(m),
                    other => other,
                })?,
                None => RuLayout::twenty_mhz(),
            };
            let goals = layout.enumerate_goals();
            write_out(output.as_ref(), &LayoutDump::new(&layout, &goals).to_toml())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::TooLarge(_) | Error::IncompatibleCheckpoint(_) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::from(1),
            }
        }
    }
}
