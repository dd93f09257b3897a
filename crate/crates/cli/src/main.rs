use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crowdpatrol::engine::{self, compute_metrics, load_scenario, MetricsSummary, ReplayLog, Scenario};
use rayon::prelude::*;

/// Simulate a crowd-surveillance patrol robot and inspect its replays.
#[derive(Debug, Parser)]
#[command(name = "crowdpatrol", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario, writing replay.jsonl and metrics.json into DIR.
    Run {
        scenario: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario duration.
        #[arg(long)]
        ticks: Option<u64>,
    },
    /// Read a replay log back.
    Replay {
        log: PathBuf,
        /// Recompute and print the run metrics.
        #[arg(long)]
        metrics: bool,
    },
    /// Run a scenario over a seed range in parallel, printing one JSON line per seed.
    Batch {
        scenario: PathBuf,
        /// Half-open range, e.g. 0..20.
        #[arg(long, value_parser = parse_seeds)]
        seeds: Range<u64>,
        /// Also write each run's replay and metrics to DIR/seed-N.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long)]
        ticks: Option<u64>,
    },
    /// Check a scenario and print it with all defaults filled in.
    Validate { scenario: PathBuf },
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl Failure {
    fn runtime(e: impl std::fmt::Display) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn parse_seeds(s: &str) -> Result<Range<u64>, String> {
    let (a, b) = s.split_once("..").ok_or("expected a..b")?;
    let a: u64 = a.trim().parse().map_err(|e| format!("start: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("end: {e}"))?;
    if b <= a {
        return Err(format!("empty range {a}..{b}"));
    }
    Ok(a..b)
}

fn read_scenario(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    load_scenario(&text).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))
}

fn write_run(dir: &Path, log: &ReplayLog, metrics: &MetricsSummary) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(Failure::runtime)?;
    let f = File::create(dir.join("replay.jsonl")).map_err(Failure::runtime)?;
    log.write_jsonl(BufWriter::new(f)).map_err(Failure::runtime)?;
    let json = serde_json::to_string_pretty(metrics).map_err(Failure::runtime)?;
    fs::write(dir.join("metrics.json"), json + "\n").map_err(Failure::runtime)
}

fn simulate(scenario: &Scenario) -> Result<(ReplayLog, MetricsSummary), Failure> {
    engine::run(scenario).map_err(Failure::runtime)
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run {
            scenario,
            out,
            seed,
            ticks,
        } => {
            let mut s = read_scenario(&scenario)?;
            s.seed = seed.unwrap_or(s.seed);
            s.duration = ticks.unwrap_or(s.duration);
            let (log, metrics) = simulate(&s)?;
            write_run(&out, &log, &metrics)?;
            println!("{}", serde_json::to_string(&metrics).map_err(Failure::runtime)?);
        }
        Command::Replay { log, metrics } => {
            let f = File::open(&log).map_err(Failure::runtime)?;
            let replay = ReplayLog::read_jsonl(BufReader::new(f)).map_err(Failure::runtime)?;
            if metrics {
                let m = compute_metrics(&replay);
                println!("{}", serde_json::to_string_pretty(&m).map_err(Failure::runtime)?);
            } else {
                println!("seed {} ticks {}", replay.header.scenario.seed, replay.records.len());
            }
        }
        Command::Batch {
            scenario,
            seeds,
            out,
            ticks,
        } => {
            let base = read_scenario(&scenario)?;
            let results: Vec<Result<(u64, MetricsSummary), Failure>> = seeds
                .into_par_iter()
                .map(|seed| {
                    let mut s = base.clone();
                    s.seed = seed;
                    s.duration = ticks.unwrap_or(s.duration);
                    let (log, metrics) = simulate(&s)?;
                    if let Some(dir) = &out {
                        write_run(&dir.join(format!("seed-{seed}")), &log, &metrics)?;
                    }
                    Ok((seed, metrics))
                })
                .collect();
            for r in results {
                let (seed, metrics) = r?;
                let line = serde_json::json!({ "seed": seed, "metrics": metrics });
                println!("{line}");
            }
        }
        Command::Validate { scenario } => {
            let s = read_scenario(&scenario)?;
            print!("{}", s.to_toml().map_err(Failure::runtime)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("invalid scenario: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
