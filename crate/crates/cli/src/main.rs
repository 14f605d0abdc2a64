use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use irs_core::harness::{self, ExperimentConfig};

/// Monte-Carlo simulator for IRS-assisted mm-wave channel estimation and beamforming.
#[derive(Parser)]
#[command(name = "irs-sim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single trial and print its CSV row.
    Simulate {
        /// Experiment config; the desk-scale preset when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Trial seed, as in the CSV `seed` column. Defaults to the first trial of the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Index into the config's sweep values.
        #[arg(long, default_value_t = 0)]
        point: usize,
    },
    /// Run every (point, trial) pair and write one CSV row each.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; overrides the config.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run the built-in invariant checks.
    Selftest,
    /// Print a preset config.
    Preset {
        /// `desk-scale` or `paper-scale`.
        #[arg(long)]
        name: String,
    },
    /// Per-point median and mean of a sweep CSV.
    Summarize {
        #[arg(long)]
        input: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const EXIT_CONFIG: u8 = 1;
const EXIT_TRIAL_FAILED: u8 = 2;

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ExperimentConfig::parse(&text)?)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Simulate {
            config,
            seed,
            point,
        } => {
            let cfg = match config {
                Some(p) => load_config(&p)?,
                None => ExperimentConfig::desk_scale(),
            };
            let points = cfg.points();
            let pt = points.get(point).with_context(|| {
                format!(
                    "point {point} out of range, the config has {}",
                    points.len()
                )
            })?;
            let seed = seed.unwrap_or_else(|| harness::trial_seed(cfg.seed, 0));
            let outcome = harness::run_trial(&cfg, pt, seed)?;
            harness::write_csv(&[outcome.record], io::stdout().lock())?;
            if let Some(msg) = outcome.failure {
                eprintln!("trial failed: {msg}");
                return Ok(EXIT_TRIAL_FAILED);
            }
        }
        Command::Sweep {
            config,
            out,
            threads,
        } => {
            let cfg = load_config(&config)?;
            let res = harness::sweep(&cfg, threads)?;
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut w = BufWriter::new(file);
            harness::write_csv(&res.records, &mut w)?;
            w.flush()?;
            for (row, msg) in &res.failures {
                eprintln!("row {}: {msg}", row + 1);
            }
            if !res.failures.is_empty() {
                eprintln!(
                    "{} of {} trials failed",
                    res.failures.len(),
                    res.records.len()
                );
                return Ok(EXIT_TRIAL_FAILED);
            }
        }
        Command::Selftest => {
            let mut failed = 0;
            for c in harness::selftest::run() {
                match &c.outcome {
                    Ok(()) => println!("pass  {}", c.name),
                    Err(e) => {
                        failed += 1;
                        println!("FAIL  {}: {e}", c.name);
                    }
                }
            }
            if failed > 0 {
                return Ok(EXIT_TRIAL_FAILED);
            }
        }
        Command::Preset { name } => {
            print!("{}", ExperimentConfig::preset(&name)?.to_config_string());
        }
        Command::Summarize { input, out } => {
            let file =
                File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let rows = harness::summarize(&harness::read_csv(file)?);
            match out {
                Some(p) => {
                    let file =
                        File::create(&p).with_context(|| format!("creating {}", p.display()))?;
                    harness::write_summary(&rows, BufWriter::new(file))?;
                }
                None => harness::write_summary(&rows, io::stdout().lock())?,
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
