//! Command-line entry point: `run`, `verify` and `config --dump`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::learner::Checkpoint;
use crate::par::Execution;
use crate::telemetry::{audit_constraints, emit_plots, CsvSink, RunSummary};
use crate::verify::{run_suite, Suite};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;

pub const CSV_FILE: &str = "telemetry.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug, Parser)]
#[command(name = "ctcs-hrrl", version, about = "Continuous-time homeostatic reinforcement learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an agent and write telemetry, plots, a summary and a checkpoint.
    Run(RunArgs),
    /// Run property suites and print a JSON report.
    Verify(VerifyArgs),
    /// Inspect the configuration.
    Config(ConfigArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated seeds, run in parallel.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write into `seed-<N>` under the output directory, replacing earlier results.
    #[arg(long)]
    pub force: bool,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long, conflicts_with = "seeds")]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// lemma1, signs, gradients, constraints, hjb-toy or all.
    pub suite: Suite,
    /// Run on the calling thread only.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Print every key with its value.
    #[arg(long, required = true)]
    pub dump: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } => EXIT_CONFIG,
        Error::Io { .. } | Error::RunAborted { .. } => EXIT_IO,
        _ => EXIT_FAILURE,
    }
}

pub fn main() -> u8 {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Verify(args) => cmd_verify(&args),
        Command::Config(args) => {
            let cfg = load_config(args.config.as_deref())?;
            print!("{}", cfg.dump());
            Ok(EXIT_OK)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn unix_seconds() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn output_dir(root: &Path, seed: u64, force: bool) -> Result<PathBuf> {
    let dir = if force {
        root.join(format!("seed-{seed}"))
    } else {
        let base = format!("run-{}-seed{seed}", unix_seconds());
        let mut dir = root.join(&base);
        let mut n = 1;
        while dir.exists() {
            dir = root.join(format!("{base}-{n}"));
            n += 1;
        }
        dir
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// One seed end to end; returns the summary and the directory it was written to.
pub fn run_one(cfg: &RunConfig, seed: u64, force: bool, resume: Option<&Path>) -> Result<(RunSummary, PathBuf)> {
    let mut sim = cfg.simulation(seed)?;
    if let Some(path) = resume {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        sim.restore(Checkpoint::from_json(&text)?)?;
    }
    let dir = output_dir(&cfg.out_dir, seed, force)?;
    let initial = sim.state;
    let csv_path = dir.join(CSV_FILE);
    let mut sink = CsvSink::create(&csv_path, &sim.meta)?;
    let log = match sim.run(cfg.iterations, Some(&mut sink)) {
        Ok(log) => log,
        Err(Error::RunAborted { iteration, checkpoint, source }) => {
            // Best effort: the sink already failed, the checkpoint file may too.
            let _ = std::fs::write(dir.join(CHECKPOINT_FILE), checkpoint.to_json());
            return Err(Error::RunAborted { iteration, checkpoint, source });
        }
        Err(e) => return Err(e),
    };
    sink.finish().map_err(|e| Error::io(&csv_path, e))?;
    if !log.is_empty() {
        emit_plots(&log, &cfg.world, &dir, cfg.plot_stride)?;
    }
    let audit = audit_constraints(&log, &initial, &cfg.world);
    let summary = RunSummary::new(&log, &audit, sim.learner.clipped_updates());
    write_file(&dir.join(SUMMARY_FILE), &summary.to_json())?;
    write_file(&dir.join(CHECKPOINT_FILE), &sim.checkpoint().to_json())?;
    Ok((summary, dir))
}

fn cmd_run(args: &RunArgs) -> Result<u8> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(k) = args.iterations {
        cfg.iterations = k;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    let seeds = args.seeds.clone().unwrap_or_else(|| vec![cfg.seed]);
    let results = Execution::Parallel.map(&seeds, |seed| run_one(&cfg, *seed, args.force, args.resume.as_deref()));
    let mut out = std::io::stdout().lock();
    let mut code = EXIT_OK;
    for result in results {
        let (summary, dir) = result?;
        let _ = writeln!(out, "{}", summary.to_json());
        let _ = writeln!(out, "wrote {}", dir.display());
        if summary.constraint_violations > 0 {
            code = EXIT_FAILURE;
        }
    }
    Ok(code)
}

fn cmd_verify(args: &VerifyArgs) -> Result<u8> {
    let exec = if args.sequential { Execution::Sequential } else { Execution::Parallel };
    let reports = run_suite(args.suite, exec)?;
    println!("{}", serde_json::to_string_pretty(&reports).expect("reports serialize"));
    match reports.iter().find(|r| !r.passed()) {
        None => Ok(EXIT_OK),
        Some(r) => {
            eprintln!("{} failed: {}", r.property, r.counterexample.as_deref().unwrap_or("no counterexample recorded"));
            Ok(EXIT_FAILURE)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arguments_parse() {
        let cli = Cli::try_parse_from(["ctcs-hrrl", "run", "--seeds", "1,2,3", "--iterations", "5", "--force"]).unwrap();
        let Command::Run(args) = cli.command else { panic!() };
        assert_eq!(args.seeds, Some(vec![1, 2, 3]));
        assert_eq!(args.iterations, Some(5));
        assert!(args.force);
        assert!(Cli::try_parse_from(["ctcs-hrrl", "run", "--seed", "1", "--seeds", "2"]).is_err());
        let cli = Cli::try_parse_from(["ctcs-hrrl", "verify", "signs"]).unwrap();
        assert!(matches!(cli.command, Command::Verify(VerifyArgs { suite: Suite::Signs, .. })));
        assert!(Cli::try_parse_from(["ctcs-hrrl", "verify", "bogus"]).is_err());
        assert!(Cli::try_parse_from(["ctcs-hrrl", "config"]).is_err());
    }

    #[test]
    fn exit_codes_are_stable() {
        let cfg_err = RunConfig::parse("bogus = 1").unwrap_err();
        assert_eq!(exit_code(&cfg_err), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::io("x", std::io::Error::other("boom"))), EXIT_IO);
        assert_eq!(exit_code(&Error::Contract("x".into())), EXIT_FAILURE);
    }

    #[test]
    fn timestamped_directories_never_collide() {
        let root = tempfile::tempdir().unwrap();
        let a = output_dir(root.path(), 7, false).unwrap();
        let b = output_dir(root.path(), 7, false).unwrap();
        assert_ne!(a, b);
        let f = output_dir(root.path(), 7, true).unwrap();
        assert_eq!(f, root.path().join("seed-7"));
        assert_eq!(output_dir(root.path(), 7, true).unwrap(), f);
    }
}
