use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use hcalab::diagnostics::write_identity_csv;
use hcalab::harness::{
    diagnose_run, frozenlake_comparison, frozenlake_comparison_config, run_experiment, verify_suite, write_run,
    Algorithm, CheckResult, ExperimentConfig,
};

#[derive(Parser)]
#[command(name = "hcalab", version, about = "Tabular hindsight credit assignment experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every replicate of a config and write metrics and summaries.
    Run(RunArgs),
    /// Run the identity, oracle and invariant checks; exits nonzero on any failure.
    Verify {
        /// Base seed for the randomized checks.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for identity_report.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute NLL-gap and entropy CSVs for a run directory written by `run`.
    Diagnose {
        /// Directory written by `run`.
        run_dir: PathBuf,
        /// Output directory (defaults to RUN_DIR/diagnostics).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare hca, hca_prior and hca_value on FrozenLake with and without a hole penalty.
    ReproFrozenlake(ReproArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Number of replicates.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the algorithm of the config file.
    #[arg(long)]
    algo: Option<String>,
    /// Training budget in environment steps.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct ReproArgs {
    /// Base settings; the comparison defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    seeds: usize,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value = "repro-frozenlake")]
    out: PathBuf,
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_file(path).with_context(|| format!("reading config {}", path.display()))
}

fn print_checks(checks: &[CheckResult]) -> bool {
    for c in checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    checks.iter().all(|c| c.pass)
}

fn run(args: RunArgs) -> Result<bool> {
    let mut cfg = load_config(&args.config)?;
    if let Some(name) = &args.algo {
        cfg = cfg.with_algorithm(name.parse::<Algorithm>()?);
    }
    if let Some(n) = args.seeds {
        cfg.replicates = n;
    }
    if let Some(n) = args.steps {
        cfg.budget = n;
    }
    cfg.validate()?;
    let out = args
        .out
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}", cfg.algorithm)));
    let runs = run_experiment(&cfg)?;
    let summary = write_run(&out, &cfg, &runs).with_context(|| format!("writing {}", out.display()))?;
    if let Some(last) = summary.iter().find(|r| r.row == "final") {
        println!(
            "{} on {}: final mean return {:.4} (min {:.4}, max {:.4}, se {:.4}, n {}) -> {}",
            cfg.algorithm,
            cfg.env.name(),
            last.mean,
            last.min,
            last.max,
            last.se,
            last.n,
            out.display()
        );
    }
    Ok(true)
}

fn verify(seed: u64, out: Option<PathBuf>) -> Result<bool> {
    let (checks, reports) = verify_suite(seed)?;
    if let Some(dir) = out {
        fs::create_dir_all(&dir)?;
        write_identity_csv(File::create(dir.join("identity_report.csv"))?, &reports)?;
    }
    let ok = print_checks(&checks);
    println!(
        "{}/{} checks passed",
        checks.iter().filter(|c| c.pass).count(),
        checks.len()
    );
    Ok(ok)
}

fn repro(args: ReproArgs) -> Result<bool> {
    let mut cfg = match &args.config {
        Some(p) => load_config(p)?,
        None => frozenlake_comparison_config(),
    };
    cfg.replicates = args.seeds;
    if let Some(n) = args.steps {
        cfg.budget = n;
    }
    cfg.validate()?;
    let cmp = frozenlake_comparison(&cfg, Some(&args.out))?;
    for e in &cmp.entries {
        println!(
            "{:<9} {:<10} final mean return {:.4} ± {:.4} (n {})",
            e.variant,
            e.algorithm.as_str(),
            e.mean,
            e.se,
            e.final_returns.len()
        );
    }
    let ok = print_checks(&cmp.checks());
    println!("outputs in {}", args.out.display());
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Verify { seed, out } => verify(seed, out),
        Command::Diagnose { run_dir, out } => {
            let out = out.unwrap_or_else(|| run_dir.join("diagnostics"));
            diagnose_run(&run_dir, &out)
                .with_context(|| format!("diagnosing {}", run_dir.display()))
                .map(|()| {
                    println!("diagnostics written to {}", out.display());
                    true
                })
        }
        Command::ReproFrozenlake(args) => repro(args),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
