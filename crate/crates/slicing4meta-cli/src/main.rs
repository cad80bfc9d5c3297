//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 on validation/config errors, 3 on runtime
//! errors. Verbosity is controlled by the SLICING4META_LOG environment
//! variable (standard log filter syntax).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use slicing4meta::experiment::{run_sweep, sweep_csv, SweepConfig, SweepError};
use slicing4meta::sim::engine::SimError;
use slicing4meta::sim::{self, Scenario, ScenarioError};
use slicing4meta::AllocationPolicy;

const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "slicing4meta",
    about = "Deterministic metaverse service slicing simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a scenario file against the schema and semantic rules.
    Validate {
        /// Scenario JSON file.
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run one scenario and write per-user metrics.
    Run(RunArgs),
    /// Sweep mean MI over population sizes and rate conditions.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Override the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Metrics CSV output path.
    #[arg(long, default_value = "metrics.csv")]
    out: PathBuf,
    /// Also write the JSON-lines event trace next to the CSV.
    #[arg(long)]
    trace: bool,
    /// Dump the final pool state as JSON to this path.
    #[arg(long)]
    dump_pool: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Seed for the object-count draws.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output CSV path.
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
    /// Rendering allocation policy.
    #[arg(long, default_value = "even")]
    policy: String,
    /// Rate conditions in Mb/s.
    #[arg(long, value_delimiter = ',', default_values_t = vec![50.0, 100.0, 200.0, 400.0])]
    rates: Vec<f64>,
    /// Population sizes to evaluate.
    #[arg(long = "n-users", value_delimiter = ',',
          default_values_t = vec![10, 20, 30, 40, 50, 60, 70, 80, 90, 100])]
    n_users: Vec<u32>,
    /// Total rendering capacity in K.
    #[arg(long, default_value_t = 4000.0)]
    total_rendering: f64,
    /// Uplink bit error probability shared by all users.
    #[arg(long, default_value_t = 0.001)]
    bep: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::default().filter_or("SLICING4META_LOG", "warn"),
    )
    .init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Validate { scenario } => cmd_validate(&scenario),
        Command::Run(args) => cmd_run(&args),
        Command::Sweep(args) => cmd_sweep(&args),
    };
    ExitCode::from(code)
}

fn cmd_validate(path: &Path) -> u8 {
    match Scenario::from_path(path) {
        Ok(_) => {
            println!("{}: valid", path.display());
            0
        }
        Err(ScenarioError::Io(e)) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            EXIT_RUNTIME
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_VALIDATION
        }
    }
}

fn cmd_run(args: &RunArgs) -> u8 {
    let mut scenario = match Scenario::from_path(&args.scenario) {
        Ok(s) => s,
        Err(ScenarioError::Io(e)) => {
            eprintln!("error: cannot read {}: {e}", args.scenario.display());
            return EXIT_RUNTIME;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_VALIDATION;
        }
    };
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let report = match sim::run(&scenario) {
        Ok(r) => r,
        Err(SimError::Scenario(e)) => {
            eprintln!("error: {e}");
            return EXIT_VALIDATION;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    };
    if let Err(e) = std::fs::write(&args.out, report.users_csv()) {
        eprintln!("error: cannot write {}: {e}", args.out.display());
        return EXIT_RUNTIME;
    }
    println!("metrics: {}", args.out.display());
    if args.trace {
        let trace_path = sibling(&args.out, "trace.jsonl");
        if let Err(e) = std::fs::write(&trace_path, report.trace_jsonl()) {
            eprintln!("error: cannot write {}: {e}", trace_path.display());
            return EXIT_RUNTIME;
        }
        println!("trace: {}", trace_path.display());
    }
    if let Some(pool_path) = &args.dump_pool {
        let snapshot = serde_json::to_string_pretty(&report.pool).expect("snapshot serializes");
        if let Err(e) = std::fs::write(pool_path, snapshot) {
            eprintln!("error: cannot write {}: {e}", pool_path.display());
            return EXIT_RUNTIME;
        }
        println!("pool: {}", pool_path.display());
    }
    println!("{}", report.summary_line());
    0
}

fn cmd_sweep(args: &SweepArgs) -> u8 {
    let policy: AllocationPolicy = match args.policy.parse() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_VALIDATION;
        }
    };
    let config = SweepConfig {
        total_rendering: args.total_rendering,
        n_users: args.n_users.clone(),
        rates: args.rates.clone(),
        bep: args.bep,
        seed: args.seed,
        policy,
        ..SweepConfig::default()
    };
    let rows = match run_sweep(&config) {
        Ok(rows) => rows,
        Err(e @ SweepError::ConfigInvalid { .. }) => {
            eprintln!("error: {e}");
            return EXIT_VALIDATION;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_RUNTIME;
        }
    };
    if let Err(e) = std::fs::write(&args.out, sweep_csv(&rows)) {
        eprintln!("error: cannot write {}: {e}", args.out.display());
        return EXIT_RUNTIME;
    }
    println!(
        "sweep: {} rows ({} populations x {} rates) -> {}",
        rows.len(),
        args.n_users.len(),
        args.rates.len(),
        args.out.display()
    );
    0
}

/// `metrics.csv` -> `metrics.trace.jsonl` next to it.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    out.with_file_name(format!("{stem}.{suffix}"))
}
