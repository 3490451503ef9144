use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pzfem::cli::{cmd_oracle, cmd_solve, cmd_sweep, cmd_verify, parse_config, RunConfig};

#[derive(Parser)]
#[command(name = "pzfem", about = "Variable-exponent elliptic solver and sweep driver")]
struct Cli {
    /// Problem configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides [output] dir)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// RNG seed (overrides [solver] seed)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 picks the hardware default
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve at the configured lambda and write the solution catalogue
    Solve,
    /// Sweep the configured lambda grid and write the diagram
    Sweep,
    /// Run the property suites and print a pass/fail table
    Verify,
    /// Run the 1D shooting oracle on the configured instance
    Oracle,
}

fn run() -> Result<i32, String> {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    let path = cli.config.ok_or("--config is required")?;
    let text = std::fs::read_to_string(&path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut cfg = parse_config(&text).map_err(|e| e.to_string())?;
    if let Some(out) = cli.out {
        cfg = RunConfig {
            out_dir: Some(out.display().to_string()),
            ..cfg
        };
    }
    if let Some(seed) = cli.seed {
        cfg = RunConfig { seed, ..cfg };
    }
    let status = match cli.command {
        Command::Solve => cmd_solve(&cfg),
        Command::Sweep => cmd_sweep(&cfg),
        Command::Verify => cmd_verify(&cfg),
        Command::Oracle => cmd_oracle(&cfg),
    }
    .map_err(|e| e.to_string())?;
    Ok(status)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
