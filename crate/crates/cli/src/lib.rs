//! Configuration and subcommand drivers behind the `ccs` binary.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{
    cmd_certify, cmd_qualify, cmd_rate_study, cmd_simulate, cmd_solve, CliError, RateStudyResult, SolveResult,
};
pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "ccs", version, about = "Dual solver for stochastic control under expectation constraints")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `outputs.dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; falls back to CCS_THREADS, then to all cores.
    #[arg(long, global = true, env = "CCS_THREADS")]
    pub threads: Option<usize>,
    /// Extend the rate study down to h = 2e-5.
    #[arg(long, global = true)]
    pub full_range: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Maximize the discrete dual and certify the result.
    Solve,
    /// Solve over a list of time steps and fit the log-log error slopes.
    RateStudy,
    /// Check the qualification condition.
    Qualify,
    /// Monte-Carlo check of the optimal policy against the exact law.
    Simulate,
    /// Check the optimality conditions at a given multiplier.
    Certify,
}

/// Runs one invocation and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    if let Some(k) = cli.threads {
        if k == 0 {
            eprintln!("config error: --threads must be at least 1");
            return 1;
        }
        // A second initialization in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    let Some(path) = &cli.config else {
        eprintln!("config error: --config PATH is required");
        return 1;
    };
    let config = match RunConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return 1;
        }
    };
    let dir = commands::output_dir(&config, cli.out.as_deref());
    let outcome = match cli.command {
        Command::Solve => cmd_solve(&config, &dir).map(|r| {
            format!(
                "lambda* = {:?}, D_h(0) = {}, iterations = {}",
                r.lambda(),
                r.solution.value,
                r.solution.trace.len()
            )
        }),
        Command::RateStudy => cmd_rate_study(&config, &dir, cli.full_range).map(|r| {
            let show = |f: Option<ccs_core::rate::LogLogFit>| f.map_or("absent".to_string(), |f| format!("{:.4}", f.slope));
            format!("value slope {}, multiplier slope {}", show(r.value_fit), show(r.lambda_fit))
        }),
        Command::Qualify => cmd_qualify(&config, &dir).map(|r| format!("qualified, margin {}", r.margin)),
        Command::Simulate => cmd_simulate(&config, &dir).map(|rows| {
            rows.iter()
                .map(|r| format!("{}: {} ± {} (exact {})", r.name, r.mean, r.se, r.exact))
                .collect::<Vec<_>>()
                .join("\n")
        }),
        Command::Certify => cmd_certify(&config, &dir).map(|c| {
            format!(
                "certified: complementarity gap {}, stationarity gap {}",
                c.complementarity_gap, c.stationarity_gap
            )
        }),
    };
    match outcome {
        Ok(msg) => {
            println!("{msg}");
            println!("outputs in {}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
