use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use homlab::config::Command;
use homlab::run::{EXIT_CONFIG, EXIT_ERROR};
use homlab::{parse_config, run, RunOptions};

/// Numerical experiments on random integral functionals with degenerate
/// linear growth.
#[derive(Debug, Parser)]
#[command(name = "homlab", version)]
struct Cli {
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the config value, then $HOMLAB_WORKERS, then all cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match parse_config(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprint!("{e}");
            return code(EXIT_CONFIG);
        }
    };
    let opts = RunOptions { seed: cli.seed, workers: cli.workers, out: cli.out };
    match run(cfg, cli.command, &opts) {
        Ok(out) => {
            let s = &out.summary;
            for r in &s.reports {
                println!("{:<32} {:<4} violations={} worst_slack={:.3e}", r.property, if r.passed { "pass" } else { "FAIL" }, r.violations, r.worst_slack);
            }
            if let Some(e) = &s.error {
                eprintln!("error: {e}");
            }
            if s.flagged {
                eprintln!("warning: flagged estimate (too many uncertified solves)");
            }
            println!("verdict: {:?}  csv: {}  summary: {}", s.verdict, out.paths.csv.display(), out.paths.summary.display());
            code(out.exit_code)
        }
        Err(e) => {
            eprint!("{e}");
            if !e.to_string().ends_with('\n') {
                eprintln!();
            }
            code(if e.exit_code() == EXIT_CONFIG { EXIT_CONFIG } else { EXIT_ERROR })
        }
    }
}
