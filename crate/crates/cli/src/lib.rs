//! Experiment driver: configuration, orchestration and result files.

pub mod config;
pub mod records;
pub mod run;

pub use config::{parse_config, parse_config_str, Command, ConfigError, ConfigErrors, RunConfig};
pub use records::{strip_timing, ResultRecord, RunSummary, Verdict};
pub use run::{run, RunError, RunOptions, RunOutcome, WORKERS_ENV};
