//! Command-line front end for `convexlab`: optimal-distribution checks,
//! gradient checks, training sweeps and result reports.

pub mod config;
pub mod error;
pub mod oracle;
pub mod report;
pub mod train;

pub use config::{ExperimentConfig, RESULTS_DIR_ENV};
pub use error::{exit, CliError, CliResult};
pub use oracle::{read_distribution, run_oracle, FamilyArg, OracleArgs, OracleOutput, VariantArg};
pub use report::{run_report, ReportOptions, ReportOutput};
pub use train::{run_experiment, save_records, summary_line};
