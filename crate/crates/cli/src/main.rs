use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use convexlab::gradcheck::{run_gradcheck, DEFAULT_FD_EPS};
use convexlab_cli::{
    exit, read_distribution, run_experiment, run_oracle, run_report, save_records, summary_line, CliError,
    CliResult, ExperimentConfig, FamilyArg, OracleArgs, ReportOptions, VariantArg, RESULTS_DIR_ENV,
};

#[derive(Debug, Parser)]
#[command(name = "convexlab", version, about = "Convex-composition losses on exactly enumerable toy models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve for the optimal distribution and check its properties.
    Oracle {
        /// CSV of `label,prob` rows.
        #[arg(long)]
        dist: PathBuf,
        #[arg(long, value_enum)]
        family: FamilyArg,
        #[arg(long)]
        k: Option<f64>,
        /// Sequence length used for length normalization.
        #[arg(long = "t", default_value_t = 1)]
        horizon: usize,
        #[arg(long, value_enum, default_value = "identity")]
        convex_variant: VariantArg,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Finite-difference check of every loss family on both model classes.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_FD_EPS)]
        eps: f64,
    },
    /// Run the two-phase recipe described by a JSON config.
    Train {
        config: PathBuf,
        /// Parallel runs (defaults to all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Aggregate run records into CSV tables.
    Report {
        /// Defaults to $CONVEXLAB_RESULTS_DIR, then `results`.
        results_dir: Option<PathBuf>,
        #[arg(long)]
        include_pretrain: bool,
    },
}

fn print_json(value: &impl serde::Serialize) -> CliResult<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn run(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::Oracle {
            dist,
            family,
            k,
            horizon,
            convex_variant,
            tol,
            max_iters,
        } => {
            let mut args = OracleArgs::new(family);
            args.k = k;
            args.horizon = horizon;
            args.variant = convex_variant;
            args.tol = tol;
            if let Some(n) = max_iters {
                args.max_iters = n;
            }
            let out = run_oracle(&read_distribution(&dist)?, &args)?;
            print_json(&out)?;
            Ok(if out.passed { exit::OK } else { exit::CHECK_FAILED })
        }
        Command::Gradcheck { seed, tol, eps } => {
            let report = run_gradcheck(seed, eps, tol)?;
            print_json(&report)?;
            Ok(if report.passed { exit::OK } else { exit::CHECK_FAILED })
        }
        Command::Train { config, jobs } => {
            if jobs == Some(0) {
                return Err(CliError::Input("--jobs must be at least 1".into()));
            }
            let cfg = ExperimentConfig::load(&config)?;
            let dir = cfg.results_dir();
            let records = run_experiment(&cfg, jobs)?;
            save_records(&records, &dir)?;
            for r in &records {
                println!("{}", summary_line(r));
            }
            eprintln!("{} run(s) written to {}", records.len(), dir.display());
            Ok(exit::OK)
        }
        Command::Report {
            results_dir,
            include_pretrain,
        } => {
            let dir = results_dir
                .or_else(|| std::env::var_os(RESULTS_DIR_ENV).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("results"));
            let out = run_report(&dir, ReportOptions { include_pretrain })?;
            println!("{} record(s) -> {}", out.records, out.summary.display());
            for s in &out.series {
                println!("series -> {}", s.display());
            }
            Ok(exit::OK)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
