//! `convexlab report`: flatten run records into `summary.csv` and per-k
//! series files.
//!
//! Floats are written in scientific notation with 17 significant digits so
//! that every value round-trips exactly.

use std::path::{Path, PathBuf};

use convexlab::{MetricsBundle, ModelClass, RunRecord};

use crate::error::{CliError, CliResult};

pub const SUMMARY_FILE: &str = "summary.csv";

pub const SUMMARY_COLUMNS: [&str; 13] = [
    "config_hash",
    "model_class",
    "k",
    "seed",
    "phase",
    "kl_nats",
    "entropy_nats",
    "output_nll",
    "mixture_rate",
    "greedy_match",
    "beam5_match",
    "exact_match",
    "wall_ms",
];

/// Metrics averaged per `k` in the series files.
pub const SERIES_METRICS: [&str; 5] = ["kl_nats", "entropy_nats", "output_nll", "mixture_rate", "exact_match"];

pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReportOptions {
    /// Also emit a `pretrain` row per record.
    pub include_pretrain: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportOutput {
    pub records: usize,
    pub summary: PathBuf,
    pub series: Vec<PathBuf>,
}

/// Every `*.json` file in `dir` that parses as a run record, in a stable
/// order. Other JSON files are skipped.
pub fn load_records(dir: &Path) -> CliResult<Vec<RunRecord>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut records: Vec<RunRecord> = paths.iter().filter_map(|p| RunRecord::load(p).ok()).collect();
    records.sort_by(|a, b| {
        a.model_class
            .tag()
            .cmp(b.model_class.tag())
            .then(a.k.unwrap_or(f64::NAN).total_cmp(&b.k.unwrap_or(f64::NAN)))
            .then(a.seed.cmp(&b.seed))
            .then(a.config_hash.cmp(&b.config_hash))
    });
    Ok(records)
}

fn metric(m: &MetricsBundle, name: &str) -> f64 {
    match name {
        "kl_nats" => m.kl_nats,
        "entropy_nats" => m.entropy_nats,
        "output_nll" => m.output_nll,
        "mixture_rate" => m.mixture_rate,
        "exact_match" => m.exact_match,
        _ => unreachable!("unknown metric {name}"),
    }
}

fn k_field(k: Option<f64>) -> String {
    k.map(fmt_float).unwrap_or_default()
}

pub fn write_summary(records: &[RunRecord], path: &Path, opts: ReportOptions) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_COLUMNS)?;
    for r in records {
        let phases = if opts.include_pretrain {
            vec![("pretrain", &r.pretrain), ("finetune", &r.finetune)]
        } else {
            vec![("finetune", &r.finetune)]
        };
        for (name, phase) in phases {
            let m = &phase.metrics;
            w.write_record([
                r.config_hash.clone(),
                r.model_class.tag().to_string(),
                k_field(r.k),
                r.seed.to_string(),
                name.to_string(),
                fmt_float(m.kl_nats),
                fmt_float(m.entropy_nats),
                fmt_float(m.output_nll),
                fmt_float(m.mixture_rate),
                fmt_float(m.greedy_match),
                m.beam_match_rate(5).map(fmt_float).unwrap_or_default(),
                fmt_float(m.exact_match),
                phase.wall_ms.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One row per `k` with the mean and standard deviation over seeds of each
/// finetune metric in [`SERIES_METRICS`].
pub fn write_series(records: &[&RunRecord], path: &Path) -> CliResult<()> {
    let mut groups: Vec<(Option<f64>, Vec<&RunRecord>)> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|(k, _)| k.map(f64::to_bits) == r.k.map(f64::to_bits)) {
            Some((_, runs)) => runs.push(r),
            None => groups.push((r.k, vec![r])),
        }
    }
    // numeric k order; runs without k last
    groups.sort_by(|a, b| a.0.unwrap_or(f64::INFINITY).total_cmp(&b.0.unwrap_or(f64::INFINITY)));
    let mut header = vec!["k".to_string(), "n".to_string()];
    for m in SERIES_METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&header)?;
    for (k, runs) in &groups {
        let mut row = vec![k_field(*k), runs.len().to_string()];
        for m in SERIES_METRICS {
            let xs: Vec<f64> = runs.iter().map(|r| metric(&r.finetune.metrics, m)).collect();
            let (mean, std) = mean_std(&xs);
            row.push(fmt_float(mean));
            row.push(fmt_float(std));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub fn series_file_name(class: ModelClass) -> String {
    format!("series_{}.csv", class.tag().to_lowercase())
}

/// Writes `summary.csv` and one `series_<class>.csv` per model class found
/// in `dir`.
pub fn run_report(dir: &Path, opts: ReportOptions) -> CliResult<ReportOutput> {
    let records = load_records(dir)?;
    if records.is_empty() {
        return Err(CliError::Input(format!("no run records in {}", dir.display())));
    }
    let summary = dir.join(SUMMARY_FILE);
    write_summary(&records, &summary, opts)?;
    let mut series = Vec::new();
    for class in [ModelClass::Autoregressive, ModelClass::NonAutoregressive] {
        let subset: Vec<&RunRecord> = records.iter().filter(|r| r.model_class == class).collect();
        if subset.is_empty() {
            continue;
        }
        let path = dir.join(series_file_name(class));
        write_series(&subset, &path)?;
        series.push(path);
    }
    Ok(ReportOutput {
        records: records.len(),
        summary,
        series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mean_std_small_cases() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn floats_round_trip(x in proptest::num::f64::NORMAL | proptest::num::f64::ZERO) {
            let s = fmt_float(x);
            prop_assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }
}
