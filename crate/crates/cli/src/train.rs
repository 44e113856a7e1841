//! `convexlab train`: run the two-phase recipe for every seed (and every
//! `k` when sweeping) and persist one record per run.

use std::path::{Path, PathBuf};

use convexlab::train::{dataset_for, EVAL_BEAM_WIDTHS};
use convexlab::{build_task, run_two_phase, sweep_k, RunRecord};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

/// Runs `cfg` on a pool of `jobs` threads (all cores when `None`).
pub fn run_experiment(cfg: &ExperimentConfig, jobs: Option<usize>) -> CliResult<Vec<RunRecord>> {
    let task = build_task(&cfg.task)?;
    let plan = cfg.phase_plan();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Input(format!("thread pool: {e}")))?;
    pool.install(|| match &cfg.k_values {
        Some(ks) => Ok(sweep_k(&plan, &task, ks, &cfg.seeds)?),
        None => cfg
            .seeds
            .par_iter()
            .map(|&s| Ok(run_two_phase(&plan, &task, dataset_for(&task, &plan, s)?, s)?))
            .collect(),
    })
}

pub fn save_records(records: &[RunRecord], dir: &Path) -> CliResult<Vec<PathBuf>> {
    records
        .iter()
        .map(|r| r.save(dir).map_err(CliError::from))
        .collect()
}

/// One human-readable line per run.
pub fn summary_line(r: &RunRecord) -> String {
    let (pre, fin) = (&r.pretrain.metrics, &r.finetune.metrics);
    let w = EVAL_BEAM_WIDTHS[0];
    let k = r.k.map_or_else(|| "-".to_string(), |k| format!("{k}"));
    format!(
        "{} seed={} class={} k={} kl={:.4}->{:.4} entropy={:.4}->{:.4} nll={:.4}->{:.4} mixture={:.3}->{:.3} gap{w}={:.3}->{:.3}",
        r.config_hash,
        r.seed,
        r.model_class.tag(),
        k,
        pre.kl_nats,
        fin.kl_nats,
        pre.entropy_nats,
        fin.entropy_nats,
        pre.output_nll,
        fin.output_nll,
        pre.mixture_rate,
        fin.mixture_rate,
        pre.greedy_beam_gap(w).unwrap_or(f64::NAN),
        fin.greedy_beam_gap(w).unwrap_or(f64::NAN),
    )
}
