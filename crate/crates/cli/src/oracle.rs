//! `convexlab oracle`: solve for the optimal distribution under a loss
//! family and check the ordering, crossing and entropy properties.

use std::path::Path;

use clap::ValueEnum;
use convexlab::dist::TIE_GAP;
use convexlab::oracle::{closed_form_optimal, solve_optimal, verify_theorems_with, VerifyOptions};
use convexlab::{ConvexVariant, FiniteDistribution, LossFamily, SimplexObjective, SolverConfig, TheoremReport};
use serde::Serialize;

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Log,
    Exp,
    Power,
    Convex,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Identity,
    Exp,
}

#[derive(Clone, Debug)]
pub struct OracleArgs {
    pub family: FamilyArg,
    pub k: Option<f64>,
    pub horizon: usize,
    pub variant: VariantArg,
    pub tol: f64,
    pub max_iters: usize,
}

impl OracleArgs {
    pub fn new(family: FamilyArg) -> Self {
        Self {
            family,
            k: None,
            horizon: 1,
            variant: VariantArg::Identity,
            tol: 1e-6,
            max_iters: SolverConfig::default().max_iters,
        }
    }

    pub fn loss_family(&self) -> CliResult<LossFamily> {
        let need_k = || self.k.ok_or_else(|| CliError::config("k", "required for exp and power families"));
        Ok(match self.family {
            FamilyArg::Log => LossFamily::Log,
            FamilyArg::Exp => LossFamily::exp_composed(need_k()?)?,
            FamilyArg::Power => LossFamily::power_composed(need_k()?)?,
            FamilyArg::Convex => LossFamily::pure_convex(match self.variant {
                VariantArg::Identity => ConvexVariant::Identity,
                VariantArg::Exp => ConvexVariant::Exp,
            }),
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleOutput {
    pub family: LossFamily,
    pub horizon: usize,
    pub labels: Vec<String>,
    pub p_data: Vec<f64>,
    pub p_g: Vec<f64>,
    pub p_fg: Vec<f64>,
    pub closed_form: Option<Vec<f64>>,
    pub loss_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    pub report: TheoremReport,
    pub passed: bool,
}

/// Reads `label,prob` rows. A header row is skipped when its second field
/// is not a number.
pub fn read_distribution(path: &Path) -> CliResult<FiniteDistribution> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut labels = Vec::new();
    let mut probs = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        if row.len() != 2 {
            return Err(CliError::Input(format!("line {}: expected `label,prob`", i + 1)));
        }
        match row[1].parse::<f64>() {
            Ok(p) => {
                labels.push(row[0].to_string());
                probs.push(p);
            }
            Err(_) if i == 0 => continue,
            Err(_) => return Err(CliError::Input(format!("line {}: bad probability {:?}", i + 1, &row[1]))),
        }
    }
    Ok(FiniteDistribution::new(probs, labels)?.sorted())
}

/// Solves the `log` baseline and the requested family on `p_data`, then
/// verifies the result.
pub fn run_oracle(p_data: &FiniteDistribution, args: &OracleArgs) -> CliResult<OracleOutput> {
    let p_data = p_data.sorted();
    p_data.check_distinct(TIE_GAP)?;
    let family = args.loss_family()?;
    let cfg = SolverConfig {
        max_iters: args.max_iters,
        ..SolverConfig::default()
    };
    let baseline = solve_optimal(&p_data, &SimplexObjective::new(LossFamily::Log, args.horizon)?, &cfg)?;
    let objective = SimplexObjective::new(family, args.horizon)?;
    let solved = solve_optimal(&p_data, &objective, &cfg)?;
    if !baseline.converged || !solved.converged {
        return Err(CliError::NonConvergence(format!(
            "kkt residual {:.3e} after {} iterations",
            solved.kkt_residual.max(baseline.kkt_residual),
            solved.iterations
        )));
    }
    let opts = VerifyOptions {
        expect_one_hot: matches!(family, LossFamily::PureConvex { .. }),
        ..VerifyOptions::new(args.tol)
    };
    let report = verify_theorems_with(&p_data, &baseline.p_f, &solved.p_f, &opts)?;
    Ok(OracleOutput {
        family,
        horizon: args.horizon,
        labels: p_data.labels().to_vec(),
        p_data: p_data.probs().to_vec(),
        p_g: baseline.p_f.probs().to_vec(),
        p_fg: solved.p_f.probs().to_vec(),
        closed_form: closed_form_optimal(&p_data, &objective).map(|d| d.probs().to_vec()),
        loss_value: solved.loss_value,
        iterations: solved.iterations,
        converged: solved.converged,
        kkt_residual: solved.kkt_residual,
        passed: report.all_passed(),
        report,
    })
}
