//! Finite-difference validation of the training gradients for every loss
//! family and model class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::Result;
use crate::loss::{ConvexVariant, LossFamily};
use crate::models::{ModelClass, ModelConfig, NeuralModel, SequenceModel, Vocab};
use crate::train::{batch_loss, GradPath};

pub const DEFAULT_FD_EPS: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckEntry {
    pub family: String,
    pub model_class: ModelClass,
    pub max_rel_err: f64,
    pub worst_parameter: String,
    /// Largest absolute difference between the exact and detached-weight
    /// gradients.
    pub detached_max_abs_diff: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub eps: f64,
    pub tol: f64,
    pub entries: Vec<GradcheckEntry>,
    pub max_rel_err: f64,
    pub detached_max_abs_diff: f64,
    pub passed: bool,
}

/// Families covered by [`run_gradcheck`].
pub fn gradcheck_families() -> Vec<LossFamily> {
    vec![
        LossFamily::Log,
        LossFamily::ExpComposed { k: 1.0 },
        LossFamily::ExpComposed { k: 3.0 },
        LossFamily::PowerComposed { k: 0.5 },
        LossFamily::PureConvex {
            variant: ConvexVariant::Identity,
        },
        LossFamily::PureConvex {
            variant: ConvexVariant::Exp,
        },
    ]
}

/// Tolerance on exact vs detached-weight gradients.
pub const DETACHED_TOL: f64 = 1e-10;

/// Random small model plus a random batch.
fn fixture(class: ModelClass, seed: u64) -> Result<(NeuralModel, Vec<usize>, Vec<Vec<usize>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig {
        vocab: Vocab::with_size(3)?,
        seq_len: 3,
        num_contexts: 2,
        embed_dim: 3,
        hidden_dim: 5,
    };
    let mut model = NeuralModel::new(class, cfg, rng.gen())?;
    // larger weights than the default init so every op sees non-trivial inputs
    for t in model.params_mut().tensors_mut() {
        t.data_mut().iter_mut().for_each(|x| *x *= 8.0);
    }
    let contexts: Vec<usize> = (0..4).map(|_| rng.gen_range(0..2)).collect();
    let seqs = (0..4).map(|_| (0..3).map(|_| rng.gen_range(0..3)).collect()).collect();
    Ok((model, contexts, seqs))
}

fn gradients(
    model: &NeuralModel,
    contexts: &[usize],
    seqs: &[Vec<usize>],
    family: &LossFamily,
    path: GradPath,
) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let params = model.params().attach(&mut g);
    let loss = batch_loss(&mut g, model, &params, contexts, seqs, family, 0.0, path, f64::INFINITY, 0)?;
    g.backward(loss)?;
    Ok(params
        .iter()
        .flat_map(|v| g.grad(*v).map(|t| t.data().to_vec()).unwrap_or_default())
        .collect())
}

pub fn check_one(family: &LossFamily, class: ModelClass, seed: u64, eps: f64, tol: f64) -> Result<GradcheckEntry> {
    let (model, contexts, seqs) = fixture(class, seed)?;
    let mut g = Graph::new();
    let params = model.params().attach(&mut g);
    let loss = batch_loss(&mut g, &model, &params, &contexts, &seqs, family, 0.0, GradPath::Exact, f64::INFINITY, 0)?;
    let fd = g.finite_diff_check(loss, eps, tol)?;
    let exact = gradients(&model, &contexts, &seqs, family, GradPath::Exact)?;
    let detached = gradients(&model, &contexts, &seqs, family, GradPath::Detached)?;
    let diff = exact
        .iter()
        .zip(&detached)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    debug_assert_eq!(model.seq_len(), 3);
    Ok(GradcheckEntry {
        family: family.tag(),
        model_class: class,
        max_rel_err: fd.max_rel_err,
        worst_parameter: fd.worst_parameter,
        detached_max_abs_diff: diff,
        passed: fd.passed && diff <= DETACHED_TOL,
    })
}

/// Every family in [`gradcheck_families`] on both model classes.
pub fn run_gradcheck(seed: u64, eps: f64, tol: f64) -> Result<GradcheckReport> {
    let mut entries = Vec::new();
    for family in gradcheck_families() {
        for class in [ModelClass::Autoregressive, ModelClass::NonAutoregressive] {
            entries.push(check_one(&family, class, seed, eps, tol)?);
        }
    }
    let max_rel_err = entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max);
    let detached_max_abs_diff = entries.iter().map(|e| e.detached_max_abs_diff).fold(0.0, f64::max);
    Ok(GradcheckReport {
        seed,
        eps,
        tol,
        passed: entries.iter().all(|e| e.passed),
        entries,
        max_rel_err,
        detached_max_abs_diff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_families_pass() {
        let r = run_gradcheck(0, DEFAULT_FD_EPS, 1e-4).unwrap();
        assert_eq!(r.entries.len(), 12);
        for e in &r.entries {
            assert!(e.passed, "{e:?}");
        }
        assert!(r.detached_max_abs_diff <= 1e-10);
    }

    #[test]
    fn rerun_is_identical() {
        assert_eq!(run_gradcheck(5, 1e-4, 1e-4).unwrap(), run_gradcheck(5, 1e-4, 1e-4).unwrap());
    }

    #[test]
    fn tiny_tolerance_exposes_fd_noise() {
        assert!(!run_gradcheck(0, 1e-4, 1e-12).unwrap().passed);
    }
}
