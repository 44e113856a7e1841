use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mass tolerance for a valid distribution.
pub const SUM_TOL: f64 = 1e-10;

/// Minimum gap between neighbouring probabilities before they count as tied.
pub const TIE_GAP: f64 = 1e-9;

/// An explicit categorical distribution over a labelled, enumerated support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteDistribution {
    probs: Vec<f64>,
    labels: Vec<String>,
    sorted_desc: bool,
}

impl FiniteDistribution {
    pub fn new(probs: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        Self::with_tolerance(probs, labels, SUM_TOL)
    }

    /// Same as [`FiniteDistribution::new`] with a caller-chosen mass
    /// tolerance, for distributions computed by long products.
    pub fn with_tolerance(probs: Vec<f64>, labels: Vec<String>, tol: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        if probs.len() != labels.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} probabilities but {} labels",
                probs.len(),
                labels.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0 && **p <= 1.0)) {
            return Err(Error::InvalidDistribution(format!("probability {p} outside [0, 1]")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > tol {
            return Err(Error::InvalidDistribution(format!("probabilities sum to {total}")));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = labels.iter().find(|l| !seen.insert(l.as_str())) {
            return Err(Error::InvalidDistribution(format!("duplicate label {dup:?}")));
        }
        let sorted_desc = probs.windows(2).all(|w| w[0] >= w[1]);
        Ok(Self {
            probs,
            labels,
            sorted_desc,
        })
    }

    /// Labels default to `x1, x2, ...`.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        let labels = (1..=probs.len()).map(|i| format!("x{i}")).collect();
        Self::new(probs, labels)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn is_sorted_desc(&self) -> bool {
        self.sorted_desc
    }

    /// Same support, new masses.
    pub fn with_probs(&self, probs: Vec<f64>) -> Result<Self> {
        Self::new(probs, self.labels.clone())
    }

    /// Reorders atoms by descending probability (stable on ties).
    pub fn sorted(&self) -> Self {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]));
        Self {
            probs: idx.iter().map(|&i| self.probs[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
            sorted_desc: true,
        }
    }

    /// Rejects any pair of neighbouring atoms (in descending order) closer
    /// than `gap`.
    pub fn check_distinct(&self, gap: f64) -> Result<()> {
        if !self.sorted_desc {
            return Err(Error::InvalidDistribution(
                "atoms must be ordered by descending probability".into(),
            ));
        }
        for (i, w) in self.probs.windows(2).enumerate() {
            if w[0] - w[1] < gap {
                return Err(Error::TiedProbabilities {
                    i,
                    j: i + 1,
                    gap: w[0] - w[1],
                });
            }
        }
        Ok(())
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.probs)
    }

    pub fn is_one_hot(&self) -> bool {
        self.probs.iter().any(|&p| p > 1.0 - ONE_HOT_THRESHOLD)
    }
}

/// A distribution counts as one-hot when its top mass exceeds `1 - 1e-6`.
pub const ONE_HOT_THRESHOLD: f64 = 1e-6;

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Probabilities below this are treated as zero by [`kl_divergence`].
pub const KL_FLOOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlValue {
    pub nats: f64,
    /// Some data atom met a model probability below [`KL_FLOOR`]; its term
    /// was computed against the floor instead of diverging.
    pub clamped: bool,
}

/// `KL(p || q)` in nats.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> KlValue {
    assert_eq!(p.len(), q.len(), "KL over mismatched supports");
    let mut nats = 0.0;
    let mut clamped = false;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi <= 0.0 {
            continue;
        }
        let qi = if qi < KL_FLOOR {
            clamped = true;
            KL_FLOOR
        } else {
            qi
        };
        nats += pi * (pi / qi).ln();
    }
    KlValue { nats, clamped }
}
