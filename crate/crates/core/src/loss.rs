//! Loss families built by composing an increasing convex `f` with the
//! length-normalized log-probability `g(p) = log(p) / T`.
//!
//! Everything here works on natural-log sequence probabilities; a sentence
//! probability is never exponentiated before it is divided by its length.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Convex `f` applied directly to the sequence probability.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvexVariant {
    /// `f(p) = p`
    Identity,
    /// `f(p) = e^p`
    Exp,
}

impl ConvexVariant {
    pub fn value(self, p: f64) -> f64 {
        match self {
            ConvexVariant::Identity => p,
            ConvexVariant::Exp => p.exp(),
        }
    }

    pub fn derivative(self, p: f64) -> f64 {
        match self {
            ConvexVariant::Identity => 1.0,
            ConvexVariant::Exp => p.exp(),
        }
    }

    pub fn second_derivative(self, p: f64) -> f64 {
        match self {
            ConvexVariant::Identity => 0.0,
            ConvexVariant::Exp => p.exp(),
        }
    }
}

/// Which training objective is in force.
///
/// Construct through [`LossFamily::exp_composed`] and friends, or
/// deserialize; both paths validate `k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "RawFamily")]
pub enum LossFamily {
    /// Standard MLE, `-log(p) / T`.
    Log,
    /// `f(x) = e^{kx}`, giving `fg(p) = p^{k/T}`.
    ExpComposed { k: f64 },
    /// `f(x) = -(-x)^k` with `0 < k <= 1`.
    PowerComposed { k: f64 },
    /// A convex `f` on the raw sequence probability, no `g`.
    PureConvex { variant: ConvexVariant },
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawFamily {
    Log,
    ExpComposed { k: f64 },
    PowerComposed { k: f64 },
    PureConvex { variant: ConvexVariant },
}

impl TryFrom<RawFamily> for LossFamily {
    type Error = Error;

    fn try_from(raw: RawFamily) -> Result<Self> {
        match raw {
            RawFamily::Log => Ok(LossFamily::Log),
            RawFamily::ExpComposed { k } => LossFamily::exp_composed(k),
            RawFamily::PowerComposed { k } => LossFamily::power_composed(k),
            RawFamily::PureConvex { variant } => Ok(LossFamily::PureConvex { variant }),
        }
    }
}

impl LossFamily {
    pub fn exp_composed(k: f64) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::InvalidFamily(format!(
                "exp-composed exponent must be positive, got {k}"
            )));
        }
        Ok(LossFamily::ExpComposed { k })
    }

    pub fn power_composed(k: f64) -> Result<Self> {
        if !(k > 0.0 && k <= 1.0) {
            return Err(Error::InvalidFamily(format!(
                "power-composed exponent must lie in (0, 1], got {k}"
            )));
        }
        Ok(LossFamily::PowerComposed { k })
    }

    pub fn pure_convex(variant: ConvexVariant) -> Self {
        LossFamily::PureConvex { variant }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LossFamily::ExpComposed { k } => Self::exp_composed(k).map(|_| ()),
            LossFamily::PowerComposed { k } => Self::power_composed(k).map(|_| ()),
            _ => Ok(()),
        }
    }

    pub fn k(&self) -> Option<f64> {
        match *self {
            LossFamily::ExpComposed { k } | LossFamily::PowerComposed { k } => Some(k),
            _ => None,
        }
    }

    /// Same family with exponent `k`; only the exp and power forms take one.
    pub fn with_k(&self, k: f64) -> Result<Self> {
        match self {
            LossFamily::ExpComposed { .. } => Self::exp_composed(k),
            LossFamily::PowerComposed { .. } => Self::power_composed(k),
            other => Err(Error::InvalidFamily(format!("{} has no exponent", other.tag()))),
        }
    }

    pub fn is_log(&self) -> bool {
        matches!(self, LossFamily::Log)
    }

    /// Short stable name used in reports and file names.
    pub fn tag(&self) -> String {
        match *self {
            LossFamily::Log => "log".to_string(),
            LossFamily::ExpComposed { k } => format!("exp-k{k}"),
            LossFamily::PowerComposed { k } => format!("power-k{k}"),
            LossFamily::PureConvex { variant: ConvexVariant::Identity } => "convex-identity".into(),
            LossFamily::PureConvex { variant: ConvexVariant::Exp } => "convex-exp".into(),
        }
    }

    /// Loss as a function of the length-normalized log-probability `g` for a
    /// sequence of length `len`.
    pub fn loss_at(&self, g: f64, len: usize) -> f64 {
        match *self {
            LossFamily::Log => -g,
            LossFamily::ExpComposed { k } => -(k * g).exp(),
            LossFamily::PowerComposed { k } => {
                if g == 0.0 {
                    0.0
                } else {
                    (-g).powf(k)
                }
            }
            LossFamily::PureConvex { variant } => -variant.value((g * len as f64).exp()),
        }
    }

    /// `-d loss / d g`. For the composed families this is `f'(g(p))`; for the
    /// pure convex family it is `T f'(p) p`, the factor that turns the
    /// length-normalized log-loss gradient into the composed one.
    pub fn weight_at(&self, g: f64, len: usize) -> f64 {
        match *self {
            LossFamily::Log => 1.0,
            LossFamily::ExpComposed { k } => k * (k * g).exp(),
            LossFamily::PowerComposed { k } => {
                if g == 0.0 {
                    if k < 1.0 {
                        f64::INFINITY
                    } else {
                        1.0
                    }
                } else {
                    k * (-g).powf(k - 1.0)
                }
            }
            LossFamily::PureConvex { variant } => {
                let p = (g * len as f64).exp();
                len as f64 * variant.derivative(p) * p
            }
        }
    }
}

/// Per-token natural-log probabilities of one sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceLogProb {
    token_logprobs: Vec<f64>,
    total: f64,
}

impl SequenceLogProb {
    pub fn new(token_logprobs: Vec<f64>) -> Result<Self> {
        if token_logprobs.is_empty() {
            return Err(Error::Domain("sequence must have at least one token".into()));
        }
        if let Some(bad) = token_logprobs.iter().find(|lp| lp.is_nan() || **lp > 0.0) {
            return Err(Error::Domain(format!("token log-probability {bad} is not <= 0")));
        }
        let total = token_logprobs.iter().sum();
        Ok(Self {
            token_logprobs,
            total,
        })
    }

    /// A sequence of `len` tokens sharing `total` evenly.
    pub fn uniform(total: f64, len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::Domain("sequence must have at least one token".into()));
        }
        Self::new(vec![total / len as f64; len])
    }

    pub fn token_logprobs(&self) -> &[f64] {
        &self.token_logprobs
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.token_logprobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_logprobs.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossEval {
    pub loss: f64,
    /// `f'(g(p))`; `+inf` flags the power form at `p = 1`.
    pub weight: f64,
    pub g_value: f64,
}

impl LossEval {
    pub fn is_singular(&self) -> bool {
        self.weight.is_infinite()
    }
}

pub fn eval_g(seq: &SequenceLogProb) -> f64 {
    seq.total() / seq.len() as f64
}

pub fn eval_loss(family: &LossFamily, seq: &SequenceLogProb) -> LossEval {
    let g = eval_g(seq);
    LossEval {
        loss: family.loss_at(g, seq.len()),
        weight: family.weight_at(g, seq.len()),
        g_value: g,
    }
}

pub fn eval_weight(family: &LossFamily, seq: &SequenceLogProb) -> f64 {
    family.weight_at(eval_g(seq), seq.len())
}

/// Interpolates the composed loss with a label-smoothing term, scaling the
/// smoothing term by the same weight `f'(g(p))` so the ratio between the two
/// matches plain MLE with smoothing.
pub fn eval_smoothed_loss(
    family: &LossFamily,
    seq: &SequenceLogProb,
    smoothing_loss: f64,
    eps_ls: f64,
) -> Result<f64> {
    if !(0.0..1.0).contains(&eps_ls) {
        return Err(Error::Domain(format!("eps_ls must lie in [0, 1), got {eps_ls}")));
    }
    let eval = eval_loss(family, seq);
    if eps_ls == 0.0 {
        return Ok(eval.loss);
    }
    if eval.is_singular() {
        return Err(Error::SmoothingUndefined);
    }
    Ok((1.0 - eps_ls) * eval.loss + eps_ls * eval.weight * smoothing_loss)
}

/// `g'''(x) g'(x) - g''(x)^2` for `g = log`, which works out to `1/x^4`.
pub fn check_g_condition(x: f64) -> Result<f64> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::Domain(format!("x must lie in (0, 1), got {x}")));
    }
    let d1 = 1.0 / x;
    let d2 = -1.0 / (x * x);
    let d3 = 2.0 / (x * x * x);
    Ok(d3 * d1 - d2 * d2)
}

/// A function of the raw sequence probability, used to illustrate how the
/// gradient scale `f'(P) P` behaves as sequences get longer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbabilityFn {
    Log,
    Convex(ConvexVariant),
}

impl ProbabilityFn {
    pub fn grad_scale(self, seq_prob: f64) -> f64 {
        match self {
            ProbabilityFn::Log => (1.0 / seq_prob) * seq_prob,
            ProbabilityFn::Convex(v) => v.derivative(seq_prob) * seq_prob,
        }
    }
}

/// Gradient scale `f'(p^T) p^T` with `f(p) = p` for each length in `lengths`.
pub fn grad_vanishing_profile(per_token_p: f64, lengths: &[usize]) -> Result<Vec<(usize, f64)>> {
    grad_scale_profile(ProbabilityFn::Convex(ConvexVariant::Identity), per_token_p, lengths)
}

pub fn grad_scale_profile(
    f: ProbabilityFn,
    per_token_p: f64,
    lengths: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if !(per_token_p > 0.0 && per_token_p < 1.0) {
        return Err(Error::Domain(format!(
            "per-token probability must lie in (0, 1), got {per_token_p}"
        )));
    }
    if lengths.contains(&0) {
        return Err(Error::Domain("sequence lengths must be positive".into()));
    }
    Ok(lengths
        .iter()
        .map(|&t| (t, f.grad_scale(per_token_p.powi(t as i32))))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn seq(lps: &[f64]) -> SequenceLogProb {
        SequenceLogProb::new(lps.to_vec()).unwrap()
    }

    #[test]
    fn g_examples() {
        assert_eq!(eval_g(&seq(&[0.0, 0.0])), 0.0);
        assert_eq!(eval_g(&seq(&[-1.0, -1.0, -1.0, -1.0])), -1.0);
        assert_eq!(eval_g(&seq(&[-0.5, -1.5])), -1.0);
    }

    #[test]
    fn family_construction() {
        assert!(LossFamily::power_composed(0.0).is_err());
        assert!(LossFamily::power_composed(1.5).is_err());
        assert!(LossFamily::power_composed(1.0).is_ok());
        assert!(LossFamily::exp_composed(0.0).is_err());
        assert!(LossFamily::exp_composed(-2.0).is_err());
        assert!(LossFamily::exp_composed(8.0).is_ok());
        let bad: std::result::Result<LossFamily, _> =
            serde_json::from_str(r#"{"kind":"power_composed","k":2.0}"#);
        assert!(bad.is_err());
        let ok: LossFamily = serde_json::from_str(r#"{"kind":"exp_composed","k":2.0}"#).unwrap();
        assert_eq!(ok, LossFamily::ExpComposed { k: 2.0 });
    }

    #[test]
    fn loss_examples() {
        let e = eval_loss(&LossFamily::exp_composed(1.0).unwrap(), &seq(&[-1.0, -1.0]));
        assert_relative_eq!(e.loss, -(-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(e.loss, -0.36788, epsilon = 1e-5);

        let e = eval_loss(&LossFamily::Log, &seq(&[-0.5, -1.5]));
        assert_eq!(e.loss, 1.0);
        assert_eq!(e.weight, 1.0);

        let e = eval_loss(&LossFamily::power_composed(0.5).unwrap(), &seq(&[-2.0, -2.0]));
        assert_relative_eq!(e.loss, 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn weight_examples() {
        let s = SequenceLogProb::uniform(0.01f64.ln(), 4).unwrap();
        let w = eval_weight(&LossFamily::exp_composed(2.0).unwrap(), &s);
        assert_relative_eq!(w, 0.2, epsilon = 1e-12);

        assert_eq!(eval_weight(&LossFamily::Log, &seq(&[-3.0, -0.2])), 1.0);

        let w = eval_weight(&LossFamily::power_composed(0.5).unwrap(), &seq(&[-1.0]));
        assert_relative_eq!(w, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn power_form_at_probability_one() {
        let fam = LossFamily::power_composed(0.5).unwrap();
        let e = eval_loss(&fam, &seq(&[0.0, 0.0]));
        assert_eq!(e.loss, 0.0);
        assert!(e.is_singular());
        let err = eval_smoothed_loss(&fam, &seq(&[0.0, 0.0]), 1.0, 0.1).unwrap_err();
        assert!(matches!(err, Error::SmoothingUndefined));
        assert_eq!(err.to_string(), "smoothing undefined at p=1 for power form");
        // k = 1 degenerates to the linear form, which is regular at p = 1
        let e = eval_loss(&LossFamily::power_composed(1.0).unwrap(), &seq(&[0.0]));
        assert_eq!(e.weight, 1.0);
    }

    #[test]
    fn smoothed_loss_examples() {
        let fam = LossFamily::exp_composed(1.0).unwrap();
        let s = seq(&[-0.7, -0.1]);
        assert_eq!(eval_smoothed_loss(&fam, &s, 3.0, 0.0).unwrap(), eval_loss(&fam, &s).loss);

        let nll_t = eval_loss(&LossFamily::Log, &s).loss;
        let v = eval_smoothed_loss(&LossFamily::Log, &s, 2.5, 0.1).unwrap();
        assert_relative_eq!(v, 0.9 * nll_t + 0.1 * 2.5, epsilon = 1e-15);

        let half = seq(&[0.5f64.ln()]);
        let v = eval_smoothed_loss(&fam, &half, 2.0, 0.5).unwrap();
        assert_relative_eq!(v, 0.25, epsilon = 1e-15);

        assert!(eval_smoothed_loss(&fam, &half, 2.0, 1.0).is_err());
    }

    #[test]
    fn g_condition() {
        assert_relative_eq!(check_g_condition(0.5).unwrap(), 16.0, epsilon = 1e-12);
        assert_relative_eq!(check_g_condition(0.1).unwrap(), 10000.0, max_relative = 1e-12);
        assert_relative_eq!(check_g_condition(1.0 - 1e-9).unwrap(), 1.0, epsilon = 1e-7);
        assert!(check_g_condition(0.0).is_err());
        assert!(check_g_condition(1.0).is_err());
        assert!(check_g_condition(-0.3).is_err());
    }

    #[test]
    fn vanishing_profile() {
        let prof = grad_vanishing_profile(0.5, &[1, 2, 3]).unwrap();
        assert_eq!(prof, vec![(1, 0.5), (2, 0.25), (3, 0.125)]);
        let prof = grad_vanishing_profile(0.5, &[20]).unwrap();
        assert_relative_eq!(prof[0].1, 9.5367431640625e-7, max_relative = 1e-15);
        let log = grad_scale_profile(ProbabilityFn::Log, 0.3, &[1, 5, 20, 40]).unwrap();
        for (_, s) in log {
            assert_relative_eq!(s, 1.0, epsilon = 1e-12);
        }
        assert!(grad_vanishing_profile(1.0, &[1]).is_err());
        assert!(grad_vanishing_profile(0.5, &[0]).is_err());
    }

    #[test]
    fn log_space_safety() {
        for k in [0.5, 1.0, 2.0] {
            let s = SequenceLogProb::uniform(-10000.0, 100).unwrap();
            let e = eval_loss(&LossFamily::exp_composed(k).unwrap(), &s);
            assert!(e.loss.is_finite());
            assert!(e.loss < 0.0);
            assert_relative_eq!(e.loss, -(-100.0 * k).exp(), max_relative = 1e-12);
        }
    }

    fn families() -> Vec<LossFamily> {
        vec![
            LossFamily::Log,
            LossFamily::exp_composed(0.5).unwrap(),
            LossFamily::exp_composed(1.0).unwrap(),
            LossFamily::exp_composed(3.0).unwrap(),
            LossFamily::power_composed(0.25).unwrap(),
            LossFamily::power_composed(0.9).unwrap(),
            LossFamily::pure_convex(ConvexVariant::Identity),
            LossFamily::pure_convex(ConvexVariant::Exp),
        ]
    }

    #[test]
    fn loss_strictly_decreasing_in_total() {
        for fam in families() {
            for len in [1usize, 3, 10] {
                let grid: Vec<f64> = (0..200).map(|i| -8.0 + 8.0 * i as f64 / 200.0).collect();
                let losses: Vec<f64> = grid
                    .iter()
                    .map(|&tot| eval_loss(&fam, &SequenceLogProb::uniform(tot, len).unwrap()).loss)
                    .collect();
                for w in losses.windows(2) {
                    assert!(w[1] < w[0], "{fam:?} len {len}: {} !< {}", w[1], w[0]);
                }
            }
        }
    }

    #[test]
    fn weight_shapes() {
        let grid: Vec<f64> = (1..1000).map(|i| i as f64 / 1000.0).collect();
        for fam in [
            LossFamily::exp_composed(1.0).unwrap(),
            LossFamily::power_composed(0.1).unwrap(),
            LossFamily::power_composed(0.5).unwrap(),
        ] {
            let ws: Vec<f64> = grid
                .iter()
                .map(|p| eval_weight(&fam, &SequenceLogProb::uniform(p.ln(), 1).unwrap()))
                .collect();
            for w in ws.windows(2) {
                assert!(w[1] > w[0], "{fam:?}");
            }
        }
        let near_one = SequenceLogProb::uniform((1.0f64 - 1e-6).ln(), 1).unwrap();
        assert!(eval_weight(&LossFamily::power_composed(0.1).unwrap(), &near_one) > 1e3);
    }

    proptest! {
        #[test]
        fn weight_is_negative_loss_derivative(
            g in -6.0f64..-0.05,
            k in 0.1f64..4.0,
            kp in 0.05f64..1.0,
            len in 1usize..12,
        ) {
            let h = 1e-5;
            for fam in [
                LossFamily::exp_composed(k).unwrap(),
                LossFamily::power_composed(kp).unwrap(),
                LossFamily::pure_convex(ConvexVariant::Exp),
                LossFamily::Log,
            ] {
                let fd = (fam.loss_at(g + h, len) - fam.loss_at(g - h, len)) / (2.0 * h);
                let w = fam.weight_at(g, len);
                prop_assert!(w >= 0.0);
                // central differences lose ~1e-11 absolute to cancellation
                prop_assert!(((-fd) - w).abs() <= 1e-6 * w.abs() + 1e-9 * fam.loss_at(g, len).abs().max(1.0),
                    "{:?}: fd {} weight {}", fam, -fd, w);
            }
        }

        #[test]
        fn total_is_sum_of_tokens(lps in proptest::collection::vec(-20.0f64..=0.0, 1..16)) {
            let s = SequenceLogProb::new(lps.clone()).unwrap();
            prop_assert_eq!(s.len(), lps.len());
            prop_assert!((s.total() - lps.iter().sum::<f64>()).abs() < 1e-12);
            prop_assert!(eval_g(&s) <= 0.0);
        }
    }
}
