//! Optimal predicted distributions over the probability simplex.
//!
//! For a finite data distribution `a` and a per-sample utility `u = f∘g`,
//! the optimal prediction minimizes `L(p) = -Σ a_i u(p_i)` subject to
//! `p ∈ Δ`. [`solve_optimal`] runs exponentiated gradient (entropic mirror
//! descent), [`brute_force_optimal`] searches a lattice exhaustively and
//! serves as an independent oracle, and [`verify_theorems`] checks the
//! ordering, crossing, monotone-gap, entropy and prefix-mass properties
//! that a sharpened optimum must satisfy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{self, FiniteDistribution, TIE_GAP};
use crate::error::{Error, Result};
use crate::loss::LossFamily;

/// Atoms at or below this mass are outside the active set for KKT purposes.
const ACTIVE_EPS: f64 = 1e-12;

/// Step sizes are capped here when the objective has no curvature.
const MAX_STEP: f64 = 1e12;

/// A loss family applied to sequences of a fixed length `horizon`, viewed as a
/// utility `u(p)` of the whole-sequence probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimplexObjective {
    pub family: LossFamily,
    pub horizon: usize,
}

impl SimplexObjective {
    pub fn new(family: LossFamily, horizon: usize) -> Result<Self> {
        family.validate()?;
        if horizon == 0 {
            return Err(Error::Domain("horizon must be positive".into()));
        }
        Ok(Self { family, horizon })
    }

    /// Length-one sequences, where the exp-composed utility is `p^k`.
    pub fn unit(family: LossFamily) -> Result<Self> {
        Self::new(family, 1)
    }

    fn t(&self) -> f64 {
        self.horizon as f64
    }

    pub fn utility(&self, p: f64) -> f64 {
        let t = self.t();
        match self.family {
            LossFamily::Log => p.ln() / t,
            LossFamily::ExpComposed { k } => p.powf(k / t),
            LossFamily::PowerComposed { k } => -(-p.ln() / t).powf(k),
            LossFamily::PureConvex { variant } => variant.value(p),
        }
    }

    pub fn derivative(&self, p: f64) -> f64 {
        let t = self.t();
        match self.family {
            LossFamily::Log => 1.0 / (t * p),
            LossFamily::ExpComposed { k } => {
                let c = k / t;
                c * p.powf(c - 1.0)
            }
            LossFamily::PowerComposed { k } => {
                let s = -p.ln() / t;
                k * s.powf(k - 1.0) / (t * p)
            }
            LossFamily::PureConvex { variant } => variant.derivative(p),
        }
    }

    pub fn second_derivative(&self, p: f64) -> f64 {
        let t = self.t();
        match self.family {
            LossFamily::Log => -1.0 / (t * p * p),
            LossFamily::ExpComposed { k } => {
                let c = k / t;
                c * (c - 1.0) * p.powf(c - 2.0)
            }
            LossFamily::PowerComposed { k } => {
                let s = -p.ln() / t;
                -k / (t * p * p) * ((k - 1.0) * s.powf(k - 2.0) / t + s.powf(k - 1.0))
            }
            LossFamily::PureConvex { variant } => variant.second_derivative(p),
        }
    }

    /// `-Σ a_i u(p_i)`, skipping atoms with no data mass.
    pub fn loss(&self, data: &[f64], p: &[f64]) -> f64 {
        data.iter()
            .zip(p)
            .filter(|(a, _)| **a > 0.0)
            .map(|(a, pi)| -a * self.utility(*pi))
            .sum()
    }

    /// Stationarity residual of the simplex-constrained problem: spread of
    /// `a_i u'(p_i)` over the active set, plus any inactive atom whose
    /// marginal gain exceeds the multiplier.
    pub fn kkt_residual(&self, data: &[f64], p: &[f64]) -> f64 {
        let gains: Vec<f64> = data
            .iter()
            .zip(p)
            .map(|(a, pi)| if *a > 0.0 { a * self.derivative(*pi) } else { 0.0 })
            .collect();
        let (mut num, mut den) = (0.0, 0.0);
        for (gi, pi) in gains.iter().zip(p) {
            if *pi > ACTIVE_EPS {
                num += pi * gi;
                den += pi;
            }
        }
        let lambda = num / den;
        gains
            .iter()
            .zip(p)
            .map(|(gi, pi)| {
                if *pi > ACTIVE_EPS {
                    (gi - lambda).abs()
                } else {
                    (gi - lambda).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    /// Largest curvature `a_i |u''(p_i)| p_i` seen in mirror coordinates.
    fn curvature(&self, data: &[f64], p: &[f64]) -> f64 {
        data.iter()
            .zip(p)
            .filter(|(a, pi)| **a > 0.0 && **pi > ACTIVE_EPS)
            .map(|(a, pi)| a * self.second_derivative(*pi).abs() * pi)
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// KKT residual target.
    pub tol: f64,
    /// Seeds the uniform-plus-jitter starting point.
    pub seed: u64,
    /// Relative jitter applied to the uniform start.
    pub jitter: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 200_000,
            tol: 1e-9,
            seed: 0,
            jitter: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub p_f: FiniteDistribution,
    pub loss_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
}

fn check_support(p_data: &FiniteDistribution) -> Result<()> {
    if p_data.len() < 2 {
        return Err(Error::InvalidDistribution(
            "optimal-distribution problems need at least two atoms".into(),
        ));
    }
    Ok(())
}

fn normalize_log(logp: &[f64]) -> Vec<f64> {
    let max = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logp.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Exponentiated-gradient minimization of `L_f` over the simplex.
///
/// Each step multiplies `p_i` by `exp(η a_i u'(p_i))` and renormalizes, with
/// `η = 0.5 / L` where `L` is the largest mirror-space curvature at the
/// current iterate. A step that increases the loss is halved until it does
/// not.
pub fn solve_optimal(
    p_data: &FiniteDistribution,
    objective: &SimplexObjective,
    cfg: &SolverConfig,
) -> Result<OracleResult> {
    check_support(p_data)?;
    let a = p_data.probs();
    let n = a.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start: Vec<f64> = (0..n)
        .map(|_| 1.0 + cfg.jitter * rng.gen_range(-1.0..1.0))
        .collect();
    let z: f64 = start.iter().sum();
    let mut p: Vec<f64> = start.into_iter().map(|x| x / z).collect();
    let mut loss = objective.loss(a, &p);

    let mut residual = objective.kkt_residual(a, &p);
    let mut iterations = 0;
    while iterations < cfg.max_iters && (residual.is_nan() || residual >= cfg.tol) {
        iterations += 1;
        let gains: Vec<f64> = a
            .iter()
            .zip(&p)
            .map(|(ai, pi)| if *ai > 0.0 { ai * objective.derivative(*pi) } else { 0.0 })
            .collect();
        // shift by the largest finite gain so exponents stay <= 0
        let top = gains
            .iter()
            .zip(&p)
            .filter(|(_, pi)| **pi > 0.0)
            .map(|(g, _)| *g)
            .fold(f64::NEG_INFINITY, f64::max);
        let curv = objective.curvature(a, &p);
        let mut step = if curv > 0.0 { (0.5 / curv).min(MAX_STEP) } else { MAX_STEP };

        let mut accepted = false;
        for _ in 0..200 {
            let logq: Vec<f64> = p
                .iter()
                .zip(&gains)
                .map(|(pi, gi)| {
                    if *pi > 0.0 {
                        pi.ln() + step * (gi.min(top) - top)
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            let q = normalize_log(&logq);
            let lq = objective.loss(a, &q);
            if lq <= loss + 1e-15 * loss.abs() {
                p = q;
                loss = lq;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        residual = objective.kkt_residual(a, &p);
        if !accepted {
            break;
        }
    }

    Ok(OracleResult {
        p_f: p_data.with_probs(p)?,
        loss_value: loss,
        iterations,
        converged: residual < cfg.tol,
        kkt_residual: residual,
    })
}

pub const BRUTE_MAX_ATOMS: usize = 5;
pub const BRUTE_MAX_RESOLUTION: usize = 400;

/// Exact minimum of `L_f` over the lattice `{i / resolution}` on the
/// simplex, followed by pairwise coordinate refinement.
///
/// The objective is separable, so the lattice minimum is found by a
/// min-plus dynamic program over atoms, which visits every lattice point
/// implicitly.
pub fn brute_force_optimal(
    p_data: &FiniteDistribution,
    objective: &SimplexObjective,
    resolution: usize,
) -> Result<OracleResult> {
    check_support(p_data)?;
    if p_data.len() > BRUTE_MAX_ATOMS {
        return Err(Error::TooLarge {
            what: "support",
            actual: p_data.len(),
            limit: BRUTE_MAX_ATOMS,
        });
    }
    if resolution == 0 || resolution > BRUTE_MAX_RESOLUTION {
        return Err(Error::TooLarge {
            what: "resolution",
            actual: resolution,
            limit: BRUTE_MAX_RESOLUTION,
        });
    }
    let a = p_data.probs();
    let n = a.len();
    let r = resolution;
    let cost = |j: usize, i: usize| -> f64 {
        if a[j] == 0.0 {
            0.0
        } else {
            let c = -a[j] * objective.utility(i as f64 / r as f64);
            if c.is_nan() {
                f64::INFINITY
            } else {
                c
            }
        }
    };

    // best[j][s]: cheapest way to place s units on atoms 0..=j
    let mut best = vec![vec![f64::INFINITY; r + 1]; n];
    let mut choice = vec![vec![0usize; r + 1]; n];
    for s in 0..=r {
        best[0][s] = cost(0, s);
        choice[0][s] = s;
    }
    for j in 1..n {
        let row: Vec<f64> = (0..=r).map(|i| cost(j, i)).collect();
        for s in 0..=r {
            let mut b = f64::INFINITY;
            let mut arg = 0;
            for (i, ci) in row.iter().enumerate().take(s + 1) {
                let v = best[j - 1][s - i] + ci;
                if v < b {
                    b = v;
                    arg = i;
                }
            }
            best[j][s] = b;
            choice[j][s] = arg;
        }
    }
    let mut units = vec![0usize; n];
    let mut remaining = r;
    for j in (0..n).rev() {
        units[j] = choice[j][remaining];
        remaining -= units[j];
    }
    let mut p: Vec<f64> = units.iter().map(|&u| u as f64 / r as f64).collect();

    let (sweeps, loss) = refine_pairwise(a, objective, &mut p, 1.0 / r as f64);
    let kkt = objective.kkt_residual(a, &p);
    Ok(OracleResult {
        p_f: p_data.with_probs(p)?,
        loss_value: loss,
        iterations: sweeps,
        converged: true,
        kkt_residual: kkt,
    })
}

/// Moves mass between pairs of atoms within a shrinking window, keeping any
/// move that lowers the loss. Returns the number of sweeps and final loss.
fn refine_pairwise(a: &[f64], objective: &SimplexObjective, p: &mut [f64], start: f64) -> (usize, f64) {
    let n = p.len();
    let mut loss = objective.loss(a, p);
    let mut window = start;
    let mut sweeps = 0;
    const GOLDEN: f64 = 0.618_033_988_749_894_9;
    while window > 1e-13 && sweeps < 400 {
        sweeps += 1;
        let mut improved = false;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                // shift t from j to i, t in [lo, hi]
                let lo = (-p[i]).max(-window);
                let hi = p[j].min(window);
                if hi - lo <= 0.0 {
                    continue;
                }
                let (pi, pj) = (p[i], p[j]);
                let rest = loss + a[i] * objective.utility(pi) + a[j] * objective.utility(pj);
                let eval = |t: f64| -> f64 {
                    let v = rest - a[i] * objective.utility(pi + t) - a[j] * objective.utility(pj - t);
                    if v.is_nan() {
                        f64::INFINITY
                    } else {
                        v
                    }
                };
                let (mut x0, mut x1) = (lo, hi);
                let mut c = x1 - GOLDEN * (x1 - x0);
                let mut d = x0 + GOLDEN * (x1 - x0);
                let (mut fc, mut fd) = (eval(c), eval(d));
                for _ in 0..80 {
                    if fc <= fd {
                        x1 = d;
                        d = c;
                        fd = fc;
                        c = x1 - GOLDEN * (x1 - x0);
                        fc = eval(c);
                    } else {
                        x0 = c;
                        c = d;
                        fc = fd;
                        d = x0 + GOLDEN * (x1 - x0);
                        fd = eval(d);
                    }
                }
                let candidates = [(lo, eval(lo)), (hi, eval(hi)), (c, fc), (d, fd)];
                let (t, v) = candidates
                    .iter()
                    .cloned()
                    .fold((0.0, loss), |acc, cand| if cand.1 < acc.1 { cand } else { acc });
                if v < loss - 1e-16 * loss.abs().max(1.0) {
                    p[i] = pi + t;
                    p[j] = pj - t;
                    // recompute rather than trust the incremental value
                    loss = objective.loss(a, p);
                    improved = true;
                }
            }
        }
        if !improved {
            window *= 0.5;
        }
    }
    // clean up rounding drift in the total mass
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x = (*x / z).clamp(0.0, 1.0));
    (sweeps, objective.loss(a, p))
}

/// Known optima: the data distribution for `Log`, the one-hot on the data
/// mode for convex `f`, and `p_i ∝ a_i^{1/(1-k)}` for `u(p) = p^k` with
/// `k < 1` (length-one exp-composed family).
pub fn closed_form_optimal(
    p_data: &FiniteDistribution,
    objective: &SimplexObjective,
) -> Option<FiniteDistribution> {
    let a = p_data.probs();
    let one_hot = || {
        let mut v = vec![0.0; a.len()];
        v[dist::argmax(a)] = 1.0;
        p_data.with_probs(v).ok()
    };
    match objective.family {
        LossFamily::Log => Some(p_data.clone()),
        LossFamily::PureConvex { .. } => one_hot(),
        LossFamily::ExpComposed { k } if objective.horizon == 1 => {
            if k >= 1.0 {
                return one_hot();
            }
            let power = 1.0 / (1.0 - k);
            let logw: Vec<f64> = a
                .iter()
                .map(|&ai| if ai > 0.0 { power * ai.ln() } else { f64::NEG_INFINITY })
                .collect();
            p_data.with_probs(normalize_log(&logw)).ok()
        }
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub tol: f64,
    /// The baseline `g` is `log`, whose derivatives satisfy the
    /// `g''' g' >= g''^2 > 0` hypothesis of the monotone-gap check.
    pub g_is_log: bool,
    /// `f` is convex on the raw probability, so the optimum should be one-hot.
    pub expect_one_hot: bool,
}

impl VerifyOptions {
    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            g_is_log: true,
            expect_one_hot: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    /// `p_fg` keeps the descending order of `p_data`.
    pub ordering_ok: bool,
    /// `None` unless a one-hot optimum was expected.
    pub one_hot: Option<bool>,
    /// 1-based crossing index.
    pub crossing_m: usize,
    pub crossing_ok: bool,
    /// Some atom at or beyond `m` sits within `tol` of the baseline.
    pub crossing_ties: bool,
    pub monotone_gap_ok: Option<bool>,
    /// Entropy of the baseline optimum `p_g` (the data itself when `g = log`).
    pub entropy_baseline: f64,
    pub entropy_pf: f64,
    pub entropy_ok: bool,
    pub top_mass_ok: bool,
    pub tolerance: f64,
}

impl TheoremReport {
    pub fn all_passed(&self) -> bool {
        self.ordering_ok
            && self.one_hot.unwrap_or(true)
            && self.crossing_ok
            && self.monotone_gap_ok.unwrap_or(true)
            && self.entropy_ok
            && self.top_mass_ok
    }
}

pub fn verify_theorems(
    p_data: &FiniteDistribution,
    p_g: &FiniteDistribution,
    p_fg: &FiniteDistribution,
    tol: f64,
) -> Result<TheoremReport> {
    verify_theorems_with(p_data, p_g, p_fg, &VerifyOptions::new(tol))
}

pub fn verify_theorems_with(
    p_data: &FiniteDistribution,
    p_g: &FiniteDistribution,
    p_fg: &FiniteDistribution,
    opts: &VerifyOptions,
) -> Result<TheoremReport> {
    for (name, other) in [("p_g", p_g), ("p_fg", p_fg)] {
        if other.labels() != p_data.labels() {
            return Err(Error::SupportMismatch(format!(
                "{name} has support {:?}, p_data has {:?}",
                other.labels(),
                p_data.labels()
            )));
        }
    }
    p_data.check_distinct(TIE_GAP)?;
    let tol = opts.tol;
    let (g, fg) = (p_g.probs(), p_fg.probs());
    let n = g.len();

    let ordering_ok = fg.windows(2).all(|w| w[1] <= w[0] + tol);

    let one_hot = opts
        .expect_one_hot
        .then(|| fg[0] > 1.0 - dist::ONE_HOT_THRESHOLD);

    // 0-based index of the first atom where p_fg no longer exceeds p_g
    let m0 = (0..n).find(|&i| fg[i] <= g[i] + tol).unwrap_or(n);
    let above = (0..m0).all(|i| fg[i] >= g[i] - tol);
    let below = (m0..n).all(|i| fg[i] <= g[i] + tol);
    let crossing_ok = above && below;
    let crossing_ties = (m0..n).any(|i| (fg[i] - g[i]).abs() <= tol);

    let monotone_gap_ok = opts.g_is_log.then(|| {
        let diffs: Vec<f64> = (0..m0).map(|i| fg[i] - g[i]).collect();
        diffs.windows(2).all(|w| w[1] <= w[0] + tol) && diffs.iter().all(|&d| d >= -tol)
    });

    let entropy_baseline = dist::entropy(g);
    let entropy_pf = dist::entropy(fg);
    let entropy_ok = entropy_pf <= entropy_baseline + tol;

    let mut sg = 0.0;
    let mut sfg = 0.0;
    let mut top_mass_ok = true;
    for i in 0..n {
        sg += g[i];
        sfg += fg[i];
        if sfg < sg - tol {
            top_mass_ok = false;
        }
    }

    Ok(TheoremReport {
        ordering_ok,
        one_hot,
        crossing_m: m0 + 1,
        crossing_ok,
        crossing_ties,
        monotone_gap_ok,
        entropy_baseline,
        entropy_pf,
        entropy_ok,
        top_mass_ok,
        tolerance: tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::ConvexVariant;
    use approx::assert_relative_eq;

    fn d(p: &[f64]) -> FiniteDistribution {
        FiniteDistribution::from_probs(p.to_vec()).unwrap()
    }

    fn linf(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    // p_i ∝ p_data,i^2 for [0.5, 0.3, 0.2]: weights [0.25, 0.09, 0.04] / 0.38
    const SQRT_OPT: [f64; 3] = [0.25 / 0.38, 0.09 / 0.38, 0.04 / 0.38];

    #[test]
    fn frozen_sqrt_optimum() {
        assert!(linf(&SQRT_OPT, &[0.65789, 0.23684, 0.10526]) < 1e-5);
    }

    #[test]
    fn log_optimum_is_data() {
        let data = d(&[0.5, 0.3, 0.2]);
        let r = solve_optimal(&data, &SimplexObjective::unit(LossFamily::Log).unwrap(), &SolverConfig::default())
            .unwrap();
        assert!(r.converged, "{r:?}");
        assert!(linf(r.p_f.probs(), data.probs()) < 1e-8);
    }

    #[test]
    fn convex_optimum_is_one_hot() {
        let data = d(&[0.4, 0.35, 0.25]);
        for v in [ConvexVariant::Identity, ConvexVariant::Exp] {
            let obj = SimplexObjective::unit(LossFamily::pure_convex(v)).unwrap();
            let r = solve_optimal(&data, &obj, &SolverConfig::default()).unwrap();
            assert!(r.converged, "{v:?}: {r:?}");
            assert!(r.p_f.probs()[0] > 1.0 - 1e-6);
        }
    }

    #[test]
    fn sqrt_optimum_three_ways() {
        let data = d(&[0.5, 0.3, 0.2]);
        let obj = SimplexObjective::unit(LossFamily::exp_composed(0.5).unwrap()).unwrap();
        let r = solve_optimal(&data, &obj, &SolverConfig::default()).unwrap();
        assert!(r.converged);
        assert!(linf(r.p_f.probs(), &SQRT_OPT) < 1e-8);
        let cf = closed_form_optimal(&data, &obj).unwrap();
        assert!(linf(cf.probs(), &SQRT_OPT) < 1e-14);
        let bf = brute_force_optimal(&data, &obj, 200).unwrap();
        assert!(linf(bf.p_f.probs(), &SQRT_OPT) < 0.01);
    }

    #[test]
    fn brute_force_examples() {
        let data = d(&[0.5, 0.3, 0.2]);
        let bf = brute_force_optimal(&data, &SimplexObjective::unit(LossFamily::Log).unwrap(), 200).unwrap();
        assert!(linf(bf.p_f.probs(), data.probs()) < 0.01);
        let data = d(&[0.6, 0.4]);
        let obj = SimplexObjective::unit(LossFamily::pure_convex(ConvexVariant::Identity)).unwrap();
        let bf = brute_force_optimal(&data, &obj, 100).unwrap();
        assert_eq!(bf.p_f.probs(), &[1.0, 0.0]);
        let six = d(&[0.3, 0.2, 0.15, 0.15, 0.1, 0.1]);
        assert!(matches!(
            brute_force_optimal(&six, &obj, 100),
            Err(Error::TooLarge { .. })
        ));
        assert!(brute_force_optimal(&data, &obj, 401).is_err());
    }

    #[test]
    fn closed_form_availability() {
        let data = d(&[0.5, 0.3, 0.2]);
        let log = closed_form_optimal(&data, &SimplexObjective::unit(LossFamily::Log).unwrap()).unwrap();
        assert_eq!(log.probs(), data.probs());
        let two = SimplexObjective::new(LossFamily::exp_composed(0.7).unwrap(), 2).unwrap();
        assert!(closed_form_optimal(&data, &two).is_none());
        let pow = SimplexObjective::unit(LossFamily::power_composed(0.5).unwrap()).unwrap();
        assert!(closed_form_optimal(&data, &pow).is_none());
    }

    #[test]
    fn solver_is_deterministic() {
        let data = d(&[0.45, 0.3, 0.15, 0.1]);
        let obj = SimplexObjective::new(LossFamily::power_composed(0.4).unwrap(), 3).unwrap();
        let cfg = SolverConfig { seed: 11, ..Default::default() };
        let a = solve_optimal(&data, &obj, &cfg).unwrap();
        let b = solve_optimal(&data, &obj, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.converged);
    }

    #[test]
    fn non_convergence_is_reported() {
        let data = d(&[0.5, 0.3, 0.2]);
        let obj = SimplexObjective::unit(LossFamily::exp_composed(0.5).unwrap()).unwrap();
        let cfg = SolverConfig { max_iters: 1, tol: 1e-14, ..Default::default() };
        let r = solve_optimal(&data, &obj, &cfg).unwrap();
        assert!(!r.converged);
        assert!(r.kkt_residual >= 1e-14);
    }

    #[test]
    fn verify_worked_anchor() {
        let data = d(&[0.5, 0.3, 0.2]);
        let fg = d(&SQRT_OPT);
        let rep = verify_theorems(&data, &data, &fg, 1e-6).unwrap();
        assert!(rep.all_passed(), "{rep:?}");
        assert_eq!(rep.crossing_m, 2);
        assert_relative_eq!(rep.entropy_baseline, 1.02965, epsilon = 1e-5);
        // -sum p ln p over [25, 9, 4] / 38, summed directly
        let direct: f64 = SQRT_OPT.iter().map(|p| -p * p.ln()).sum();
        assert_relative_eq!(rep.entropy_pf, direct, epsilon = 1e-14);
        assert_relative_eq!(rep.entropy_pf, 0.853584, epsilon = 1e-6);
    }

    #[test]
    fn verify_identity_and_one_hot() {
        let data = d(&[0.5, 0.3, 0.2]);
        let rep = verify_theorems(&data, &data, &data, 1e-6).unwrap();
        assert!(rep.all_passed());
        assert_eq!(rep.crossing_m, 1);
        assert!(rep.crossing_ties);

        let hot = d(&[1.0, 0.0, 0.0]);
        let opts = VerifyOptions { expect_one_hot: true, ..VerifyOptions::new(1e-6) };
        let rep = verify_theorems_with(&data, &data, &hot, &opts).unwrap();
        assert!(rep.all_passed(), "{rep:?}");
        assert_eq!(rep.crossing_m, 2);
        assert_eq!(rep.one_hot, Some(true));
    }

    #[test]
    fn verify_detects_failures() {
        let data = d(&[0.5, 0.3, 0.2]);
        // flatter than the data: entropy goes up, prefix mass goes down
        let flat = d(&[0.4, 0.32, 0.28]);
        let rep = verify_theorems(&data, &data, &flat, 1e-6).unwrap();
        assert!(!rep.entropy_ok);
        assert!(!rep.top_mass_ok);
        // out of order
        let swapped = d(&[0.3, 0.5, 0.2]);
        let rep = verify_theorems(&data, &data, &swapped, 1e-6).unwrap();
        assert!(!rep.ordering_ok);
    }

    #[test]
    fn verify_input_errors() {
        let tied = d(&[0.4, 0.3, 0.3]);
        assert!(matches!(
            verify_theorems(&tied, &tied, &tied, 1e-6),
            Err(Error::TiedProbabilities { .. })
        ));
        let data = d(&[0.5, 0.3, 0.2]);
        let other = FiniteDistribution::new(
            vec![0.5, 0.3, 0.2],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        assert!(matches!(
            verify_theorems(&data, &data, &other, 1e-6),
            Err(Error::SupportMismatch(_))
        ));
    }
}
