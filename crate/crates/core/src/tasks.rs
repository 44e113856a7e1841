//! Synthetic multi-modal conditional tasks with exact ground truth.

use std::io::Write;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{entropy, kl_divergence, FiniteDistribution, KlValue};
use crate::error::{Error, Result};
use crate::models::{sequence_at, sequence_index, space_size, Vocab};

/// Smallest allowed gap between two mode masses of one context.
pub const MIN_MODE_GAP: f64 = 1e-6;

const PROFILE_RATIO: f64 = 0.75;
const PROFILE_JITTER: f64 = 0.01;

/// Mode masses of the canned cross-mode context, as
/// `(first-position group, second-position group, mass)`.
///
/// With groups `A B C` for the first token and `X Y Z` for the second the
/// modes are `AX .20, AY .19, BZ .31, CZ .30`; the positionwise argmax `AZ`
/// carries no mass.
const CROSS_MODE: [(usize, usize, f64); 4] = [(0, 0, 0.20), (0, 1, 0.19), (1, 2, 0.31), (2, 2, 0.30)];

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub vocab_size: usize,
    pub seq_len: usize,
    pub num_contexts: usize,
    pub modes_per_context: usize,
    /// Strictly decreasing positive masses summing to 1; one per mode.
    #[serde(default)]
    pub mode_mass_profile: Option<Vec<f64>>,
    pub seed: u64,
    /// Vocabulary symbols; defaults to the first letters of `abcdefgh`.
    #[serde(default)]
    pub symbols: Option<String>,
    /// Make context 0 the canned cross-mode context (needs `V >= 3`, `T >= 2`).
    #[serde(default = "default_true")]
    pub include_cross_mode: bool,
}

impl TaskSpec {
    pub fn new(vocab_size: usize, seq_len: usize, num_contexts: usize, modes_per_context: usize, seed: u64) -> Self {
        Self {
            vocab_size,
            seq_len,
            num_contexts,
            modes_per_context,
            mode_mass_profile: None,
            seed,
            symbols: None,
            include_cross_mode: true,
        }
    }

    pub fn vocab(&self) -> Result<Vocab> {
        let vocab = match &self.symbols {
            Some(s) => Vocab::from_str_symbols(s)?,
            None => Vocab::with_size(self.vocab_size)?,
        };
        if vocab.size() != self.vocab_size {
            return Err(Error::InvalidTask(format!(
                "{} symbols for vocabulary size {}",
                vocab.size(),
                self.vocab_size
            )));
        }
        Ok(vocab)
    }
}

/// Ground truth of one context: a dense joint over `V^T` plus its modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextTruth {
    /// Probabilities of all sequences in lexicographic order.
    pub joint: Vec<f64>,
    /// Mode sequences, by decreasing mass.
    pub modes: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub vocab: Vocab,
    pub seq_len: usize,
    pub contexts: Vec<ContextTruth>,
}

/// One training example: context id and token indices.
pub type Example = (usize, Vec<usize>);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

/// Geometric masses with ratio 0.75, normalized, then perturbed by up to
/// ±1% without changing their order.
pub fn default_profile(modes: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..modes)
            .map(|i| PROFILE_RATIO.powi(i as i32) * (1.0 + rng.gen_range(-PROFILE_JITTER..=PROFILE_JITTER)))
            .collect();
        let z: f64 = raw.iter().sum();
        let profile: Vec<f64> = raw.iter().map(|w| w / z).collect();
        if profile.windows(2).all(|w| w[0] - w[1] >= MIN_MODE_GAP) {
            return profile;
        }
    }
}

fn check_profile(profile: &[f64], modes: usize) -> Result<()> {
    if profile.len() != modes {
        return Err(Error::InvalidTask(format!(
            "profile has {} masses for {modes} modes",
            profile.len()
        )));
    }
    if profile.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
        return Err(Error::InvalidTask("profile masses must be positive".into()));
    }
    if profile.windows(2).any(|w| w[0] - w[1] < MIN_MODE_GAP) {
        return Err(Error::InvalidTask("profile must be strictly decreasing".into()));
    }
    let total: f64 = profile.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidTask(format!("profile sums to {total}")));
    }
    Ok(())
}

/// Cross-mode sequences over `v` symbols and `len` positions. Groups map to
/// symbols `0 1 2` / `3 4 5` when `v >= 6`, otherwise both use `0 1 2`;
/// positions past the second hold symbol 0.
fn cross_mode_truth(v: usize, len: usize) -> ContextTruth {
    let second = if v >= 6 { 3 } else { 0 };
    let mut joint = vec![0.0; v.pow(len as u32)];
    let mut modes: Vec<(Vec<usize>, f64)> = CROSS_MODE
        .iter()
        .map(|&(a, b, p)| {
            let mut seq = vec![0; len];
            seq[0] = a;
            seq[1] = second + b;
            (seq, p)
        })
        .collect();
    for (seq, p) in &modes {
        joint[sequence_index(seq, v)] = *p;
    }
    modes.sort_by(|a, b| b.1.total_cmp(&a.1));
    ContextTruth {
        joint,
        modes: modes.into_iter().map(|(s, _)| s).collect(),
    }
}

pub fn build_task(spec: &TaskSpec) -> Result<Task> {
    let vocab = spec.vocab()?;
    let v = vocab.size();
    if spec.seq_len == 0 || spec.num_contexts == 0 {
        return Err(Error::InvalidTask("need at least one position and one context".into()));
    }
    let n = space_size(v, spec.seq_len)?;
    if spec.modes_per_context < 2 || spec.modes_per_context > n {
        return Err(Error::InvalidTask(format!(
            "modes_per_context {} outside 2..={n}",
            spec.modes_per_context
        )));
    }
    if let Some(p) = &spec.mode_mass_profile {
        check_profile(p, spec.modes_per_context)?;
    }
    let cross = spec.include_cross_mode && v >= 3 && spec.seq_len >= 2;
    if spec.include_cross_mode && !cross {
        return Err(Error::InvalidTask(
            "the cross-mode context needs at least 3 symbols and 2 positions".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut contexts = Vec::with_capacity(spec.num_contexts);
    for c in 0..spec.num_contexts {
        if c == 0 && cross {
            contexts.push(cross_mode_truth(v, spec.seq_len));
            continue;
        }
        let profile = match &spec.mode_mass_profile {
            Some(p) => p.clone(),
            None => default_profile(spec.modes_per_context, &mut rng),
        };
        let picks = rand::seq::index::sample(&mut rng, n, spec.modes_per_context);
        let mut joint = vec![0.0; n];
        let mut modes = Vec::with_capacity(profile.len());
        for (idx, p) in picks.iter().zip(&profile) {
            joint[idx] = *p;
            modes.push(sequence_at(idx, v, spec.seq_len));
        }
        contexts.push(ContextTruth { joint, modes });
    }
    let task = Task {
        vocab,
        seq_len: spec.seq_len,
        contexts,
    };
    task.validate()?;
    Ok(task)
}

impl Task {
    /// Builds a task from explicit `(sequence, mass)` lists per context.
    pub fn from_contexts(vocab: Vocab, seq_len: usize, contexts: &[Vec<(&str, f64)>]) -> Result<Self> {
        let v = vocab.size();
        let n = space_size(v, seq_len)?;
        let mut out = Vec::with_capacity(contexts.len());
        for atoms in contexts {
            let mut joint = vec![0.0; n];
            let mut modes: Vec<(Vec<usize>, f64)> = Vec::new();
            for &(s, p) in atoms {
                let seq = vocab.encode(s)?;
                if seq.len() != seq_len {
                    return Err(Error::InvalidTask(format!("{s:?} is not of length {seq_len}")));
                }
                let i = sequence_index(&seq, v);
                if joint[i] != 0.0 {
                    return Err(Error::InvalidTask(format!("{s:?} listed twice")));
                }
                joint[i] = p;
                modes.push((seq, p));
            }
            modes.sort_by(|a, b| b.1.total_cmp(&a.1));
            out.push(ContextTruth {
                joint,
                modes: modes.into_iter().map(|(s, _)| s).collect(),
            });
        }
        let task = Self {
            vocab,
            seq_len,
            contexts: out,
        };
        task.validate()?;
        Ok(task)
    }

    /// Checks that every context is a distribution whose modes have
    /// pairwise distinct masses.
    pub fn validate(&self) -> Result<()> {
        if self.contexts.is_empty() {
            return Err(Error::InvalidTask("no contexts".into()));
        }
        for (c, truth) in self.contexts.iter().enumerate() {
            self.distribution(c)?;
            let masses: Vec<f64> = truth.modes.iter().map(|m| self.prob(c, m)).collect();
            if masses.iter().any(|&p| p <= 0.0) {
                return Err(Error::InvalidTask(format!("context {c} lists a mode with no mass")));
            }
            if masses.windows(2).any(|w| w[0] - w[1] < MIN_MODE_GAP) {
                return Err(Error::InvalidTask(format!(
                    "context {c} has mode masses closer than {MIN_MODE_GAP}"
                )));
            }
        }
        Ok(())
    }

    pub fn num_contexts(&self) -> usize {
        self.contexts.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.size()
    }

    pub fn joint(&self, context: usize) -> &[f64] {
        &self.contexts[context].joint
    }

    pub fn modes(&self, context: usize) -> &[Vec<usize>] {
        &self.contexts[context].modes
    }

    pub fn prob(&self, context: usize, seq: &[usize]) -> f64 {
        self.contexts[context].joint[sequence_index(seq, self.vocab.size())]
    }

    pub fn is_mode(&self, context: usize, seq: &[usize]) -> bool {
        self.prob(context, seq) > 0.0
    }

    /// Most probable sequence (lexicographically first on ties).
    pub fn data_argmax(&self, context: usize) -> Vec<usize> {
        let i = crate::dist::argmax(self.joint(context));
        sequence_at(i, self.vocab.size(), self.seq_len)
    }

    pub fn distribution(&self, context: usize) -> Result<FiniteDistribution> {
        let v = self.vocab.size();
        let labels = (0..self.joint(context).len())
            .map(|i| self.vocab.decode(&sequence_at(i, v, self.seq_len)))
            .collect();
        FiniteDistribution::with_tolerance(self.joint(context).to_vec(), labels, 1e-9)
    }

    /// `marginals[t][x]` = probability that position `t` holds symbol `x`.
    pub fn marginals(&self, context: usize) -> Vec<Vec<f64>> {
        let v = self.vocab.size();
        let mut m = vec![vec![0.0; v]; self.seq_len];
        for (i, &p) in self.joint(context).iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (t, x) in sequence_at(i, v, self.seq_len).into_iter().enumerate() {
                m[t][x] += p;
            }
        }
        m
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let task: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        task.validate()?;
        Ok(task)
    }
}

/// `n` i.i.d. draws: uniform context, then a sequence from its ground truth.
pub fn sample_dataset(task: &Task, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidTask("dataset size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samplers: Vec<(Vec<&Vec<usize>>, WeightedIndex<f64>)> = (0..task.num_contexts())
        .map(|c| {
            let modes: Vec<&Vec<usize>> = task.modes(c).iter().collect();
            let weights: Vec<f64> = modes.iter().map(|m| task.prob(c, m)).collect();
            let w = WeightedIndex::new(weights).map_err(|e| Error::InvalidTask(e.to_string()))?;
            Ok((modes, w))
        })
        .collect::<Result<_>>()?;
    let examples = (0..n)
        .map(|_| {
            let c = rng.gen_range(0..task.num_contexts());
            let (modes, w) = &samplers[c];
            (c, modes[w.sample(&mut rng)].clone())
        })
        .collect();
    Ok(Dataset { examples })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// `context,sequence` rows with a header line.
    pub fn write_csv(&self, vocab: &Vocab, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["context", "sequence"]).map_err(csv_err)?;
        for (c, s) in &self.examples {
            w.write_record([c.to_string(), vocab.decode(s)]).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// `-H(x|c) + Σ_t H(x_t|c)`: the smallest KL any product-form model can
/// reach on this context.
pub fn nar_lower_bound(task: &Task, context: usize) -> f64 {
    let joint_h = entropy(task.joint(context));
    let marginal_h: f64 = task.marginals(context).iter().map(|m| entropy(m)).sum();
    marginal_h - joint_h
}

/// Product of the positionwise marginals, and its KL from the ground truth.
pub fn product_fit(task: &Task, context: usize) -> (Vec<f64>, KlValue) {
    let v = task.vocab.size();
    let marginals = task.marginals(context);
    let product: Vec<f64> = (0..task.joint(context).len())
        .map(|i| {
            sequence_at(i, v, task.seq_len)
                .iter()
                .enumerate()
                .map(|(t, &x)| marginals[t][x])
                .product()
        })
        .collect();
    let kl = kl_divergence(task.joint(context), &product);
    (product, kl)
}
