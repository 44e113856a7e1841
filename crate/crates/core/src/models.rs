//! Toy conditional sequence models whose output distributions can be
//! enumerated exactly.
//!
//! [`NeuralModel`] covers both factorizations. The autoregressive variant
//! feeds a context embedding plus the one-hot encoded prefix (padded to
//! `T - 1` slots) through one tanh layer shared across steps, followed by a
//! separate output head per step. The non-autoregressive variant drops the
//! prefix, so every position depends on the context alone.
//!
//! Every model has two forward paths: a plain `f64` path used for decoding
//! and enumeration, and a [`Graph`] path used for training.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::dist::FiniteDistribution;
use crate::error::{Error, Result};
use crate::loss::SequenceLogProb;
use crate::tensor::Tensor;

/// Largest output space `enumerate_distribution` will materialize.
pub const MAX_ENUMERATION: usize = 32768;

const DEFAULT_SYMBOLS: &str = "abcdefgh";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<char>", into = "Vec<char>")]
pub struct Vocab {
    symbols: Vec<char>,
}

impl TryFrom<Vec<char>> for Vocab {
    type Error = Error;
    fn try_from(symbols: Vec<char>) -> Result<Self> {
        Self::new(symbols)
    }
}

impl From<Vocab> for Vec<char> {
    fn from(v: Vocab) -> Self {
        v.symbols
    }
}

impl Vocab {
    pub fn new(symbols: Vec<char>) -> Result<Self> {
        if !(2..=8).contains(&symbols.len()) {
            return Err(Error::Model(format!(
                "vocabulary size {} outside 2..=8",
                symbols.len()
            )));
        }
        for (i, c) in symbols.iter().enumerate() {
            if symbols[..i].contains(c) {
                return Err(Error::Model(format!("duplicate symbol {c:?}")));
            }
        }
        Ok(Self { symbols })
    }

    /// The first `size` letters of `abcdefgh`.
    pub fn with_size(size: usize) -> Result<Self> {
        if !(2..=8).contains(&size) {
            return Err(Error::Model(format!("vocabulary size {size} outside 2..=8")));
        }
        Self::new(DEFAULT_SYMBOLS.chars().take(size).collect())
    }

    pub fn from_str_symbols(s: &str) -> Result<Self> {
        Self::new(s.chars().collect())
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn encode(&self, s: &str) -> Result<Vec<usize>> {
        s.chars()
            .map(|c| {
                self.symbols
                    .iter()
                    .position(|&x| x == c)
                    .ok_or(Error::UnknownSymbol(c))
            })
            .collect()
    }

    pub fn decode(&self, seq: &[usize]) -> String {
        seq.iter().map(|&i| self.symbols[i]).collect()
    }
}

/// Number of sequences of length `len` over `v` symbols, or an error past
/// [`MAX_ENUMERATION`].
pub fn space_size(v: usize, len: usize) -> Result<usize> {
    let mut n: usize = 1;
    for _ in 0..len {
        n = n.saturating_mul(v);
        if n > MAX_ENUMERATION {
            return Err(Error::TooLarge {
                what: "sequence space",
                actual: v.saturating_pow(len as u32),
                limit: MAX_ENUMERATION,
            });
        }
    }
    Ok(n)
}

/// The `index`-th sequence in lexicographic order.
pub fn sequence_at(index: usize, v: usize, len: usize) -> Vec<usize> {
    let mut seq = vec![0; len];
    let mut rest = index;
    for slot in seq.iter_mut().rev() {
        *slot = rest % v;
        rest /= v;
    }
    seq
}

/// Position of `seq` in lexicographic order.
pub fn sequence_index(seq: &[usize], v: usize) -> usize {
    seq.iter().fold(0, |acc, &x| acc * v + x)
}

/// Exact distribution of one context over all `V^T` sequences, in
/// lexicographic order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelDistribution {
    pub context: usize,
    pub dist: FiniteDistribution,
}

impl ModelDistribution {
    pub fn probs(&self) -> &[f64] {
        self.dist.probs()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelClass {
    #[serde(rename = "AR")]
    Autoregressive,
    #[serde(rename = "NAR")]
    NonAutoregressive,
}

impl ModelClass {
    pub fn tag(self) -> &'static str {
        match self {
            ModelClass::Autoregressive => "AR",
            ModelClass::NonAutoregressive => "NAR",
        }
    }
}

/// Read-only interface shared by trained models and exact test doubles.
pub trait SequenceModel {
    fn class(&self) -> ModelClass;
    fn vocab(&self) -> &Vocab;
    fn seq_len(&self) -> usize;
    fn num_contexts(&self) -> usize;

    /// Log-distribution of the token at position `prefix.len()`. Models
    /// without prefix dependence ignore the prefix contents.
    fn next_token_logprobs(&self, context: usize, prefix: &[usize]) -> Result<Vec<f64>>;

    fn next_token_probs(&self, context: usize, prefix: &[usize]) -> Result<Vec<f64>> {
        Ok(self
            .next_token_logprobs(context, prefix)?
            .into_iter()
            .map(f64::exp)
            .collect())
    }

    fn sequence_logprob(&self, context: usize, seq: &[usize]) -> Result<SequenceLogProb> {
        if seq.len() != self.seq_len() {
            return Err(Error::Model(format!(
                "sequence length {} but model emits {}",
                seq.len(),
                self.seq_len()
            )));
        }
        if let Some(&bad) = seq.iter().find(|&&x| x >= self.vocab().size()) {
            return Err(Error::Model(format!("token index {bad} outside vocabulary")));
        }
        let mut lps = Vec::with_capacity(seq.len());
        for t in 0..seq.len() {
            lps.push(self.next_token_logprobs(context, &seq[..t])?[seq[t]]);
        }
        SequenceLogProb::new(lps)
    }

    fn sequence_logprob_str(&self, context: usize, seq: &str) -> Result<SequenceLogProb> {
        let ids = self.vocab().encode(seq)?;
        self.sequence_logprob(context, &ids)
    }

    /// Exact probability of every sequence, by walking the prefix tree.
    fn enumerate_distribution(&self, context: usize) -> Result<ModelDistribution> {
        let v = self.vocab().size();
        let n = space_size(v, self.seq_len())?;
        check_context(context, self.num_contexts())?;
        let mut probs = Vec::with_capacity(n);
        let mut prefix = Vec::with_capacity(self.seq_len());
        self.walk(context, &mut prefix, 0.0, &mut probs)?;
        let labels = (0..n)
            .map(|i| self.vocab().decode(&sequence_at(i, v, self.seq_len())))
            .collect();
        let dist = FiniteDistribution::with_tolerance(probs, labels, 1e-9)?;
        Ok(ModelDistribution { context, dist })
    }

    #[doc(hidden)]
    fn walk(&self, context: usize, prefix: &mut Vec<usize>, lp: f64, out: &mut Vec<f64>) -> Result<()> {
        if prefix.len() == self.seq_len() {
            out.push(lp.exp());
            return Ok(());
        }
        let step = self.next_token_logprobs(context, prefix)?;
        for (x, l) in step.into_iter().enumerate() {
            prefix.push(x);
            self.walk(context, prefix, lp + l, out)?;
            prefix.pop();
        }
        Ok(())
    }
}

fn check_context(context: usize, n: usize) -> Result<()> {
    if context >= n {
        return Err(Error::Model(format!("context {context} outside 0..{n}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab: Vocab,
    pub seq_len: usize,
    pub num_contexts: usize,
    #[serde(default = "default_embed")]
    pub embed_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
}

fn default_embed() -> usize {
    8
}
fn default_hidden() -> usize {
    32
}

impl ModelConfig {
    pub fn new(vocab: Vocab, seq_len: usize, num_contexts: usize) -> Self {
        Self {
            vocab,
            seq_len,
            num_contexts,
            embed_dim: default_embed(),
            hidden_dim: default_hidden(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.seq_len == 0 || self.num_contexts == 0 || self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Model(format!("degenerate model dimensions {self:?}")));
        }
        Ok(())
    }
}

/// A named, ordered set of parameter tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    fn new(specs: &[(String, Vec<usize>)], mut fill: impl FnMut() -> f64) -> Self {
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape) in specs {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| fill()).collect();
            names.push(name.clone());
            tensors.push(Tensor::raw(shape.clone(), data));
        }
        Self { names, tensors }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Adds every tensor to `graph` as a named parameter leaf.
    pub fn attach(&self, graph: &mut Graph) -> Vec<Var> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| graph.param(n.clone(), t.clone()))
            .collect()
    }
}

/// Small MLP sequence model; see the module docs for the architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuralModel {
    class: ModelClass,
    config: ModelConfig,
    params: ParamSet,
}

/// Graph handles produced by [`NeuralModel::forward_graph`].
pub struct BatchForward {
    /// Per position: `[B, V]` log-softmax outputs.
    pub log_probs: Vec<Var>,
    /// Per position: `[B]` log-probability of the observed token.
    pub token_logprobs: Vec<Var>,
    /// `[B]` sequence log-probabilities.
    pub totals: Var,
}

impl NeuralModel {
    fn param_specs(class: ModelClass, cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let v = cfg.vocab.size();
        let input = cfg.embed_dim
            + match class {
                ModelClass::Autoregressive => (cfg.seq_len - 1) * v,
                ModelClass::NonAutoregressive => 0,
            };
        let mut specs = vec![
            ("embed".to_string(), vec![cfg.num_contexts, cfg.embed_dim]),
            ("w1".to_string(), vec![input, cfg.hidden_dim]),
            ("b1".to_string(), vec![cfg.hidden_dim]),
        ];
        for t in 0..cfg.seq_len {
            specs.push((format!("head{t}.w"), vec![cfg.hidden_dim, v]));
            specs.push((format!("head{t}.b"), vec![v]));
        }
        specs
    }

    /// Parameters drawn uniformly from `[-0.1, 0.1]`.
    pub fn new(class: ModelClass, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ParamSet::new(&Self::param_specs(class, &config), || rng.gen_range(-0.1..=0.1));
        Ok(Self { class, config, params })
    }

    pub fn zeros(class: ModelClass, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = ParamSet::new(&Self::param_specs(class, &config), || 0.0);
        Ok(Self { class, config, params })
    }

    pub fn ar(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::new(ModelClass::Autoregressive, config, seed)
    }

    pub fn nar(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::new(ModelClass::NonAutoregressive, config, seed)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn hidden(&self, context: usize, prefix: &[usize]) -> Vec<f64> {
        let (d, h, v) = (self.config.embed_dim, self.config.hidden_dim, self.config.vocab.size());
        let emb = &self.params.tensors[0].data()[context * d..(context + 1) * d];
        let w1 = self.params.tensors[1].data();
        let mut acc = self.params.tensors[2].data().to_vec();
        for (i, &e) in emb.iter().enumerate() {
            for (a, w) in acc.iter_mut().zip(&w1[i * h..(i + 1) * h]) {
                *a += e * w;
            }
        }
        if self.class == ModelClass::Autoregressive {
            for (j, &x) in prefix.iter().enumerate() {
                let row = d + j * v + x;
                for (a, w) in acc.iter_mut().zip(&w1[row * h..(row + 1) * h]) {
                    *a += w;
                }
            }
        }
        acc.iter_mut().for_each(|a| *a = a.tanh());
        acc
    }

    fn logits(&self, t: usize, hidden: &[f64]) -> Vec<f64> {
        let v = self.config.vocab.size();
        let w = self.params.tensors[3 + 2 * t].data();
        let mut out = self.params.tensors[4 + 2 * t].data().to_vec();
        for (i, &hv) in hidden.iter().enumerate() {
            for (o, wv) in out.iter_mut().zip(&w[i * v..(i + 1) * v]) {
                *o += hv * wv;
            }
        }
        out
    }

    /// Builds the batched training forward pass. `params` are the handles
    /// returned by [`ParamSet::attach`] on this model's parameters.
    pub fn forward_graph(
        &self,
        graph: &mut Graph,
        params: &[Var],
        contexts: &[usize],
        seqs: &[Vec<usize>],
    ) -> Result<BatchForward> {
        let (v, len) = (self.config.vocab.size(), self.config.seq_len);
        let b = contexts.len();
        if b == 0 || seqs.len() != b {
            return Err(Error::Model(format!("{} contexts for {} sequences", b, seqs.len())));
        }
        for (c, s) in contexts.iter().zip(seqs) {
            check_context(*c, self.config.num_contexts)?;
            if s.len() != len || s.iter().any(|&x| x >= v) {
                return Err(Error::Model(format!("malformed training sequence {s:?}")));
            }
        }
        let select = graph.constant(Tensor::one_hot(contexts, self.config.num_contexts));
        let emb = graph.matmul(select, params[0])?;
        let shared_hidden = match self.class {
            ModelClass::NonAutoregressive => Some(self.hidden_layer(graph, params, emb)?),
            ModelClass::Autoregressive => None,
        };
        let mut log_probs = Vec::with_capacity(len);
        let mut token_logprobs = Vec::with_capacity(len);
        for t in 0..len {
            let hidden = match shared_hidden {
                Some(h) => h,
                None if len == 1 => self.hidden_layer(graph, params, emb)?,
                None => {
                    let slots = (len - 1) * v;
                    let mut enc = vec![0.0; b * slots];
                    for (r, s) in seqs.iter().enumerate() {
                        for (j, &x) in s[..t].iter().enumerate() {
                            enc[r * slots + j * v + x] = 1.0;
                        }
                    }
                    let enc = graph.constant(Tensor::raw(vec![b, slots], enc));
                    let input = graph.concat(&[emb, enc])?;
                    self.hidden_layer(graph, params, input)?
                }
            };
            let logits = graph.matmul(hidden, params[3 + 2 * t])?;
            let logits = graph.add(logits, params[4 + 2 * t])?;
            let lp = graph.log_softmax(logits);
            let targets: Vec<usize> = seqs.iter().map(|s| s[t]).collect();
            token_logprobs.push(graph.gather(lp, &targets)?);
            log_probs.push(lp);
        }
        let mut totals = token_logprobs[0];
        for &tl in &token_logprobs[1..] {
            totals = graph.add(totals, tl)?;
        }
        Ok(BatchForward {
            log_probs,
            token_logprobs,
            totals,
        })
    }

    fn hidden_layer(&self, graph: &mut Graph, params: &[Var], input: Var) -> Result<Var> {
        let pre = graph.matmul(input, params[1])?;
        let pre = graph.add(pre, params[2])?;
        Ok(graph.tanh(pre))
    }

    pub fn to_checkpoint(&self, seed: u64, config_hash: &str) -> Checkpoint {
        Checkpoint {
            class: self.class,
            config: self.config.clone(),
            seed,
            config_hash: config_hash.to_string(),
            params: self.params.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let specs = Self::param_specs(ck.class, &ck.config);
        let ok = specs.len() == ck.params.names.len()
            && specs
                .iter()
                .zip(ck.params.names.iter().zip(&ck.params.tensors))
                .all(|((n, s), (cn, ct))| n == cn && s.as_slice() == ct.shape() && ct.numel() == ct.data().len());
        if !ok {
            return Err(Error::Model("checkpoint parameters do not match its config".into()));
        }
        for t in &ck.params.tensors {
            Tensor::new(t.shape().to_vec(), t.data().to_vec())?;
        }
        Ok(Self {
            class: ck.class,
            config: ck.config,
            params: ck.params,
        })
    }
}

impl SequenceModel for NeuralModel {
    fn class(&self) -> ModelClass {
        self.class
    }

    fn vocab(&self) -> &Vocab {
        &self.config.vocab
    }

    fn seq_len(&self) -> usize {
        self.config.seq_len
    }

    fn num_contexts(&self) -> usize {
        self.config.num_contexts
    }

    fn next_token_logprobs(&self, context: usize, prefix: &[usize]) -> Result<Vec<f64>> {
        check_context(context, self.config.num_contexts)?;
        if prefix.len() >= self.config.seq_len {
            return Err(Error::Model(format!(
                "prefix length {} leaves no position below {}",
                prefix.len(),
                self.config.seq_len
            )));
        }
        let hidden = self.hidden(context, prefix);
        Ok(log_softmax(&self.logits(prefix.len(), &hidden)))
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Serialized model: shapes, flat parameter arrays, seed and config hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub class: ModelClass,
    pub config: ModelConfig,
    pub seed: u64,
    pub config_hash: String,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Exact model defined by explicit probability tables, for tests and
/// reference computations.
///
/// An autoregressive table is built from a joint distribution per context;
/// conditionals follow by marginalization, and prefixes with zero mass get a
/// uniform next-token distribution. A product table stores one marginal per
/// position.
#[derive(Clone, Debug)]
pub struct TabularModel {
    class: ModelClass,
    vocab: Vocab,
    seq_len: usize,
    /// AR: `(context, prefix) -> next-token probs`. NAR: `(context, [t])`.
    tables: HashMap<(usize, Vec<usize>), Vec<f64>>,
    num_contexts: usize,
}

impl TabularModel {
    /// `joints[c]` lists probabilities for all `V^T` sequences in
    /// lexicographic order.
    pub fn from_joint(vocab: Vocab, seq_len: usize, joints: &[Vec<f64>]) -> Result<Self> {
        let v = vocab.size();
        let n = space_size(v, seq_len)?;
        let mut tables = HashMap::new();
        for (c, joint) in joints.iter().enumerate() {
            if joint.len() != n {
                return Err(Error::Model(format!("joint of length {} for {n} sequences", joint.len())));
            }
            FiniteDistribution::with_tolerance(joint.clone(), (0..n).map(|i| i.to_string()).collect(), 1e-9)?;
            for t in 0..seq_len {
                let block = v.pow((seq_len - t) as u32);
                let sub = v.pow((seq_len - t - 1) as u32);
                for p in 0..v.pow(t as u32) {
                    let prefix = sequence_at(p, v, t);
                    let masses: Vec<f64> = (0..v)
                        .map(|x| joint[p * block + x * sub..p * block + (x + 1) * sub].iter().sum())
                        .collect();
                    let z: f64 = masses.iter().sum();
                    let cond = if z > 0.0 {
                        masses.iter().map(|m| m / z).collect()
                    } else {
                        vec![1.0 / v as f64; v]
                    };
                    tables.insert((c, prefix), cond);
                }
            }
        }
        Ok(Self {
            class: ModelClass::Autoregressive,
            vocab,
            seq_len,
            tables,
            num_contexts: joints.len(),
        })
    }

    /// `marginals[c][t]` is the distribution of position `t` in context `c`.
    pub fn product(vocab: Vocab, marginals: &[Vec<Vec<f64>>]) -> Result<Self> {
        let seq_len = marginals.first().map_or(0, Vec::len);
        let mut tables = HashMap::new();
        for (c, heads) in marginals.iter().enumerate() {
            if heads.len() != seq_len || seq_len == 0 {
                return Err(Error::Model("ragged or empty marginals".into()));
            }
            for (t, m) in heads.iter().enumerate() {
                if m.len() != vocab.size() {
                    return Err(Error::Model(format!("marginal of width {} for vocabulary {}", m.len(), vocab.size())));
                }
                FiniteDistribution::with_tolerance(m.clone(), (0..m.len()).map(|i| i.to_string()).collect(), 1e-9)?;
                tables.insert((c, vec![t]), m.clone());
            }
        }
        Ok(Self {
            class: ModelClass::NonAutoregressive,
            vocab,
            seq_len,
            tables,
            num_contexts: marginals.len(),
        })
    }

    /// Puts all mass of every context on `seq`.
    pub fn deterministic(vocab: Vocab, seq: &[usize], num_contexts: usize) -> Result<Self> {
        let v = vocab.size();
        let n = space_size(v, seq.len())?;
        let mut joint = vec![0.0; n];
        joint[sequence_index(seq, v)] = 1.0;
        Self::from_joint(vocab, seq.len(), &vec![joint; num_contexts])
    }
}

impl SequenceModel for TabularModel {
    fn class(&self) -> ModelClass {
        self.class
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn seq_len(&self) -> usize {
        self.seq_len
    }

    fn num_contexts(&self) -> usize {
        self.num_contexts
    }

    fn next_token_logprobs(&self, context: usize, prefix: &[usize]) -> Result<Vec<f64>> {
        check_context(context, self.num_contexts)?;
        if prefix.len() >= self.seq_len {
            return Err(Error::Model(format!("prefix length {} too long", prefix.len())));
        }
        let key = match self.class {
            ModelClass::Autoregressive => (context, prefix.to_vec()),
            ModelClass::NonAutoregressive => (context, vec![prefix.len()]),
        };
        let probs = self
            .tables
            .get(&key)
            .ok_or_else(|| Error::Model(format!("no table entry for prefix {prefix:?}")))?;
        Ok(probs.iter().map(|p| p.ln()).collect())
    }
}
