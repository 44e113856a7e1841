//! Minibatch Adam training under any loss family, the two-phase
//! pretrain/finetune recipe, and exponent sweeps.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::loss::LossFamily;
use crate::metrics::{eval_metrics, MetricsBundle};
use crate::models::{ModelClass, ModelConfig, NeuralModel, SequenceModel};
use crate::tasks::{sample_dataset, Dataset, Task};
use crate::tensor::Tensor;

/// Beam widths evaluated after every phase.
pub const EVAL_BEAM_WIDTHS: [usize; 1] = [5];

fn default_betas() -> (f64, f64) {
    (0.9, 0.98)
}
fn default_eps() -> f64 {
    1e-8
}
fn default_clip() -> f64 {
    5.0
}
fn default_weight_limit() -> f64 {
    1e6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerCfg {
    pub lr: f64,
    pub warmup_steps: usize,
    pub steps: usize,
    pub batch_size: usize,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Global gradient-norm clip.
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    /// Label-smoothing mass `eps_ls` in `[0, 1)`.
    #[serde(default)]
    pub label_smoothing: f64,
    /// Pure convex losses stall from random init; they must be requested
    /// explicitly.
    #[serde(default)]
    pub allow_pure_convex: bool,
    /// Abort when a per-sequence gradient weight exceeds this.
    #[serde(default = "default_weight_limit")]
    pub weight_limit: f64,
}

impl OptimizerCfg {
    pub fn pretrain() -> Self {
        Self {
            lr: 5e-3,
            warmup_steps: 100,
            steps: 2000,
            batch_size: 64,
            betas: default_betas(),
            eps: default_eps(),
            clip_norm: default_clip(),
            label_smoothing: 0.1,
            allow_pure_convex: false,
            weight_limit: default_weight_limit(),
        }
    }

    /// Finetuning defaults; label smoothing stays on for autoregressive
    /// models and is off for non-autoregressive ones.
    pub fn finetune(class: ModelClass) -> Self {
        Self {
            lr: 1e-3,
            steps: 500,
            label_smoothing: match class {
                ModelClass::Autoregressive => 0.1,
                ModelClass::NonAutoregressive => 0.0,
            },
            ..Self::pretrain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.steps == 0 {
            return bad("steps must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad("betas must lie in [0, 1)");
        }
        if [self.eps, self.clip_norm, self.weight_limit].iter().any(|x| x.is_nan() || *x <= 0.0) {
            return bad("eps, clip_norm and weight_limit must be positive");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("label_smoothing must lie in [0, 1)");
        }
        Ok(())
    }

    /// Linear warmup, then inverse square-root decay.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            return self.lr;
        }
        let (s, w) = (step as f64, self.warmup_steps as f64);
        self.lr * (s / w).min((w / s).sqrt())
    }
}

/// Adam with bias correction.
pub struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: usize,
}

impl Adam {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor], cfg: &OptimizerCfg) {
        self.step += 1;
        let lr = cfg.lr_at(self.step);
        let (b1, b2) = cfg.betas;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let (pd, gd) = (p.data_mut(), g.data());
            for i in 0..gd.len() {
                let mi = &mut m.data_mut()[i];
                *mi = b1 * *mi + (1.0 - b1) * gd[i];
                let mhat = *mi / c1;
                let vi = &mut v.data_mut()[i];
                *vi = b2 * *vi + (1.0 - b2) * gd[i] * gd[i];
                let vhat = *vi / c2;
                pd[i] -= lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
    }
}

/// Which gradient path the composed loss uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradPath {
    /// Differentiate `f(g(p))` directly.
    Exact,
    /// `w * (-g)` with the weight `w = f'(g)` held constant; same gradient.
    Detached,
}

/// Per-sequence weights `f'(g)`, with the instability guard applied.
pub fn guarded_weights(family: &LossFamily, g: &[f64], len: usize, limit: f64, step: usize) -> Result<Vec<f64>> {
    g.iter()
        .map(|&gv| {
            let w = family.weight_at(gv, len);
            if !w.is_finite() || w > limit {
                Err(Error::UnstableWeight { step, weight: w, limit })
            } else {
                Ok(w)
            }
        })
        .collect()
}

/// Builds the mean batch loss on `graph`.
///
/// Each sequence contributes `(1 - eps_ls) L_f + eps_ls * w * s`, where `s`
/// is the uniform label-smoothing cross entropy averaged over positions and
/// vocabulary, and `w` is the detached weight `f'(g)`.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    graph: &mut Graph,
    model: &NeuralModel,
    params: &[Var],
    contexts: &[usize],
    seqs: &[Vec<usize>],
    family: &LossFamily,
    eps_ls: f64,
    path: GradPath,
    weight_limit: f64,
    step: usize,
) -> Result<Var> {
    let len = model.seq_len();
    let v = model.vocab().size();
    let fwd = model.forward_graph(graph, params, contexts, seqs)?;
    let g = graph.scale(fwd.totals, 1.0 / len as f64);
    if graph.value(g).data().iter().any(|x| x.is_nan()) {
        return Err(Error::NanLoss { step });
    }
    let weights = guarded_weights(family, graph.value(g).data(), len, weight_limit, step)?;
    let b = contexts.len();

    let composed = match path {
        GradPath::Detached => {
            let w = graph.constant(Tensor::raw(vec![b], weights.clone()));
            let neg_g = graph.neg(g);
            graph.mul(w, neg_g)?
        }
        GradPath::Exact => match *family {
            LossFamily::Log => graph.neg(g),
            LossFamily::ExpComposed { k } => {
                let kg = graph.scale(g, k);
                let e = graph.exp(kg);
                graph.neg(e)
            }
            LossFamily::PowerComposed { k } => {
                let neg_g = graph.neg(g);
                graph.pow(neg_g, k)
            }
            LossFamily::PureConvex { variant } => {
                let p = graph.exp(fwd.totals);
                let fp = match variant {
                    crate::loss::ConvexVariant::Identity => p,
                    crate::loss::ConvexVariant::Exp => graph.exp(p),
                };
                graph.neg(fp)
            }
        },
    };

    let per_seq = if eps_ls > 0.0 {
        let mut all = graph.sum(fwd.log_probs[0], 1)?;
        for &lp in &fwd.log_probs[1..] {
            let s = graph.sum(lp, 1)?;
            all = graph.add(all, s)?;
        }
        let smooth = graph.scale(all, -1.0 / (len * v) as f64);
        let w = graph.constant(Tensor::raw(vec![b], weights));
        let weighted = graph.mul(w, smooth)?;
        let a = graph.scale(composed, 1.0 - eps_ls);
        let c = graph.scale(weighted, eps_ls);
        graph.add(a, c)?
    } else {
        composed
    };
    Ok(graph.mean_all(per_seq))
}

/// Exact expected loss over the data distribution, contexts weighted
/// uniformly.
pub fn expected_loss<M: SequenceModel + ?Sized>(model: &M, task: &Task, family: &LossFamily) -> Result<f64> {
    let mut total = 0.0;
    for c in 0..task.num_contexts() {
        for mode in task.modes(c) {
            let lp = model.sequence_logprob(c, mode)?;
            let g = lp.total() / lp.len() as f64;
            total += task.prob(c, mode) * family.loss_at(g, lp.len());
        }
    }
    Ok(total / task.num_contexts() as f64)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_DATA: u64 = 1;
const STREAM_PRETRAIN: u64 = 2;
const STREAM_FINETUNE: u64 = 3;

/// Trains `model` in place and returns the per-step mean batch loss.
pub fn train_phase(
    model: &mut NeuralModel,
    dataset: &Dataset,
    family: &LossFamily,
    cfg: &OptimizerCfg,
    seed: u64,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    family.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("empty dataset".into()));
    }
    if matches!(family, LossFamily::PureConvex { .. }) && !cfg.allow_pure_convex {
        return Err(Error::InvalidConfig(
            "pure convex training needs allow_pure_convex = true".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(model.params().tensors());
    let mut curve = Vec::with_capacity(cfg.steps);
    let mut contexts = Vec::with_capacity(cfg.batch_size);
    let mut seqs = Vec::with_capacity(cfg.batch_size);
    for step in 1..=cfg.steps {
        contexts.clear();
        seqs.clear();
        for _ in 0..cfg.batch_size {
            let (c, s) = &dataset.examples[rng.gen_range(0..dataset.len())];
            contexts.push(*c);
            seqs.push(s.clone());
        }
        let mut graph = Graph::new();
        let params = model.params().attach(&mut graph);
        let loss = batch_loss(
            &mut graph,
            model,
            &params,
            &contexts,
            &seqs,
            family,
            cfg.label_smoothing,
            GradPath::Exact,
            cfg.weight_limit,
            step,
        )?;
        let value = graph.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NanLoss { step });
        }
        graph.backward(loss)?;
        let mut grads: Vec<Tensor> = params
            .iter()
            .zip(model.params().tensors())
            .map(|(v, t)| graph.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        let norm = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NanLoss { step });
        }
        if norm > cfg.clip_norm {
            let s = cfg.clip_norm / norm;
            grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|x| *x *= s));
        }
        adam.update(model.params_mut().tensors_mut(), &grads, cfg);
        curve.push(value);
    }
    Ok(curve)
}

fn default_dataset_size() -> usize {
    4096
}

/// Everything needed to reproduce one two-phase run, except the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhasePlan {
    pub model_class: ModelClass,
    #[serde(default = "default_embed")]
    pub embed_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "default_dataset_size")]
    pub dataset_size: usize,
    pub pretrain: OptimizerCfg,
    pub finetune: OptimizerCfg,
    pub finetune_family: LossFamily,
}

fn default_embed() -> usize {
    8
}
fn default_hidden() -> usize {
    32
}

impl PhasePlan {
    pub fn new(model_class: ModelClass, finetune_family: LossFamily) -> Self {
        Self {
            model_class,
            embed_dim: default_embed(),
            hidden_dim: default_hidden(),
            dataset_size: default_dataset_size(),
            pretrain: OptimizerCfg::pretrain(),
            finetune: OptimizerCfg::finetune(model_class),
            finetune_family,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.finetune_family.validate()?;
        if self.dataset_size == 0 {
            return Err(Error::InvalidConfig("dataset_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, task: &Task) -> ModelConfig {
        ModelConfig {
            vocab: task.vocab.clone(),
            seq_len: task.seq_len,
            num_contexts: task.num_contexts(),
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
        }
    }

    /// Hex SHA-256 of the plan and task, truncated to 16 characters.
    pub fn config_hash(&self, task: &Task) -> String {
        config_hash(&(self, task))
    }
}

/// Hex SHA-256 (first 16 characters) of a value's JSON encoding.
pub fn config_hash(value: &impl Serialize) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&json))[..16].to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub family: LossFamily,
    pub loss_curve: Vec<f64>,
    pub metrics: MetricsBundle,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    pub model_class: ModelClass,
    /// Finetune exponent, when the family has one.
    pub k: Option<f64>,
    pub pretrain: PhaseRecord,
    pub finetune: PhaseRecord,
}

impl RunRecord {
    pub fn file_name(&self) -> String {
        format!("{}-{}.json", self.config_hash, self.seed)
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(self.file_name());
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

struct Pretrained {
    model: NeuralModel,
    dataset: Dataset,
    record: PhaseRecord,
}

fn pretrain(plan: &PhasePlan, task: &Task, dataset: Dataset, seed: u64) -> Result<Pretrained> {
    let mut model = NeuralModel::new(plan.model_class, plan.model_config(task), seed)?;
    let start = Instant::now();
    let curve = train_phase(
        &mut model,
        &dataset,
        &LossFamily::Log,
        &plan.pretrain,
        stream_seed(seed, STREAM_PRETRAIN),
    )?;
    let wall_ms = start.elapsed().as_millis() as u64;
    let metrics = eval_metrics(&model, task, &EVAL_BEAM_WIDTHS)?;
    Ok(Pretrained {
        model,
        dataset,
        record: PhaseRecord {
            family: LossFamily::Log,
            loss_curve: curve,
            metrics,
            wall_ms,
        },
    })
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    stream_rng(seed, stream).gen()
}

fn finetune(plan: &PhasePlan, task: &Task, base: &Pretrained, seed: u64) -> Result<RunRecord> {
    let mut model = base.model.clone();
    let start = Instant::now();
    let curve = train_phase(
        &mut model,
        &base.dataset,
        &plan.finetune_family,
        &plan.finetune,
        stream_seed(seed, STREAM_FINETUNE),
    )?;
    let wall_ms = start.elapsed().as_millis() as u64;
    let metrics = eval_metrics(&model, task, &EVAL_BEAM_WIDTHS)?;
    Ok(RunRecord {
        config_hash: plan.config_hash(task),
        seed,
        model_class: plan.model_class,
        k: plan.finetune_family.k(),
        pretrain: base.record.clone(),
        finetune: PhaseRecord {
            family: plan.finetune_family,
            loss_curve: curve,
            metrics,
            wall_ms,
        },
    })
}

/// The training set a run with `seed` draws from `task`.
pub fn dataset_for(task: &Task, plan: &PhasePlan, seed: u64) -> Result<Dataset> {
    sample_dataset(task, plan.dataset_size, stream_seed(seed, STREAM_DATA))
}

/// MLE pretraining followed by finetuning under `plan.finetune_family`.
pub fn run_two_phase(plan: &PhasePlan, task: &Task, dataset: Dataset, seed: u64) -> Result<RunRecord> {
    plan.validate()?;
    let base = pretrain(plan, task, dataset, seed)?;
    finetune(plan, task, &base, seed)
}

/// One pretraining per seed, then one finetune per `k`. Runs execute in
/// parallel; each is single-threaded and seeded independently, so results
/// do not depend on scheduling. Records come back ordered by seed, then k.
pub fn sweep_k(plan: &PhasePlan, task: &Task, k_values: &[f64], seeds: &[u64]) -> Result<Vec<RunRecord>> {
    if k_values.is_empty() {
        return Err(Error::InvalidConfig("k sweep needs at least one value".into()));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("seeds must not be empty".into()));
    }
    plan.validate()?;
    let plans: Vec<PhasePlan> = k_values
        .iter()
        .map(|&k| {
            Ok(PhasePlan {
                finetune_family: plan.finetune_family.with_k(k)?,
                ..plan.clone()
            })
        })
        .collect::<Result<_>>()?;
    let bases: Vec<Pretrained> = seeds
        .par_iter()
        .map(|&s| pretrain(plan, task, dataset_for(task, plan, s)?, s))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..seeds.len())
        .flat_map(|i| (0..plans.len()).map(move |j| (i, j)))
        .collect();
    jobs.par_iter()
        .map(|&(i, j)| finetune(&plans[j], task, &bases[i], seeds[i]))
        .collect()
}
