//! Exact evaluation of a model against a task's ground truth.

use serde::{Deserialize, Serialize};

use crate::decode::{beam_decode, exact_argmax, greedy_decode};
use crate::dist::{entropy, kl_divergence};
use crate::error::{Error, Result};
use crate::models::{space_size, SequenceModel};
use crate::tasks::Task;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextMetrics {
    pub context: usize,
    /// `KL(p_data || p_model)` in nats.
    pub kl_nats: f64,
    pub kl_clamped: bool,
    pub entropy_nats: f64,
    /// `-ln p_model` of the greedy decode.
    pub output_nll: f64,
    pub decoded: String,
    /// The greedy decode has no data mass.
    pub mixture: bool,
    pub greedy_match: bool,
    /// `(width, matches data argmax)` per requested width.
    pub beam_match: Vec<(usize, bool)>,
    pub exact_match: bool,
    /// Model mass on the `n` most probable data modes, for `n = 1..=modes`.
    pub top_n_mass: Vec<f64>,
}

/// Per-context metrics plus their means over contexts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub per_context: Vec<ContextMetrics>,
    pub kl_nats: f64,
    pub entropy_nats: f64,
    pub output_nll: f64,
    /// Fraction of contexts whose decode is not a data mode.
    pub mixture_rate: f64,
    pub greedy_match: f64,
    pub beam_match: Vec<(usize, f64)>,
    pub exact_match: f64,
}

impl MetricsBundle {
    pub fn beam_match_rate(&self, width: usize) -> Option<f64> {
        self.beam_match.iter().find(|(w, _)| *w == width).map(|(_, r)| *r)
    }

    /// Fraction of contexts where greedy and width-`width` beam disagree on
    /// whether they recover the data argmax.
    pub fn greedy_beam_gap(&self, width: usize) -> Option<f64> {
        let mut gaps = 0usize;
        for c in &self.per_context {
            let beam = c.beam_match.iter().find(|(w, _)| *w == width)?.1;
            gaps += usize::from(beam != c.greedy_match);
        }
        Some(gaps as f64 / self.per_context.len() as f64)
    }
}

pub fn eval_context<M: SequenceModel + ?Sized>(
    model: &M,
    task: &Task,
    context: usize,
    beam_widths: &[usize],
) -> Result<ContextMetrics> {
    if model.vocab() != &task.vocab || model.seq_len() != task.seq_len {
        return Err(Error::Model("model and task disagree on vocabulary or length".into()));
    }
    let dist = model.enumerate_distribution(context)?;
    let probs = dist.probs();
    let data = task.joint(context);
    let kl = kl_divergence(data, probs);
    let greedy = greedy_decode(model, context)?;
    let target = task.data_argmax(context);
    let full = space_size(task.vocab.size(), task.seq_len)?;
    let beam_match = beam_widths
        .iter()
        .map(|&w| Ok((w, beam_decode(model, context, w.min(full))?.sequence == target)))
        .collect::<Result<Vec<_>>>()?;
    let exact = exact_argmax(model, context)?;
    let v = task.vocab.size();
    let mut top_n_mass = Vec::new();
    let mut acc = 0.0;
    for mode in task.modes(context) {
        acc += probs[crate::models::sequence_index(mode, v)];
        top_n_mass.push(acc);
    }
    Ok(ContextMetrics {
        context,
        kl_nats: kl.nats,
        kl_clamped: kl.clamped,
        entropy_nats: entropy(probs),
        output_nll: -greedy.model_logprob,
        decoded: task.vocab.decode(&greedy.sequence),
        mixture: !task.is_mode(context, &greedy.sequence),
        greedy_match: greedy.sequence == target,
        beam_match,
        exact_match: exact.sequence == target,
        top_n_mass,
    })
}

/// Evaluates every context of `task` and averages.
pub fn eval_metrics<M: SequenceModel + ?Sized>(model: &M, task: &Task, beam_widths: &[usize]) -> Result<MetricsBundle> {
    let per_context = (0..task.num_contexts())
        .map(|c| eval_context(model, task, c, beam_widths))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(per_context, beam_widths))
}

fn summarize(per_context: Vec<ContextMetrics>, beam_widths: &[usize]) -> MetricsBundle {
    let n = per_context.len() as f64;
    let mean = |f: &dyn Fn(&ContextMetrics) -> f64| per_context.iter().map(f).sum::<f64>() / n;
    let rate = |f: &dyn Fn(&ContextMetrics) -> bool| mean(&|c| f64::from(u8::from(f(c))));
    let beam_match = beam_widths
        .iter()
        .enumerate()
        .map(|(i, &w)| (w, rate(&|c| c.beam_match[i].1)))
        .collect();
    MetricsBundle {
        kl_nats: mean(&|c| c.kl_nats),
        entropy_nats: mean(&|c| c.entropy_nats),
        output_nll: mean(&|c| c.output_nll),
        mixture_rate: rate(&|c| c.mixture),
        greedy_match: rate(&|c| c.greedy_match),
        exact_match: rate(&|c| c.exact_match),
        beam_match,
        per_context,
    }
}
