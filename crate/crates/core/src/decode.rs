//! Greedy, beam, exact and positionwise decoding. Ties always resolve to the
//! lexicographically smallest sequence (by vocabulary index).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{space_size, ModelClass, SequenceModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMethod {
    Greedy,
    Beam,
    Exact,
    NarArgmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub sequence: Vec<usize>,
    /// Natural-log probability of `sequence` under the model.
    pub model_logprob: f64,
    pub method: DecodeMethod,
    pub beam_width: Option<usize>,
}

/// Higher log-probability first, then lexicographic order.
fn rank(a: &(Vec<usize>, f64), b: &(Vec<usize>, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

fn argmax_lowest(xs: &[f64]) -> usize {
    crate::dist::argmax(xs)
}

pub fn greedy_decode<M: SequenceModel + ?Sized>(model: &M, context: usize) -> Result<DecodeResult> {
    let mut seq = Vec::with_capacity(model.seq_len());
    let mut lp = 0.0;
    for _ in 0..model.seq_len() {
        let step = model.next_token_logprobs(context, &seq)?;
        let x = argmax_lowest(&step);
        lp += step[x];
        seq.push(x);
    }
    Ok(DecodeResult {
        sequence: seq,
        model_logprob: lp,
        method: DecodeMethod::Greedy,
        beam_width: None,
    })
}

/// Standard beam search on total log-probability, no length penalty.
pub fn beam_decode<M: SequenceModel + ?Sized>(model: &M, context: usize, width: usize) -> Result<DecodeResult> {
    let v = model.vocab().size();
    let full = space_size(v, model.seq_len()).unwrap_or(usize::MAX);
    if width == 0 || width > full {
        return Err(Error::Domain(format!("beam width {width} outside 1..={full}")));
    }
    let mut beam: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    for _ in 0..model.seq_len() {
        let mut next = Vec::with_capacity(beam.len() * v);
        for (prefix, lp) in &beam {
            let step = model.next_token_logprobs(context, prefix)?;
            for (x, l) in step.into_iter().enumerate() {
                let mut s = prefix.clone();
                s.push(x);
                next.push((s, lp + l));
            }
        }
        next.sort_by(rank);
        next.truncate(width);
        beam = next;
    }
    let (sequence, model_logprob) = beam.swap_remove(0);
    Ok(DecodeResult {
        sequence,
        model_logprob,
        method: DecodeMethod::Beam,
        beam_width: Some(width),
    })
}

/// True mode of the model by exhaustive enumeration.
pub fn exact_argmax<M: SequenceModel + ?Sized>(model: &M, context: usize) -> Result<DecodeResult> {
    space_size(model.vocab().size(), model.seq_len())?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut prefix = Vec::with_capacity(model.seq_len());
    search(model, context, &mut prefix, 0.0, &mut best)?;
    let (sequence, model_logprob) = best.expect("non-empty sequence space");
    Ok(DecodeResult {
        sequence,
        model_logprob,
        method: DecodeMethod::Exact,
        beam_width: None,
    })
}

fn search<M: SequenceModel + ?Sized>(
    model: &M,
    context: usize,
    prefix: &mut Vec<usize>,
    lp: f64,
    best: &mut Option<(Vec<usize>, f64)>,
) -> Result<()> {
    if prefix.len() == model.seq_len() {
        // lexicographic visiting order: only a strictly better score replaces
        if best.as_ref().is_none_or(|(_, b)| lp > *b) {
            *best = Some((prefix.clone(), lp));
        }
        return Ok(());
    }
    let step = model.next_token_logprobs(context, prefix)?;
    for (x, l) in step.into_iter().enumerate() {
        prefix.push(x);
        search(model, context, prefix, lp + l, best)?;
        prefix.pop();
    }
    Ok(())
}

/// Positionwise argmax of a non-autoregressive model.
pub fn nar_argmax<M: SequenceModel + ?Sized>(model: &M, context: usize) -> Result<DecodeResult> {
    if model.class() != ModelClass::NonAutoregressive {
        return Err(Error::Model("positionwise argmax needs a non-autoregressive model".into()));
    }
    let filler = vec![0; model.seq_len()];
    let mut seq = Vec::with_capacity(model.seq_len());
    let mut lp = 0.0;
    for t in 0..model.seq_len() {
        let step = model.next_token_logprobs(context, &filler[..t])?;
        let x = argmax_lowest(&step);
        lp += step[x];
        seq.push(x);
    }
    Ok(DecodeResult {
        sequence: seq,
        model_logprob: lp,
        method: DecodeMethod::NarArgmax,
        beam_width: None,
    })
}
