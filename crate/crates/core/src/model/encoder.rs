//! Instance encoders: mean-of-embeddings for classification, a ±2 token
//! window for tagging, and the five preceding tokens for language modelling.
//! Each produces ReLU(W x + b) with W: hidden x input.

use super::linalg::{affine, matvec_t_acc, outer_acc, relu_backward, relu_inplace};
use super::params::{Gradients, ModelParams, LM_CONTEXT, TAG_WINDOW};
use crate::corpus::Task;
use crate::error::{Error, Result};

/// Forward state for one instance; one row per encoded position.
#[derive(Clone, Debug)]
pub struct EncoderCache {
    pub inputs: Vec<Vec<f64>>,
    pub pre: Vec<Vec<f64>>,
    pub out: Vec<Vec<f64>>,
}

/// Token id feeding each embedding slot of position `pos` (`None` = zero padding).
fn slots(task: Task, tokens: &[usize], pos: usize) -> Vec<Option<usize>> {
    match task {
        Task::Classify => unreachable!("classification pools all tokens"),
        Task::Tag => (0..=2 * TAG_WINDOW)
            .map(|k| {
                let idx = pos as isize + k as isize - TAG_WINDOW as isize;
                (idx >= 0 && (idx as usize) < tokens.len()).then(|| tokens[idx as usize])
            })
            .collect(),
        Task::Lm => (0..LM_CONTEXT)
            .map(|k| {
                // Oldest context token first; the slot just before `pos` is last.
                let idx = pos as isize - LM_CONTEXT as isize + k as isize;
                (idx >= 0).then(|| tokens[idx as usize])
            })
            .collect(),
    }
}

fn check_tokens(params: &ModelParams, tokens: &[usize]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::EmptyInstance);
    }
    let v = params.config.vocab_size;
    if let Some(&bad) = tokens.iter().find(|&&t| t >= v) {
        return Err(Error::InvalidArgument(format!(
            "token id {bad} outside vocabulary of {v}"
        )));
    }
    Ok(())
}

fn build_inputs(params: &ModelParams, tokens: &[usize]) -> Vec<Vec<f64>> {
    let cfg = &params.config;
    let e = cfg.embed_dim;
    let emb = params.t(params.layout.embedding);
    match cfg.task {
        Task::Classify => {
            let mut mean = vec![0.0; e];
            for &t in tokens {
                for (m, x) in mean.iter_mut().zip(&emb[t * e..(t + 1) * e]) {
                    *m += x;
                }
            }
            let n = tokens.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
            vec![mean]
        }
        Task::Tag | Task::Lm => (0..tokens.len())
            .map(|pos| {
                let mut x = vec![0.0; cfg.encoder_input_dim()];
                for (k, slot) in slots(cfg.task, tokens, pos).into_iter().enumerate() {
                    if let Some(t) = slot {
                        x[k * e..(k + 1) * e].copy_from_slice(&emb[t * e..(t + 1) * e]);
                    }
                }
                x
            })
            .collect(),
    }
}

pub fn encode_cached(params: &ModelParams, tokens: &[usize]) -> Result<EncoderCache> {
    check_tokens(params, tokens)?;
    let l = params.layout;
    let w = params.t(l.enc_w);
    let b = params.t(l.enc_b);
    let inputs = build_inputs(params, tokens);
    let mut pre = Vec::with_capacity(inputs.len());
    let mut out = Vec::with_capacity(inputs.len());
    for x in &inputs {
        let z = affine(w, b, x);
        let mut h = z.clone();
        relu_inplace(&mut h);
        pre.push(z);
        out.push(h);
    }
    Ok(EncoderCache { inputs, pre, out })
}

/// Encodes one instance: a single vector for classification, one vector per
/// token for tagging and language modelling.
pub fn encode(params: &ModelParams, tokens: &[usize]) -> Result<Vec<Vec<f64>>> {
    Ok(encode_cached(params, tokens)?.out)
}

/// Accumulates `scale * d(loss)/d(params)` given `d_out[pos] = d(loss)/d(m_pos)`.
pub fn encode_backward(
    params: &ModelParams,
    tokens: &[usize],
    cache: &EncoderCache,
    d_out: &[Vec<f64>],
    grads: &mut Gradients,
    scale: f64,
) {
    let cfg = &params.config;
    let l = params.layout;
    let e = cfg.embed_dim;
    let h = cfg.hidden_dim;
    let in_dim = cfg.encoder_input_dim();
    let w = params.t(l.enc_w);
    for (pos, d) in d_out.iter().enumerate() {
        let mut dz = d.clone();
        relu_backward(&cache.pre[pos], &mut dz);
        if dz.iter().all(|v| *v == 0.0) {
            continue;
        }
        outer_acc(grads.g(l.enc_w), &dz, &cache.inputs[pos], scale);
        for (gb, dzi) in grads.g(l.enc_b).iter_mut().zip(&dz) {
            *gb += scale * dzi;
        }
        let mut dx = vec![0.0; in_dim];
        matvec_t_acc(w, h, in_dim, &dz, &mut dx);
        let gemb = grads.g(l.embedding);
        match cfg.task {
            Task::Classify => {
                let share = scale / tokens.len() as f64;
                for &t in tokens {
                    for (g, x) in gemb[t * e..(t + 1) * e].iter_mut().zip(&dx) {
                        *g += share * x;
                    }
                }
            }
            Task::Tag | Task::Lm => {
                for (k, slot) in slots(cfg.task, tokens, pos).into_iter().enumerate() {
                    if let Some(t) = slot {
                        for (g, x) in gemb[t * e..(t + 1) * e].iter_mut().zip(&dx[k * e..(k + 1) * e])
                        {
                            *g += scale * x;
                        }
                    }
                }
            }
        }
    }
}
