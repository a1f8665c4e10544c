//! Batch objective (mean cross-entropy over loss units), its analytic
//! gradient, and a central finite-difference checker.

use std::collections::BTreeMap;

use rand::Rng;

use super::combiner::{combine, combine_backward, HeadOutput};
use super::digest::{digest_backward, digest_cached, sketch_dropout, Digest, DigestCache};
use super::encoder::{encode_backward, encode_cached};
use super::params::{Gradients, ModelParams};
use crate::corpus::Task;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target<'a> {
    /// One label for the whole instance.
    Class(usize),
    /// One label per token.
    Tags(&'a [usize]),
    /// Each token is predicted from its preceding context.
    NextToken,
}

#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    /// Index into [`Batch::sketches`].
    pub client: usize,
    pub tokens: &'a [usize],
    pub target: Target<'a>,
}

#[derive(Clone, Debug, Default)]
pub struct Batch<'a> {
    pub sketches: Vec<&'a [f64]>,
    pub examples: Vec<Example<'a>>,
}

impl Example<'_> {
    fn labels(&self, task: Task) -> Result<Vec<usize>> {
        match (task, self.target) {
            (Task::Classify, Target::Class(c)) => Ok(vec![c]),
            (Task::Tag, Target::Tags(t)) => {
                if t.len() != self.tokens.len() {
                    return Err(Error::DimensionMismatch {
                        what: "token tags",
                        expected: self.tokens.len(),
                        actual: t.len(),
                    });
                }
                Ok(t.to_vec())
            }
            (Task::Lm, Target::NextToken) => Ok(self.tokens.to_vec()),
            _ => Err(Error::InvalidArgument("target does not match the model task".into())),
        }
    }

    fn units(&self, task: Task) -> usize {
        match task {
            Task::Classify => 1,
            Task::Tag | Task::Lm => self.tokens.len(),
        }
    }
}

impl Batch<'_> {
    pub fn n_units(&self, task: Task) -> usize {
        self.examples.iter().map(|e| e.units(task)).sum()
    }
}

/// Digest per client referenced by the batch, in order of first use.
fn batch_digests<R: Rng>(
    params: &ModelParams,
    batch: &Batch<'_>,
    mut dropout: Option<(f64, &mut R)>,
) -> Result<BTreeMap<usize, (Digest, DigestCache)>> {
    let mut out = BTreeMap::new();
    if !params.config.combiner.uses_digest() {
        return Ok(out);
    }
    for ex in &batch.examples {
        if out.contains_key(&ex.client) {
            continue;
        }
        let sketch = batch
            .sketches
            .get(ex.client)
            .ok_or_else(|| Error::InvalidArgument(format!("no sketch for client {}", ex.client)))?;
        let input = match dropout.as_mut() {
            Some((p, rng)) => sketch_dropout(sketch, *p, *rng),
            None => sketch.to_vec(),
        };
        out.insert(ex.client, digest_cached(params, input)?);
    }
    Ok(out)
}

/// Neumaier compensated sum.
#[derive(Default)]
struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Mean loss over all loss units in the batch, eval mode. Forward code only.
pub fn batch_loss(params: &ModelParams, batch: &Batch<'_>) -> Result<f64> {
    let task = params.config.task;
    let units = batch.n_units(task);
    if units == 0 {
        return Err(Error::EmptyCorpus);
    }
    let digests = batch_digests::<rand_chacha::ChaCha8Rng>(params, batch, None)?;
    let mut total = KahanSum::default();
    for ex in &batch.examples {
        let labels = ex.labels(task)?;
        let ms = encode_cached(params, ex.tokens)?.out;
        let g = digests.get(&ex.client).map_or(&[][..], |d| d.0.as_slice());
        for (m, &y) in ms.iter().zip(&labels) {
            total.add(combine(params, m, g)?.loss(y)?);
        }
    }
    Ok(total.value() / units as f64)
}

/// Eval-mode head outputs for one instance: one per loss unit.
/// `g` is the client digest (ignored by the baseline head).
pub fn instance_outputs(params: &ModelParams, tokens: &[usize], g: &[f64]) -> Result<Vec<HeadOutput>> {
    let g = if params.config.combiner.uses_digest() { g } else { &[] };
    encode_cached(params, tokens)?
        .out
        .iter()
        .map(|m| combine(params, m, g))
        .collect()
}

/// Mean batch loss and its exact gradient. With `dropout`, one sketch
/// dropout mask is drawn per client per batch.
pub fn loss_and_grad<R: Rng>(
    params: &ModelParams,
    batch: &Batch<'_>,
    dropout: Option<(f64, &mut R)>,
) -> Result<(f64, Gradients)> {
    let task = params.config.task;
    let units = batch.n_units(task);
    if units == 0 {
        return Err(Error::EmptyCorpus);
    }
    let scale = 1.0 / units as f64;
    let digests = batch_digests(params, batch, dropout)?;
    let mut dgs: BTreeMap<usize, Vec<f64>> = digests
        .keys()
        .map(|&c| (c, vec![0.0; params.config.digest_dim()]))
        .collect();
    let mut grads = params.zeros_like();
    let mut total = KahanSum::default();
    for ex in &batch.examples {
        let labels = ex.labels(task)?;
        let cache = encode_cached(params, ex.tokens)?;
        let g = digests.get(&ex.client).map_or(&[][..], |d| d.0.as_slice());
        let mut d_out = Vec::with_capacity(labels.len());
        for (m, &y) in cache.out.iter().zip(&labels) {
            let hg = combine_backward(params, m, g, y, &mut grads, scale)?;
            total.add(hg.loss);
            if let Some(acc) = dgs.get_mut(&ex.client) {
                for (a, d) in acc.iter_mut().zip(&hg.dg) {
                    *a += d;
                }
            }
            d_out.push(hg.dm);
        }
        encode_backward(params, ex.tokens, &cache, &d_out, &mut grads, scale);
    }
    for (client, dg) in &dgs {
        let (_, cache) = &digests[client];
        digest_backward(params, cache, dg, &mut grads, scale);
    }
    Ok((total.value() * scale, grads))
}

/// Maximum number of scalars checked per tensor.
pub const GRAD_CHECK_SLICE: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub n_checked: usize,
}

/// Central differences on up to 50 evenly strided scalars of every tensor;
/// returns the max of `|a - n| / max(1e-8, |a| + |n|)`.
pub fn grad_check(params: &ModelParams, batch: &Batch<'_>, eps: f64) -> Result<GradCheckReport> {
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::InvalidEpsilon(eps));
    }
    let (_, analytic) = loss_and_grad::<rand_chacha::ChaCha8Rng>(params, batch, None)?;
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        n_checked: 0,
    };
    for ti in 0..params.tensors.len() {
        let len = params.tensors[ti].len();
        let stride = len.div_ceil(GRAD_CHECK_SLICE).max(1);
        for idx in (0..len).step_by(stride) {
            let orig = params.tensors[ti].data[idx];
            probe.tensors[ti].data[idx] = orig + eps;
            let up = batch_loss(&probe, batch)?;
            probe.tensors[ti].data[idx] = orig - eps;
            let down = batch_loss(&probe, batch)?;
            probe.tensors[ti].data[idx] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.tensors[ti][idx];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.n_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_tensor = format!("{}[{idx}]", params.tensors[ti].name);
            }
        }
    }
    Ok(report)
}
