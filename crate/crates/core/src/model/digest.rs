use rand::Rng;
use serde::{Deserialize, Serialize};

use super::linalg::{affine, matvec_t_acc, outer_acc, relu_backward, relu_inplace};
use super::params::{DigestArch, Gradients, ModelParams};
use crate::error::{Error, Result};

/// Output of the digest network for one client sketch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Digest(pub Vec<f64>);

impl Digest {
    pub fn zeros(dim: usize) -> Digest {
        Digest(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug)]
pub struct DigestCache {
    /// Sketch after dropout.
    pub input: Vec<f64>,
    /// First-layer pre-activation (MLP only).
    pub pre: Vec<f64>,
}

/// Inverted dropout: each entry zeroed with probability `p`, survivors scaled by `1/(1-p)`.
pub fn sketch_dropout<R: Rng>(sketch: &[f64], p: f64, rng: &mut R) -> Vec<f64> {
    if p <= 0.0 {
        return sketch.to_vec();
    }
    if p >= 1.0 {
        return vec![0.0; sketch.len()];
    }
    let keep = 1.0 / (1.0 - p);
    sketch
        .iter()
        .map(|&s| if rng.random::<f64>() < p { 0.0 } else { s * keep })
        .collect()
}

pub fn digest_cached(params: &ModelParams, input: Vec<f64>) -> Result<(Digest, DigestCache)> {
    let cfg = &params.config;
    if !cfg.combiner.uses_digest() {
        return Err(Error::InvalidArgument(format!(
            "combiner {} has no digest network",
            cfg.combiner.as_str()
        )));
    }
    if input.len() != cfg.sketch_dim {
        return Err(Error::DimensionMismatch {
            what: "sketch",
            expected: cfg.sketch_dim,
            actual: input.len(),
        });
    }
    let l = params.layout;
    let w1 = params.opt(l.dig_w1);
    let b1 = params.opt(l.dig_b1);
    let z1 = affine(w1, b1, &input);
    match cfg.digest {
        DigestArch::Linear { .. } => Ok((
            Digest(z1),
            DigestCache {
                input,
                pre: Vec::new(),
            },
        )),
        DigestArch::Mlp { .. } => {
            let mut h = z1.clone();
            relu_inplace(&mut h);
            let g = affine(params.opt(l.dig_w2), params.opt(l.dig_b2), &h);
            Ok((Digest(g), DigestCache { input, pre: z1 }))
        }
    }
}

/// Eval-mode digest: no dropout, no randomness.
pub fn digest(params: &ModelParams, sketch: &[f64]) -> Result<Digest> {
    digest_cached(params, sketch.to_vec()).map(|(g, _)| g)
}

/// Train-mode digest with sketch dropout.
pub fn digest_train<R: Rng>(
    params: &ModelParams,
    sketch: &[f64],
    dropout_p: f64,
    rng: &mut R,
) -> Result<(Digest, DigestCache)> {
    digest_cached(params, sketch_dropout(sketch, dropout_p, rng))
}

/// Accumulates `scale * d(loss)/d(phi)` given `dg = d(loss)/d(g)`.
pub fn digest_backward(
    params: &ModelParams,
    cache: &DigestCache,
    dg: &[f64],
    grads: &mut Gradients,
    scale: f64,
) {
    let l = params.layout;
    let (Some(w1), Some(b1)) = (l.dig_w1, l.dig_b1) else {
        return;
    };
    let d1 = match params.config.digest {
        DigestArch::Linear { .. } => dg.to_vec(),
        DigestArch::Mlp { hidden, out } => {
            let (w2, b2) = (l.dig_w2.unwrap(), l.dig_b2.unwrap());
            let mut h = cache.pre.clone();
            relu_inplace(&mut h);
            outer_acc(grads.g(w2), dg, &h, scale);
            for (g, d) in grads.g(b2).iter_mut().zip(dg) {
                *g += scale * d;
            }
            let mut dh = vec![0.0; hidden];
            matvec_t_acc(params.t(w2), out, hidden, dg, &mut dh);
            relu_backward(&cache.pre, &mut dh);
            dh
        }
    };
    outer_acc(grads.g(w1), &d1, &cache.input, scale);
    for (g, d) in grads.g(b1).iter_mut().zip(&d1) {
        *g += scale * d;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Task;
    use crate::model::params::{CombinerKind, ModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(task: Task) -> ModelParams {
        let cfg = ModelConfig::new(task, 20, 3, 20, CombinerKind::Concat);
        ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
    }

    #[test]
    fn zero_sketch_gives_bias_path() {
        let p = params(Task::Classify);
        let g = digest(&p, &[0.0; 20]).unwrap();
        let mut h = p.tensor("digest.b1").unwrap().data.clone();
        relu_inplace(&mut h);
        let expect = affine(
            &p.tensor("digest.w2").unwrap().data,
            &p.tensor("digest.b2").unwrap().data,
            &h,
        );
        assert_eq!(g.0, expect);
        assert_eq!(g.0.len(), 128);
    }

    #[test]
    fn dropout_extremes() {
        let p = params(Task::Classify);
        let s: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (train, _) = digest_train(&p, &s, 0.0, &mut rng).unwrap();
        assert_eq!(train, digest(&p, &s).unwrap());
        let (dropped, cache) = digest_train(&p, &s, 1.0, &mut rng).unwrap();
        assert!(cache.input.iter().all(|v| *v == 0.0));
        assert_eq!(dropped, digest(&p, &[0.0; 20]).unwrap());
    }

    #[test]
    fn inverted_dropout_preserves_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = vec![1.0; 20_000];
        let d = sketch_dropout(&s, 0.2, &mut rng);
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
        assert!(d.iter().all(|v| *v == 0.0 || (*v - 1.25).abs() < 1e-12));
    }

    #[test]
    fn linear_variant_for_language_model() {
        let p = params(Task::Lm);
        let g = digest(&p, &[0.5; 20]).unwrap();
        assert_eq!(g.0.len(), 32);
        assert!(p.tensor("digest.w2").is_none());
        // Linear map: digest(2s) - digest(0) = 2 (digest(s) - digest(0)).
        let g0 = digest(&p, &[0.0; 20]).unwrap();
        let g2 = digest(&p, &[1.0; 20]).unwrap();
        for i in 0..32 {
            assert!(((g2.0[i] - g0.0[i]) - 2.0 * (g.0[i] - g0.0[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let p = params(Task::Classify);
        assert!(matches!(
            digest(&p, &[0.0; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
        let cfg = ModelConfig::new(Task::Classify, 20, 3, 20, CombinerKind::Baseline);
        let base = ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(digest(&base, &[0.0; 20]).is_err());
    }
}
