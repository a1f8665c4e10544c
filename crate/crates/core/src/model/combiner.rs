//! Output heads that join the instance encoding `m` with the client digest `g`.
//!
//! * Baseline: `W m + b`, digest ignored.
//! * Concat: `W m + W_g g + b`, a per-client additive bias on every label.
//!   With the language-model task this is the vocabulary-sized bias head.
//! * Deep: `W_o ReLU(W_h [m; g] + b_h) + b_o`.
//! * Decompose: `(a SM1 + (1 - a) SM2) m + b` with `a = sigmoid(u.g + c)`.
//! * MoE / MoE-g: `sum_i softmax(A x)_i softmax(E_i m + e_i)`, gated on
//!   `x = m` or `x = g`. Returns probabilities rather than logits.

use super::linalg::{
    affine, dot, log_softmax, log_sum_exp, matvec_t_acc, outer_acc, relu_backward,
    relu_inplace, sigmoid, softmax,
};
use super::params::{CombinerKind, Gradients, ModelParams};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum HeadOutput {
    Logits(Vec<f64>),
    Probs(Vec<f64>),
}

impl HeadOutput {
    pub fn probabilities(&self) -> Vec<f64> {
        match self {
            HeadOutput::Logits(z) => softmax(z),
            HeadOutput::Probs(p) => p.clone(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            HeadOutput::Logits(v) | HeadOutput::Probs(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Negative log-likelihood of `label`.
    pub fn loss(&self, label: usize) -> Result<f64> {
        match self {
            HeadOutput::Logits(z) => xent_logits(z, label),
            HeadOutput::Probs(p) => xent_probs(p, label),
        }
    }
}

fn check_label(label: usize, n: usize) -> Result<()> {
    if label >= n {
        return Err(Error::LabelOutOfRange { label, n_labels: n });
    }
    Ok(())
}

/// `-log softmax(z)[label]`, stabilized by max subtraction.
pub fn xent_logits(logits: &[f64], label: usize) -> Result<f64> {
    check_label(label, logits.len())?;
    Ok(log_sum_exp(logits) - logits[label])
}

/// `-log p[label]` for a probability vector.
pub fn xent_probs(probs: &[f64], label: usize) -> Result<f64> {
    check_label(label, probs.len())?;
    Ok(-probs[label].ln())
}

fn check(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            actual,
        });
    }
    Ok(())
}

fn check_inputs(params: &ModelParams, m: &[f64], g: &[f64]) -> Result<()> {
    check("instance encoding", params.config.hidden_dim, m.len())?;
    if params.config.combiner.uses_digest() {
        check("digest", params.config.digest_dim(), g.len())?;
    }
    Ok(())
}

pub fn baseline_head(params: &ModelParams, m: &[f64]) -> Result<Vec<f64>> {
    check("instance encoding", params.config.hidden_dim, m.len())?;
    let l = params.layout;
    let (Some(w), Some(b)) = (l.head_w, l.head_b) else {
        return Err(Error::InvalidArgument("model has no linear head".into()));
    };
    Ok(affine(params.t(w), params.t(b), m))
}

pub fn combine_concat(params: &ModelParams, m: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    check_inputs(params, m, g)?;
    let wg = params
        .layout
        .head_wg
        .ok_or_else(|| Error::InvalidArgument("model has no digest bias weights".into()))?;
    let mut z = baseline_head(params, m)?;
    let bias = affine(params.t(wg), &vec![0.0; z.len()], g);
    for (zi, bi) in z.iter_mut().zip(&bias) {
        *zi += bi;
    }
    Ok(z)
}

/// Sketch-biased language-model head: logits over the vocabulary plus `F g`.
pub fn lm_bias_head(params: &ModelParams, m: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    combine_concat(params, m, g)
}

struct DeepState {
    input: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

fn deep_forward(params: &ModelParams, m: &[f64], g: &[f64]) -> Result<DeepState> {
    check_inputs(params, m, g)?;
    let l = params.layout;
    let mut input = m.to_vec();
    input.extend_from_slice(g);
    let pre = affine(params.opt(l.deep_w), params.opt(l.deep_b), &input);
    let mut hidden = pre.clone();
    relu_inplace(&mut hidden);
    let logits = affine(params.opt(l.head_w), params.opt(l.head_b), &hidden);
    Ok(DeepState {
        input,
        pre,
        hidden,
        logits,
    })
}

pub fn combine_deep(params: &ModelParams, m: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    Ok(deep_forward(params, m, g)?.logits)
}

/// Returns the logits and the gate value `a`.
pub fn combine_decompose(params: &ModelParams, m: &[f64], g: &[f64]) -> Result<(Vec<f64>, f64)> {
    check_inputs(params, m, g)?;
    let l = params.layout;
    // Kept strictly inside (0, 1) even where the sigmoid rounds to an endpoint.
    let alpha = sigmoid(dot(params.opt(l.gate_u), g) + params.opt(l.gate_b)[0])
        .clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
    let n = params.config.n_outputs;
    let zeros = vec![0.0; n];
    let z1 = affine(params.opt(l.head_w), &zeros, m);
    let z2 = affine(params.opt(l.head_w_alt), &zeros, m);
    let b = params.opt(l.head_b);
    let z = (0..n)
        .map(|i| alpha * z1[i] + (1.0 - alpha) * z2[i] + b[i])
        .collect();
    Ok((z, alpha))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureOutput {
    pub probs: Vec<f64>,
    pub weights: Vec<f64>,
}

struct MixtureState {
    log_weights: Vec<f64>,
    /// Per-expert log-softmax over outputs.
    log_expert: Vec<Vec<f64>>,
}

fn mixture_forward(params: &ModelParams, m: &[f64], gate_input: &[f64]) -> Result<MixtureState> {
    let cfg = &params.config;
    let k = cfg.n_experts;
    if k == 0 {
        return Err(Error::InvalidArgument("n_experts must be >= 1".into()));
    }
    check("instance encoding", cfg.hidden_dim, m.len())?;
    let gate_dim = match cfg.combiner {
        CombinerKind::MoEg => cfg.digest_dim(),
        _ => cfg.hidden_dim,
    };
    check("gate input", gate_dim, gate_input.len())?;
    let l = params.layout;
    let (Some(ew), Some(eb), Some(aw)) = (l.experts_w, l.experts_b, l.gate_w) else {
        return Err(Error::InvalidArgument("model has no mixture head".into()));
    };
    let n = cfg.n_outputs;
    let logits = affine(params.t(ew), params.t(eb), m);
    let log_expert = logits.chunks(n).map(log_softmax).collect();
    let gate_logits = affine(params.t(aw), &vec![0.0; k], gate_input);
    Ok(MixtureState {
        log_weights: log_softmax(&gate_logits),
        log_expert,
    })
}

/// Mixture of expert softmax heads. `gate_input` is `g` for MoE-g and `m` for MoE.
pub fn combine_moe(params: &ModelParams, m: &[f64], gate_input: &[f64]) -> Result<MixtureOutput> {
    let st = mixture_forward(params, m, gate_input)?;
    let n = params.config.n_outputs;
    let probs = (0..n)
        .map(|y| {
            let terms: Vec<f64> = st
                .log_weights
                .iter()
                .zip(&st.log_expert)
                .map(|(la, ls)| la + ls[y])
                .collect();
            log_sum_exp(&terms).exp()
        })
        .collect();
    Ok(MixtureOutput {
        probs,
        weights: st.log_weights.iter().map(|v| v.exp()).collect(),
    })
}

/// Dispatches on the model's combiner. `g` is ignored by Baseline and MoE.
pub fn combine(params: &ModelParams, m: &[f64], g: &[f64]) -> Result<HeadOutput> {
    Ok(match params.config.combiner {
        CombinerKind::Baseline => HeadOutput::Logits(baseline_head(params, m)?),
        CombinerKind::Concat => HeadOutput::Logits(combine_concat(params, m, g)?),
        CombinerKind::Deep => HeadOutput::Logits(combine_deep(params, m, g)?),
        CombinerKind::Decompose => HeadOutput::Logits(combine_decompose(params, m, g)?.0),
        CombinerKind::MoEg => HeadOutput::Probs(combine_moe(params, m, g)?.probs),
        CombinerKind::MoE => HeadOutput::Probs(combine_moe(params, m, m)?.probs),
    })
}

/// Gradients of one head evaluation.
pub struct HeadGrad {
    pub loss: f64,
    pub dm: Vec<f64>,
    pub dg: Vec<f64>,
}

fn add_scaled(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

/// `dz` for cross-entropy on logits: `softmax(z) - onehot(label)`.
fn logits_grad(z: &[f64], label: usize) -> Vec<f64> {
    let mut dz = softmax(z);
    dz[label] -= 1.0;
    dz
}

/// Forward + backward for one head evaluation. Parameter gradients are
/// accumulated into `grads` scaled by `scale`; `dm`/`dg` are unscaled.
pub fn combine_backward(
    params: &ModelParams,
    m: &[f64],
    g: &[f64],
    label: usize,
    grads: &mut Gradients,
    scale: f64,
) -> Result<HeadGrad> {
    check_inputs(params, m, g)?;
    let cfg = &params.config;
    let l = params.layout;
    let n = cfg.n_outputs;
    let h = cfg.hidden_dim;
    check_label(label, n)?;
    let mut dm = vec![0.0; h];
    let mut dg = vec![0.0; if cfg.combiner.uses_digest() { cfg.digest_dim() } else { 0 }];
    let loss;
    match cfg.combiner {
        CombinerKind::Baseline | CombinerKind::Concat => {
            let z = if cfg.combiner == CombinerKind::Baseline {
                baseline_head(params, m)?
            } else {
                combine_concat(params, m, g)?
            };
            loss = xent_logits(&z, label)?;
            let dz = logits_grad(&z, label);
            let (w, b) = (l.head_w.unwrap(), l.head_b.unwrap());
            outer_acc(grads.g(w), &dz, m, scale);
            add_scaled(grads.g(b), &dz, scale);
            matvec_t_acc(params.t(w), n, h, &dz, &mut dm);
            if let Some(wg) = l.head_wg {
                outer_acc(grads.g(wg), &dz, g, scale);
                matvec_t_acc(params.t(wg), n, g.len(), &dz, &mut dg);
            }
        }
        CombinerKind::Deep => {
            let st = deep_forward(params, m, g)?;
            loss = xent_logits(&st.logits, label)?;
            let dz = logits_grad(&st.logits, label);
            let d = cfg.deep_hidden;
            let (wo, bo) = (l.head_w.unwrap(), l.head_b.unwrap());
            outer_acc(grads.g(wo), &dz, &st.hidden, scale);
            add_scaled(grads.g(bo), &dz, scale);
            let mut dh = vec![0.0; d];
            matvec_t_acc(params.t(wo), n, d, &dz, &mut dh);
            relu_backward(&st.pre, &mut dh);
            let (wh, bh) = (l.deep_w.unwrap(), l.deep_b.unwrap());
            outer_acc(grads.g(wh), &dh, &st.input, scale);
            add_scaled(grads.g(bh), &dh, scale);
            let mut dinput = vec![0.0; st.input.len()];
            matvec_t_acc(params.t(wh), d, st.input.len(), &dh, &mut dinput);
            dm.copy_from_slice(&dinput[..h]);
            dg.copy_from_slice(&dinput[h..]);
        }
        CombinerKind::Decompose => {
            let (z, alpha) = combine_decompose(params, m, g)?;
            loss = xent_logits(&z, label)?;
            let dz = logits_grad(&z, label);
            let zeros = vec![0.0; n];
            let (w1, w2, b) = (
                l.head_w.unwrap(),
                l.head_w_alt.unwrap(),
                l.head_b.unwrap(),
            );
            let z1 = affine(params.t(w1), &zeros, m);
            let z2 = affine(params.t(w2), &zeros, m);
            outer_acc(grads.g(w1), &dz, m, scale * alpha);
            outer_acc(grads.g(w2), &dz, m, scale * (1.0 - alpha));
            add_scaled(grads.g(b), &dz, scale);
            let mut dm1 = vec![0.0; h];
            let mut dm2 = vec![0.0; h];
            matvec_t_acc(params.t(w1), n, h, &dz, &mut dm1);
            matvec_t_acc(params.t(w2), n, h, &dz, &mut dm2);
            for i in 0..h {
                dm[i] = alpha * dm1[i] + (1.0 - alpha) * dm2[i];
            }
            let dalpha: f64 = (0..n).map(|i| dz[i] * (z1[i] - z2[i])).sum();
            let dgate = dalpha * alpha * (1.0 - alpha);
            let (u, c) = (l.gate_u.unwrap(), l.gate_b.unwrap());
            add_scaled(grads.g(u), g, scale * dgate);
            grads.g(c)[0] += scale * dgate;
            add_scaled(&mut dg, params.t(u), dgate);
        }
        CombinerKind::MoEg | CombinerKind::MoE => {
            let gate_input = if cfg.combiner == CombinerKind::MoEg { g } else { m };
            let st = mixture_forward(params, m, gate_input)?;
            let terms: Vec<f64> = st
                .log_weights
                .iter()
                .zip(&st.log_expert)
                .map(|(la, ls)| la + ls[label])
                .collect();
            let log_p = log_sum_exp(&terms);
            loss = -log_p;
            let k = cfg.n_experts;
            let (ew, eb, aw) = (
                l.experts_w.unwrap(),
                l.experts_b.unwrap(),
                l.gate_w.unwrap(),
            );
            let mut dz_all = vec![0.0; k * n];
            let mut da = vec![0.0; k];
            for i in 0..k {
                let resp = (terms[i] - log_p).exp();
                let dz = &mut dz_all[i * n..(i + 1) * n];
                for (j, v) in dz.iter_mut().enumerate() {
                    *v = resp * st.log_expert[i][j].exp();
                }
                dz[label] -= resp;
                da[i] = st.log_weights[i].exp() - resp;
            }
            outer_acc(grads.g(ew), &dz_all, m, scale);
            add_scaled(grads.g(eb), &dz_all, scale);
            matvec_t_acc(params.t(ew), k * n, h, &dz_all, &mut dm);
            outer_acc(grads.g(aw), &da, gate_input, scale);
            if cfg.combiner == CombinerKind::MoEg {
                matvec_t_acc(params.t(aw), k, dg.len(), &da, &mut dg);
            } else {
                matvec_t_acc(params.t(aw), k, h, &da, &mut dm);
            }
        }
    }
    Ok(HeadGrad { loss, dm, dg })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Task;
    use crate::model::params::ModelConfig;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(kind: CombinerKind, seed: u64) -> ModelParams {
        let mut cfg = ModelConfig::new(Task::Classify, 20, 3, 20, kind);
        cfg.n_experts = 4;
        ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn xent_reference_values() {
        assert_abs_diff_eq!(xent_logits(&[0.3; 4], 2).unwrap(), 4f64.ln(), epsilon = 1e-12);
        let big = xent_logits(&[1000.0, 0.0], 0).unwrap();
        assert!(big.is_finite() && big < 1e-12);
        // softmax([0.2, -0.1])[1] = 1 / (1 + e^0.3)
        let hand = (1.0 + 0.3f64.exp()).ln();
        assert_abs_diff_eq!(hand, 0.854355, epsilon = 1e-6);
        assert_abs_diff_eq!(xent_logits(&[0.2, -0.1], 1).unwrap(), hand, epsilon = 1e-12);
        assert!(matches!(
            xent_logits(&[0.0, 0.0], 2),
            Err(Error::LabelOutOfRange { .. })
        ));
        assert_abs_diff_eq!(xent_probs(&[0.25, 0.75], 1).unwrap(), -(0.75f64).ln());
    }

    #[test]
    fn concat_zero_digest_is_baseline() {
        let p = params(CombinerKind::Concat, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = rand_vec(&mut rng, 64);
        assert_eq!(
            combine_concat(&p, &m, &[0.0; 128]).unwrap(),
            baseline_head(&p, &m).unwrap()
        );
    }

    #[test]
    fn concat_adds_label_bias() {
        let mut p = params(CombinerKind::Concat, 1);
        p.tensor_mut("head.weight").unwrap().data.fill(0.0);
        let b = p.tensor_mut("head.bias").unwrap();
        b.data = vec![1.0, 1.0, 1.0];
        let wg = p.tensor_mut("head.digest_weight").unwrap();
        wg.data.fill(0.0);
        wg.data[0] = 0.3;
        wg.data[128] = -0.3;
        let mut g = vec![0.0; 128];
        g[0] = 1.0;
        let z = combine_concat(&p, &[0.5; 64], &g).unwrap();
        assert_abs_diff_eq!(z[0], 1.3, epsilon = 1e-15);
        assert_abs_diff_eq!(z[1], 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(z[2], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn deep_matches_straight_line_oracle() {
        let p = params(CombinerKind::Deep, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = rand_vec(&mut rng, 64);
        let g = rand_vec(&mut rng, 128);
        let wh = &p.tensor("deep.weight").unwrap().data;
        let bh = &p.tensor("deep.bias").unwrap().data;
        let wo = &p.tensor("head.weight").unwrap().data;
        let bo = &p.tensor("head.bias").unwrap().data;
        let x: Vec<f64> = m.iter().chain(&g).copied().collect();
        let mut hidden = [0.0f64; 128];
        for r in 0..128 {
            let mut acc = bh[r];
            for c in 0..192 {
                acc += wh[r * 192 + c] * x[c];
            }
            hidden[r] = if acc > 0.0 { acc } else { 0.0 };
        }
        let z = combine_deep(&p, &m, &g).unwrap();
        for r in 0..3 {
            let mut acc = bo[r];
            for c in 0..128 {
                acc += wo[r * 128 + c] * hidden[c];
            }
            assert_abs_diff_eq!(z[r], acc, epsilon = 1e-9);
        }
        assert_eq!(z, combine_deep(&p, &m, &g).unwrap());
    }

    #[test]
    fn deep_without_digest_columns_ignores_g() {
        let mut p = params(CombinerKind::Deep, 3);
        p.zero_digest_pathway();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = rand_vec(&mut rng, 64);
        let a = combine_deep(&p, &m, &rand_vec(&mut rng, 128)).unwrap();
        let b = combine_deep(&p, &m, &[0.0; 128]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn decompose_gate_cases() {
        let mut p = params(CombinerKind::Decompose, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = rand_vec(&mut rng, 64);
        let g = rand_vec(&mut rng, 128);
        // u = 0, c = 0: a = 1/2, the mean-matrix head.
        p.tensor_mut("gate.u").unwrap().data.fill(0.0);
        p.tensor_mut("gate.b").unwrap().data[0] = 0.0;
        let (z, a) = combine_decompose(&p, &m, &g).unwrap();
        assert_eq!(a, 0.5);
        let w1 = p.tensor("head.weight").unwrap().data.clone();
        let w2 = p.tensor("head.weight_alt").unwrap().data.clone();
        let mean: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| 0.5 * (a + b)).collect();
        let expect = affine(&mean, &p.tensor("head.bias").unwrap().data, &m);
        for (x, y) in z.iter().zip(&expect) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        // Saturated gate: logits approach SM1 m + b.
        p.tensor_mut("gate.b").unwrap().data[0] = 40.0;
        let (z, a) = combine_decompose(&p, &m, &g).unwrap();
        assert!(a < 1.0 && a > 1.0 - 1e-15);
        let sm1 = affine(&w1, &p.tensor("head.bias").unwrap().data, &m);
        for (x, y) in z.iter().zip(&sm1) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        // Identical experts: a has no effect.
        p.tensor_mut("head.weight_alt").unwrap().data = w1.clone();
        let (z1, _) = combine_decompose(&p, &m, &g).unwrap();
        p.tensor_mut("gate.b").unwrap().data[0] = -3.0;
        let (z2, _) = combine_decompose(&p, &m, &g).unwrap();
        for (x, y) in z1.iter().zip(&z2) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_expert_matches_baseline_probabilities() {
        let mut cfg = ModelConfig::new(Task::Classify, 20, 3, 20, CombinerKind::MoE);
        cfg.n_experts = 1;
        let p = ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let m = rand_vec(&mut ChaCha8Rng::seed_from_u64(9), 64);
        let out = combine_moe(&p, &m, &m).unwrap();
        let z = affine(
            &p.tensor("experts.weight").unwrap().data,
            &p.tensor("experts.bias").unwrap().data,
            &m,
        );
        for (a, b) in out.probs.iter().zip(softmax(&z)) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        assert_eq!(out.weights, vec![1.0]);
    }

    #[test]
    fn identical_experts_ignore_gate() {
        let mut p = params(CombinerKind::MoEg, 10);
        let ew = p.tensor("experts.weight").unwrap().data.clone();
        let first: Vec<f64> = ew[..3 * 64].to_vec();
        let tiled: Vec<f64> = (0..4).flat_map(|_| first.iter().copied()).collect();
        p.tensor_mut("experts.weight").unwrap().data = tiled;
        p.tensor_mut("experts.bias").unwrap().data.fill(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for v in &mut p.tensor_mut("gate.weight").unwrap().data {
            *v = rng.random_range(-1.0..1.0);
        }
        let m = rand_vec(&mut rng, 64);
        let a = combine_moe(&p, &m, &rand_vec(&mut rng, 128)).unwrap();
        let b = combine_moe(&p, &m, &rand_vec(&mut rng, 128)).unwrap();
        for (x, y) in a.probs.iter().zip(&b.probs) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        assert_ne!(a.weights, b.weights);
    }

    #[test]
    fn mixture_outputs_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for kind in [CombinerKind::MoE, CombinerKind::MoEg] {
            let mut p = params(kind, 13);
            for v in &mut p.tensor_mut("gate.weight").unwrap().data {
                *v = rng.random_range(-2.0..2.0);
            }
            let m = rand_vec(&mut rng, 64);
            let g = if kind == CombinerKind::MoEg { rand_vec(&mut rng, 128) } else { m.clone() };
            let out = combine_moe(&p, &m, &g).unwrap();
            assert_abs_diff_eq!(out.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(out.probs.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn shape_errors() {
        let p = params(CombinerKind::Concat, 1);
        assert!(combine(&p, &[0.0; 3], &[0.0; 128]).is_err());
        assert!(combine(&p, &[0.0; 64], &[0.0; 3]).is_err());
        let mut grads = p.zeros_like();
        assert!(combine_backward(&p, &[0.0; 64], &[0.0; 128], 7, &mut grads, 1.0).is_err());
    }
}
