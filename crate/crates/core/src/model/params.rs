use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Task;
use crate::error::{Error, Result};

/// Half-width of the tagging encoder's context window.
pub const TAG_WINDOW: usize = 2;
/// Number of preceding tokens seen by the language-model encoder.
pub const LM_CONTEXT: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinerKind {
    Baseline,
    Concat,
    Deep,
    Decompose,
    #[serde(rename = "moe_g")]
    MoEg,
    #[serde(rename = "moe")]
    MoE,
}

impl CombinerKind {
    pub const ALL: [CombinerKind; 6] = [
        CombinerKind::Baseline,
        CombinerKind::Concat,
        CombinerKind::Deep,
        CombinerKind::Decompose,
        CombinerKind::MoEg,
        CombinerKind::MoE,
    ];

    /// Whether the combiner consumes the client digest.
    pub fn uses_digest(self) -> bool {
        matches!(
            self,
            CombinerKind::Concat | CombinerKind::Deep | CombinerKind::Decompose | CombinerKind::MoEg
        )
    }

    pub fn is_mixture(self) -> bool {
        matches!(self, CombinerKind::MoEg | CombinerKind::MoE)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CombinerKind::Baseline => "baseline",
            CombinerKind::Concat => "concat",
            CombinerKind::Deep => "deep",
            CombinerKind::Decompose => "decompose",
            CombinerKind::MoEg => "moe_g",
            CombinerKind::MoE => "moe",
        }
    }

    /// Short tag used in metric reports.
    pub fn model_tag(self) -> &'static str {
        match self {
            CombinerKind::Baseline => "Base",
            CombinerKind::Concat => "KYC",
            CombinerKind::Deep => "Deep",
            CombinerKind::Decompose => "Decompose",
            CombinerKind::MoEg => "MoE-g",
            CombinerKind::MoE => "MoE",
        }
    }
}

impl std::str::FromStr for CombinerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" | "base" => Ok(CombinerKind::Baseline),
            "concat" | "kyc" => Ok(CombinerKind::Concat),
            "deep" => Ok(CombinerKind::Deep),
            "decompose" => Ok(CombinerKind::Decompose),
            "moe_g" | "moe-g" | "moeg" => Ok(CombinerKind::MoEg),
            "moe" => Ok(CombinerKind::MoE),
            other => Err(Error::InvalidArgument(format!("unknown combiner {other}"))),
        }
    }
}

/// Shape of the digest network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DigestArch {
    /// Two linear layers with a ReLU between them.
    Mlp { hidden: usize, out: usize },
    /// One linear map, no nonlinearity (used by the language-model head).
    Linear { out: usize },
}

impl DigestArch {
    pub fn out_dim(self) -> usize {
        match self {
            DigestArch::Mlp { out, .. } | DigestArch::Linear { out } => out,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub task: Task,
    pub vocab_size: usize,
    /// Label count, or the vocabulary size for language modelling.
    pub n_outputs: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub sketch_dim: usize,
    pub digest: DigestArch,
    pub combiner: CombinerKind,
    pub n_experts: usize,
    pub deep_hidden: usize,
}

impl ModelConfig {
    pub fn new(
        task: Task,
        vocab_size: usize,
        n_labels: usize,
        sketch_dim: usize,
        combiner: CombinerKind,
    ) -> ModelConfig {
        let n_outputs = if task == Task::Lm { vocab_size } else { n_labels };
        let digest = match task {
            Task::Lm => DigestArch::Linear { out: 32 },
            _ => DigestArch::Mlp {
                hidden: 256,
                out: 128,
            },
        };
        ModelConfig {
            task,
            vocab_size,
            n_outputs,
            embed_dim: 32,
            hidden_dim: 64,
            sketch_dim,
            digest,
            combiner,
            n_experts: 1,
            deep_hidden: 128,
        }
    }

    pub fn encoder_input_dim(&self) -> usize {
        match self.task {
            Task::Classify => self.embed_dim,
            Task::Tag => (2 * TAG_WINDOW + 1) * self.embed_dim,
            Task::Lm => LM_CONTEXT * self.embed_dim,
        }
    }

    pub fn digest_dim(&self) -> usize {
        self.digest.out_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("n_outputs", self.n_outputs),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("sketch_dim", self.sketch_dim),
            ("digest dim", self.digest_dim()),
            ("deep_hidden", self.deep_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.combiner.is_mixture() && self.n_experts == 0 {
            return Err(Error::InvalidArgument("n_experts must be >= 1".into()));
        }
        if let DigestArch::Mlp { hidden: 0, .. } = self.digest {
            return Err(Error::InvalidArgument("digest hidden must be positive".into()));
        }
        Ok(())
    }

    /// Ordered tensor inventory: name, shape, init fan-in (0 = zero init).
    fn tensor_specs(&self) -> Vec<(&'static str, Vec<usize>, usize)> {
        let v = self.vocab_size;
        let e = self.embed_dim;
        let h = self.hidden_dim;
        let l = self.n_outputs;
        let s = self.sketch_dim;
        let g = self.digest_dim();
        let k = self.n_experts;
        let enc_in = self.encoder_input_dim();
        let mut specs = vec![
            ("embedding", vec![v, e], e),
            ("encoder.weight", vec![h, enc_in], enc_in),
            ("encoder.bias", vec![h], enc_in),
        ];
        if self.combiner.uses_digest() {
            match self.digest {
                DigestArch::Mlp { hidden, out } => {
                    specs.push(("digest.w1", vec![hidden, s], s));
                    specs.push(("digest.b1", vec![hidden], s));
                    specs.push(("digest.w2", vec![out, hidden], hidden));
                    specs.push(("digest.b2", vec![out], hidden));
                }
                DigestArch::Linear { out } => {
                    specs.push(("digest.w1", vec![out, s], s));
                    specs.push(("digest.b1", vec![out], s));
                }
            }
        }
        match self.combiner {
            CombinerKind::Baseline => {
                specs.push(("head.weight", vec![l, h], h));
                specs.push(("head.bias", vec![l], h));
            }
            CombinerKind::Concat => {
                specs.push(("head.weight", vec![l, h], h + g));
                specs.push(("head.digest_weight", vec![l, g], h + g));
                specs.push(("head.bias", vec![l], h + g));
            }
            CombinerKind::Deep => {
                let d = self.deep_hidden;
                specs.push(("deep.weight", vec![d, h + g], h + g));
                specs.push(("deep.bias", vec![d], h + g));
                specs.push(("head.weight", vec![l, d], d));
                specs.push(("head.bias", vec![l], d));
            }
            CombinerKind::Decompose => {
                specs.push(("head.weight", vec![l, h], h));
                specs.push(("head.weight_alt", vec![l, h], h));
                specs.push(("head.bias", vec![l], h));
                specs.push(("gate.u", vec![g], g));
                specs.push(("gate.b", vec![1], g));
            }
            CombinerKind::MoEg | CombinerKind::MoE => {
                let gate_in = if self.combiner == CombinerKind::MoEg { g } else { h };
                specs.push(("experts.weight", vec![k * l, h], h));
                specs.push(("experts.bias", vec![k * l], h));
                // Zero gate: uniform mixture at initialization.
                specs.push(("gate.weight", vec![k, gate_in], 0));
            }
        }
        specs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }
}

/// Indices of the named tensors inside [`ModelParams::tensors`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Layout {
    pub embedding: usize,
    pub enc_w: usize,
    pub enc_b: usize,
    pub dig_w1: Option<usize>,
    pub dig_b1: Option<usize>,
    pub dig_w2: Option<usize>,
    pub dig_b2: Option<usize>,
    pub head_w: Option<usize>,
    pub head_wg: Option<usize>,
    pub head_w_alt: Option<usize>,
    pub head_b: Option<usize>,
    pub deep_w: Option<usize>,
    pub deep_b: Option<usize>,
    pub gate_u: Option<usize>,
    pub gate_b: Option<usize>,
    pub experts_w: Option<usize>,
    pub experts_b: Option<usize>,
    pub gate_w: Option<usize>,
}

impl Layout {
    fn resolve(tensors: &[Tensor]) -> Result<Layout> {
        let find = |name: &str| tensors.iter().position(|t| t.name == name);
        let need = |name: &str| {
            find(name).ok_or_else(|| Error::HeaderMismatch(format!("missing tensor {name}")))
        };
        Ok(Layout {
            embedding: need("embedding")?,
            enc_w: need("encoder.weight")?,
            enc_b: need("encoder.bias")?,
            dig_w1: find("digest.w1"),
            dig_b1: find("digest.b1"),
            dig_w2: find("digest.w2"),
            dig_b2: find("digest.b2"),
            head_w: find("head.weight"),
            head_wg: find("head.digest_weight"),
            head_w_alt: find("head.weight_alt"),
            head_b: find("head.bias"),
            deep_w: find("deep.weight"),
            deep_b: find("deep.bias"),
            gate_u: find("gate.u"),
            gate_b: find("gate.b"),
            experts_w: find("experts.weight"),
            experts_b: find("experts.bias"),
            gate_w: find("gate.weight"),
        })
    }
}

/// All learned tensors of one model, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: Vec<Tensor>,
    pub layout: Layout,
}

impl ModelParams {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per tensor.
    pub fn init<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<ModelParams> {
        config.validate()?;
        let tensors = config
            .tensor_specs()
            .into_iter()
            .map(|(name, shape, fan_in)| {
                let n: usize = shape.iter().product();
                let data = if fan_in == 0 {
                    vec![0.0; n]
                } else {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                };
                Tensor {
                    name: name.to_string(),
                    shape,
                    data,
                }
            })
            .collect::<Vec<_>>();
        let layout = Layout::resolve(&tensors)?;
        Ok(ModelParams {
            config,
            tensors,
            layout,
        })
    }

    /// Rebuilds parameters from deserialized tensors, checking them against the config.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<ModelParams> {
        config.validate()?;
        let specs = config.tensor_specs();
        if specs.len() != tensors.len() {
            return Err(Error::HeaderMismatch(format!(
                "expected {} tensors, found {}",
                specs.len(),
                tensors.len()
            )));
        }
        for ((name, shape, _), t) in specs.iter().zip(&tensors) {
            if *name != t.name || *shape != t.shape {
                return Err(Error::HeaderMismatch(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    t.name, t.shape, name, shape
                )));
            }
            if t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::HeaderMismatch(format!("tensor {name} has wrong length")));
            }
        }
        let layout = Layout::resolve(&tensors)?;
        Ok(ModelParams {
            config,
            tensors,
            layout,
        })
    }

    pub fn zeros_like(&self) -> Gradients {
        Gradients {
            tensors: self.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub(crate) fn t(&self, idx: usize) -> &[f64] {
        &self.tensors[idx].data
    }

    pub(crate) fn opt(&self, idx: Option<usize>) -> &[f64] {
        idx.map_or(&[][..], |i| &self.tensors[i].data[..])
    }

    /// Zeroes every weight through which the digest reaches the output.
    pub fn zero_digest_pathway(&mut self) {
        let cfg = self.config.clone();
        let l = self.layout;
        if let Some(i) = l.head_wg {
            self.tensors[i].data.fill(0.0);
        }
        if let Some(i) = l.gate_u {
            self.tensors[i].data.fill(0.0);
        }
        if cfg.combiner == CombinerKind::MoEg {
            if let Some(i) = l.gate_w {
                self.tensors[i].data.fill(0.0);
            }
        }
        if let Some(i) = l.deep_w {
            let cols = cfg.hidden_dim + cfg.digest_dim();
            for row in self.tensors[i].data.chunks_mut(cols) {
                row[cfg.hidden_dim..].fill(0.0);
            }
        }
    }

    /// Rounds every scalar to the nearest f32, the precision used on disk.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            for v in &mut t.data {
                *v = f64::from(*v as f32);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Gradient buffers aligned with [`ModelParams::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub(crate) fn g(&mut self, idx: usize) -> &mut [f64] {
        &mut self.tensors[idx]
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}
