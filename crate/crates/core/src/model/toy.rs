//! Small deterministic fixtures (vocab 50, 3 labels) for gradient checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::objective::{Batch, Example, Target};
use super::params::{CombinerKind, ModelConfig, ModelParams};
use crate::corpus::Task;

pub const TOY_VOCAB: usize = 50;
pub const TOY_LABELS: usize = 3;
const TOY_WEIGHT_SCALE: f64 = 4.0;

/// Owned data behind a toy [`Batch`].
#[derive(Clone, Debug)]
pub struct ToyData {
    pub sketches: Vec<Vec<f64>>,
    /// (client, tokens, tags); tags double as the class label via `tags[0]`.
    pub examples: Vec<(usize, Vec<usize>, Vec<usize>)>,
}

impl ToyData {
    pub fn new(seed: u64) -> ToyData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sketches = (0..2)
            .map(|_| {
                let raw: Vec<f64> = (0..TOY_VOCAB).map(|_| rng.random::<f64>()).collect();
                let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
                raw.into_iter().map(|v| v / norm).collect()
            })
            .collect();
        let examples = (0..4)
            .map(|i| {
                let len = rng.random_range(3..7);
                let tokens = (0..len).map(|_| rng.random_range(0..TOY_VOCAB)).collect();
                let tags = (0..len).map(|_| rng.random_range(0..TOY_LABELS)).collect();
                (i % 2, tokens, tags)
            })
            .collect();
        ToyData { sketches, examples }
    }

    pub fn batch(&self, task: Task) -> Batch<'_> {
        Batch {
            sketches: self.sketches.iter().map(Vec::as_slice).collect(),
            examples: self
                .examples
                .iter()
                .map(|(client, tokens, tags)| Example {
                    client: *client,
                    tokens,
                    target: match task {
                        Task::Classify => Target::Class(tags[0]),
                        Task::Tag => Target::Tags(tags),
                        Task::Lm => Target::NextToken,
                    },
                })
                .collect(),
        }
    }
}

pub fn toy_config(task: Task, combiner: CombinerKind) -> ModelConfig {
    let mut cfg = ModelConfig::new(task, TOY_VOCAB, TOY_LABELS, TOY_VOCAB, combiner);
    cfg.n_experts = 3;
    cfg
}

/// Toy parameters with non-zero gates so every pathway carries gradient.
/// Weights are scaled up so ReLU pre-activations sit away from the kink.
pub fn toy_params(task: Task, combiner: CombinerKind, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::init(toy_config(task, combiner), &mut rng).unwrap();
    for t in &mut p.tensors {
        t.data.iter_mut().for_each(|v| *v *= TOY_WEIGHT_SCALE);
    }
    if let Some(gate) = p.tensor_mut("gate.weight") {
        for v in &mut gate.data {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    p
}
