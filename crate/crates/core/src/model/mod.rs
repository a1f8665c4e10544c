//! The sketch-conditioned server network: encoder, digest network, combiner
//! heads and their exact gradients.

pub mod combiner;
pub mod digest;
pub mod encoder;
pub mod linalg;
pub mod objective;
pub mod params;
pub mod toy;

pub use combiner::{
    baseline_head, combine, combine_backward, combine_concat, combine_decompose, combine_deep,
    combine_moe, lm_bias_head, xent_logits, xent_probs, HeadOutput, MixtureOutput,
};
pub use digest::{digest, digest_train, Digest};
pub use encoder::encode;
pub use objective::{
    batch_loss, grad_check, instance_outputs, loss_and_grad, Batch, Example, GradCheckReport, Target,
};
pub use params::{CombinerKind, DigestArch, Gradients, ModelConfig, ModelParams, Tensor};
