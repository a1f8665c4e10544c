//! Leave-k-client-out splits, hyperparameters and the training loop.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::ModelBundle;
use crate::corpus::{ClientCorpus, Dataset, Labels, Task, OUTSIDE_TAG};
use crate::error::{Error, Result};
use crate::eval::{accuracy, perplexity, token_f1};
use crate::model::{
    batch_loss, digest, instance_outputs, loss_and_grad, Batch, CombinerKind, DigestArch, Example,
    ModelConfig, ModelParams, Target,
};
use crate::sketch::{SketchContext, SketchVariant};
use crate::vocab::{Vocab, DEFAULT_MAX_SIZE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub all_clients: Vec<String>,
    pub ood_clients: Vec<String>,
    /// Fraction of each training client's instances held out for ID
    /// validation; the same fraction again is held out as ID test.
    pub id_validation_fraction: f64,
    pub seed: u64,
}

/// One training client's instances, partitioned.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientSplit {
    pub train: ClientCorpus,
    pub validation: ClientCorpus,
    pub test: ClientCorpus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub spec: SplitSpec,
    pub task: Task,
    pub label_names: Vec<String>,
    pub train_clients: Vec<ClientSplit>,
    pub ood_clients: Vec<ClientCorpus>,
}

impl Split {
    pub fn train_corpora(&self) -> Vec<&ClientCorpus> {
        self.train_clients.iter().map(|c| &c.train).collect()
    }
}

/// Holds out the `ood` clients entirely and carves a validation and a test
/// portion out of every remaining client with a seeded shuffle.
pub fn make_split(dataset: &Dataset, ood: &[String], val_fraction: f64, seed: u64) -> Result<Split> {
    if !(val_fraction > 0.0 && val_fraction < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction {val_fraction} must lie in (0, 0.5)"
        )));
    }
    for id in ood {
        if dataset.client(id).is_none() {
            return Err(Error::UnknownClient(id.clone()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_clients = Vec::new();
    let mut ood_clients = Vec::new();
    for client in &dataset.clients {
        if ood.contains(&client.client_id) {
            ood_clients.push(client.clone());
            continue;
        }
        let n = client.instances.len();
        let held = ((n as f64 * val_fraction).round() as usize).max(1);
        if n < 2 * held + 1 {
            return Err(Error::InvalidArgument(format!(
                "client {} has too few instances ({n}) to split",
                client.client_id
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        train_clients.push(ClientSplit {
            validation: client.select(&idx[..held]),
            test: client.select(&idx[held..2 * held]),
            train: client.select(&idx[2 * held..]),
        });
    }
    if train_clients.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(Split {
        spec: SplitSpec {
            all_clients: dataset.clients.iter().map(|c| c.client_id.clone()).collect(),
            ood_clients: ood.to_vec(),
            id_validation_fraction: val_fraction,
            seed,
        },
        task: dataset.task,
        label_names: dataset.label_names.clone(),
        train_clients,
        ood_clients,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Sketch dropout; `None` means 0.2 for language modelling and 0 otherwise.
    pub dropout_p: Option<f64>,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub digest_hidden: usize,
    /// Digest width; `None` means 128, or 32 for language modelling.
    pub digest_dim: Option<usize>,
    pub deep_hidden: usize,
    /// Mixture size; `None` means one expert per training client.
    pub n_experts: Option<usize>,
    pub combiner: CombinerKind,
    pub sketch_variant: SketchVariant,
    pub smoothing_alpha: f64,
    pub max_vocab: usize,
    pub val_fraction: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 20,
            seed: 1,
            dropout_p: None,
            embed_dim: 32,
            hidden_dim: 64,
            digest_hidden: 256,
            digest_dim: None,
            deep_hidden: 128,
            n_experts: None,
            combiner: CombinerKind::Concat,
            sketch_variant: SketchVariant::Saliency,
            smoothing_alpha: 1.0,
            max_vocab: DEFAULT_MAX_SIZE,
            val_fraction: 0.1,
        }
    }
}

pub const HYPERPARAM_KEYS: [&str; 16] = [
    "learning_rate",
    "batch_size",
    "epochs",
    "seed",
    "dropout_p",
    "embed_dim",
    "hidden_dim",
    "digest_hidden",
    "digest_dim",
    "deep_hidden",
    "n_experts",
    "combiner",
    "sketch_variant",
    "smoothing_alpha",
    "max_vocab",
    "val_fraction",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key}={value}: {e}")))
}

fn parse_opt<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    match value.trim() {
        "" | "auto" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

impl Hyperparams {
    pub fn dropout(&self, task: Task) -> f64 {
        self.dropout_p.unwrap_or(if task == Task::Lm { 0.2 } else { 0.0 })
    }

    /// Sets one field from its `key=value` spelling.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "learning_rate" | "lr" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "dropout_p" => self.dropout_p = parse_opt(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "digest_hidden" => self.digest_hidden = parse(key, value)?,
            "digest_dim" => self.digest_dim = parse_opt(key, value)?,
            "deep_hidden" => self.deep_hidden = parse(key, value)?,
            "n_experts" => self.n_experts = parse_opt(key, value)?,
            "combiner" => self.combiner = parse(key, value)?,
            "sketch_variant" | "sketch" => self.sketch_variant = parse(key, value)?,
            "smoothing_alpha" => self.smoothing_alpha = parse(key, value)?,
            "max_vocab" => self.max_vocab = parse(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown hyperparameter {other}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.digest_hidden == 0 || self.deep_hidden == 0 {
            return bad("layer sizes must be positive");
        }
        if matches!(self.digest_dim, Some(0)) || matches!(self.n_experts, Some(0)) {
            return bad("digest_dim and n_experts must be positive");
        }
        if let Some(p) = self.dropout_p {
            if !(0.0..1.0).contains(&p) {
                return bad("dropout_p must lie in [0, 1)");
            }
        }
        if self.smoothing_alpha.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return bad("smoothing_alpha must be positive");
        }
        if self.max_vocab < 2 {
            return bad("max_vocab must be at least 2");
        }
        Ok(())
    }

    /// Canonical `key=value` lines, one per field.
    pub fn to_kv(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "auto".into());
        let mut s = String::new();
        let fields = [
            ("learning_rate", self.learning_rate.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("dropout_p", opt(self.dropout_p.map(|v| v.to_string()))),
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("digest_hidden", self.digest_hidden.to_string()),
            ("digest_dim", opt(self.digest_dim.map(|v| v.to_string()))),
            ("deep_hidden", self.deep_hidden.to_string()),
            ("n_experts", opt(self.n_experts.map(|v| v.to_string()))),
            ("combiner", self.combiner.as_str().to_string()),
            ("sketch_variant", self.sketch_variant.as_str().to_string()),
            ("smoothing_alpha", self.smoothing_alpha.to_string()),
            ("max_vocab", self.max_vocab.to_string()),
            ("val_fraction", self.val_fraction.to_string()),
        ];
        for (k, v) in fields {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn model_config(&self, task: Task, vocab_size: usize, n_labels: usize, sketch_dim: usize, n_train_clients: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(task, vocab_size, n_labels, sketch_dim, self.combiner);
        cfg.embed_dim = self.embed_dim;
        cfg.hidden_dim = self.hidden_dim;
        cfg.deep_hidden = self.deep_hidden;
        cfg.digest = match cfg.digest {
            DigestArch::Linear { out } => DigestArch::Linear {
                out: self.digest_dim.unwrap_or(out),
            },
            DigestArch::Mlp { out, .. } => DigestArch::Mlp {
                hidden: self.digest_hidden,
                out: self.digest_dim.unwrap_or(out),
            },
        };
        cfg.n_experts = self.n_experts.unwrap_or(n_train_clients.max(1));
        cfg
    }
}

/// Client instances turned into token ids, its sketch, and gold targets.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedClient {
    pub client_id: String,
    pub sketch: Vec<f64>,
    pub tokens: Vec<Vec<usize>>,
    /// Class per instance (as a one-element vector), tags per token, or
    /// empty for language modelling.
    pub targets: Vec<Vec<usize>>,
}

impl EncodedClient {
    /// `sketch_source` is the text the client would register with.
    pub fn new(
        corpus: &ClientCorpus,
        sketch_source: &ClientCorpus,
        vocab: &Vocab,
        sketcher: &SketchContext,
        task: Task,
    ) -> Result<EncodedClient> {
        let sketch = sketcher.sketch_corpus(sketch_source, vocab)?.values;
        let tokens: Vec<Vec<usize>> = corpus.instances.iter().map(|i| vocab.encode(i)).collect();
        let targets = match (task, &corpus.labels) {
            (Task::Lm, _) => vec![Vec::new(); tokens.len()],
            (Task::Classify, Some(Labels::PerInstance(l))) => l.iter().map(|&c| vec![c]).collect(),
            (Task::Tag, Some(Labels::PerToken(t))) => t.clone(),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "client {} lacks {} labels",
                    corpus.client_id,
                    task.as_str()
                )))
            }
        };
        Ok(EncodedClient {
            client_id: corpus.client_id.clone(),
            sketch,
            tokens,
            targets,
        })
    }

    pub fn target(&self, i: usize, task: Task) -> Target<'_> {
        match task {
            Task::Classify => Target::Class(self.targets[i][0]),
            Task::Tag => Target::Tags(&self.targets[i]),
            Task::Lm => Target::NextToken,
        }
    }
}

/// Model outputs for one client, gathered for metrics and diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientPredictions {
    pub client_id: String,
    /// Argmax label per loss unit, grouped by instance.
    pub preds: Vec<Vec<usize>>,
    /// Gold label per loss unit, grouped by instance.
    pub golds: Vec<Vec<usize>>,
    /// Negative log-likelihood of the gold label per loss unit (flattened).
    pub nll: Vec<f64>,
    pub mean_length: f64,
}

impl ClientPredictions {
    pub fn flat_preds(&self) -> Vec<usize> {
        self.preds.iter().flatten().copied().collect()
    }

    pub fn flat_golds(&self) -> Vec<usize> {
        self.golds.iter().flatten().copied().collect()
    }
}

pub fn predict_client(params: &ModelParams, client: &EncodedClient) -> Result<ClientPredictions> {
    let task = params.config.task;
    let g = if params.config.combiner.uses_digest() {
        digest(params, &client.sketch)?.0
    } else {
        Vec::new()
    };
    let mut preds = Vec::with_capacity(client.tokens.len());
    let mut golds = Vec::with_capacity(client.tokens.len());
    let mut nll = Vec::new();
    for (i, tokens) in client.tokens.iter().enumerate() {
        let outs = instance_outputs(params, tokens, &g)?;
        let gold: Vec<usize> = match task {
            Task::Lm => tokens.clone(),
            _ => client.targets[i].clone(),
        };
        let mut p = Vec::with_capacity(outs.len());
        for (o, &y) in outs.iter().zip(&gold) {
            p.push(crate::model::linalg::argmax(&o.probabilities()));
            nll.push(o.loss(y)?);
        }
        preds.push(p);
        golds.push(gold);
    }
    let n_tokens: usize = client.tokens.iter().map(Vec::len).sum();
    Ok(ClientPredictions {
        client_id: client.client_id.clone(),
        preds,
        golds,
        nll,
        mean_length: n_tokens as f64 / client.tokens.len().max(1) as f64,
    })
}

/// Task metric over pooled predictions: accuracy, macro-F1 without the
/// outside tag, or perplexity.
pub fn task_metric(task: Task, label_names: &[String], preds: &[ClientPredictions]) -> Result<f64> {
    match task {
        Task::Classify => {
            let p: Vec<usize> = preds.iter().flat_map(|c| c.flat_preds()).collect();
            let g: Vec<usize> = preds.iter().flat_map(|c| c.flat_golds()).collect();
            accuracy(&p, &g)
        }
        Task::Tag => {
            let p: Vec<Vec<usize>> = preds.iter().flat_map(|c| c.preds.clone()).collect();
            let g: Vec<Vec<usize>> = preds.iter().flat_map(|c| c.golds.clone()).collect();
            let outside = label_names.iter().position(|l| l == OUTSIDE_TAG);
            Ok(token_f1(&p, &g, label_names.len(), outside)?.macro_f1)
        }
        Task::Lm => {
            let nll: Vec<f64> = preds.iter().flat_map(|c| c.nll.iter().copied()).collect();
            perplexity(&nll)
        }
    }
}

pub fn higher_is_better(task: Task) -> bool {
    task != Task::Lm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean training loss of the initial parameters.
    pub initial_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub selected_epoch: usize,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_metric,seconds\n");
        for r in &self.epochs {
            let _ = writeln!(s, "{},{},{},{:.3}", r.epoch, r.train_loss, r.val_metric, r.seconds);
        }
        s
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &ModelParams, lr: f64) -> Adam {
        let zeros: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &[Vec<f64>]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (ti, tensor) in params.tensors.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[ti], &mut self.v[ti], &grads[ti]);
            for i in 0..tensor.data.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                tensor.data[i] -= self.lr * mh / (vh.sqrt() + Self::EPS);
            }
        }
    }
}

/// Vocabulary, sketch context and encoded clients derived from a split.
/// Everything here is fit on the training portions of the training clients.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub vocab: Vocab,
    pub sketcher: SketchContext,
    pub train: Vec<EncodedClient>,
    pub validation: Vec<EncodedClient>,
    pub id_test: Vec<EncodedClient>,
    pub ood: Vec<EncodedClient>,
}

pub fn prepare(split: &Split, hp: &Hyperparams) -> Result<Prepared> {
    let train_corpora: Vec<ClientCorpus> = split.train_clients.iter().map(|c| c.train.clone()).collect();
    let vocab = Vocab::build(&train_corpora, hp.max_vocab)?;
    let refs = split.train_corpora();
    let sketcher = SketchContext::fit(hp.sketch_variant, &refs, &vocab, hp.smoothing_alpha)?;
    let task = split.task;
    let enc = |c: &ClientCorpus, src: &ClientCorpus| EncodedClient::new(c, src, &vocab, &sketcher, task);
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut id_test = Vec::new();
    for c in &split.train_clients {
        train.push(enc(&c.train, &c.train)?);
        validation.push(enc(&c.validation, &c.train)?);
        id_test.push(enc(&c.test, &c.train)?);
    }
    let ood = split.ood_clients.iter().map(|c| enc(c, c)).collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        vocab,
        sketcher,
        train,
        validation,
        id_test,
        ood,
    })
}

/// Trains from scratch. Init draws from a generator seeded with `hp.seed`;
/// shuffling and sketch dropout use a second stream of the same seed.
pub fn train(split: &Split, hp: &Hyperparams) -> Result<(ModelBundle, TrainLog, Prepared)> {
    hp.validate()?;
    let prepared = prepare(split, hp)?;
    let task = split.task;
    let cfg = hp.model_config(
        task,
        prepared.vocab.size(),
        split.label_names.len(),
        prepared.sketcher.dim(),
        prepared.train.len(),
    );
    let mut init_rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut params = ModelParams::init(cfg, &mut init_rng)?;
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    rng.set_stream(1);

    let units: Vec<(usize, usize)> = prepared
        .train
        .iter()
        .enumerate()
        .flat_map(|(c, e)| (0..e.tokens.len()).map(move |i| (c, i)))
        .collect();
    if units.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let sketches: Vec<&[f64]> = prepared.train.iter().map(|c| c.sketch.as_slice()).collect();
    let make_batch = |chunk: &[(usize, usize)]| Batch {
        sketches: sketches.clone(),
        examples: chunk
            .iter()
            .map(|&(c, i)| Example {
                client: c,
                tokens: &prepared.train[c].tokens[i],
                target: prepared.train[c].target(i, task),
            })
            .collect(),
    };
    let initial_loss = {
        let full = make_batch(&units);
        batch_loss(&params, &full)?
    };

    let dropout = hp.dropout(task);
    let mut adam = Adam::new(&params, hp.learning_rate);
    let mut order = units.clone();
    let mut log = TrainLog {
        initial_loss,
        epochs: Vec::new(),
        selected_epoch: 0,
    };
    let mut best: Option<(f64, ModelParams)> = None;
    let start = Instant::now();
    for epoch in 1..=hp.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut unit_sum = 0usize;
        for (bi, chunk) in order.chunks(hp.batch_size).enumerate() {
            let batch = make_batch(chunk);
            let n = batch.n_units(task);
            let drop = (dropout > 0.0).then_some((dropout, &mut rng));
            let (loss, grads) = loss_and_grad(&params, &batch, drop)?;
            if !loss.is_finite() || !grads.max_abs().is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            adam.step(&mut params, &grads.tensors);
            loss_sum += loss * n as f64;
            unit_sum += n;
        }
        let val_preds = prepared
            .validation
            .iter()
            .map(|c| predict_client(&params, c))
            .collect::<Result<Vec<_>>>()?;
        let val_metric = task_metric(task, &split.label_names, &val_preds)?;
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / unit_sum as f64,
            val_metric,
            seconds: start.elapsed().as_secs_f64(),
        });
        let improved = match &best {
            None => true,
            Some((b, _)) if higher_is_better(task) => val_metric > *b,
            Some((b, _)) => val_metric < *b,
        };
        if improved {
            best = Some((val_metric, params.clone()));
            log.selected_epoch = epoch;
        }
    }
    let (_, mut params) = best.ok_or(Error::EmptyCorpus)?;
    params.round_to_f32();
    let bundle = ModelBundle {
        params,
        vocab: prepared.vocab.clone(),
        sketcher: prepared.sketcher.clone(),
        hyperparams: hp.clone(),
        label_names: split.label_names.clone(),
    };
    Ok((bundle, log, prepared))
}

/// Per-client predictions for every evaluation group.
pub fn predict_all(params: &ModelParams, clients: &[EncodedClient]) -> Result<Vec<ClientPredictions>> {
    clients.iter().map(|c| predict_client(params, c)).collect()
}

/// Map from client id to per-client metric.
pub fn per_client_metric(
    task: Task,
    label_names: &[String],
    preds: &[ClientPredictions],
) -> Result<BTreeMap<String, f64>> {
    preds
        .iter()
        .map(|p| Ok((p.client_id.clone(), task_metric(task, label_names, std::slice::from_ref(p))?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(n_clients: usize, per_client: usize) -> Dataset {
        let clients = (0..n_clients)
            .map(|c| {
                let instances: Vec<Vec<String>> = (0..per_client)
                    .map(|i| vec![format!("w{}", (c + i) % 7), format!("v{}", i % 3)])
                    .collect();
                let labels = (0..per_client).map(|i| (i + c) % 2).collect();
                ClientCorpus::new(format!("c{c}"), instances, Some(Labels::PerInstance(labels))).unwrap()
            })
            .collect();
        Dataset {
            task: Task::Classify,
            label_names: vec!["neg".into(), "pos".into()],
            clients,
        }
    }

    #[test]
    fn split_partitions() {
        let ds = toy_dataset(10, 20);
        let ood = vec!["c3".to_string(), "c7".to_string()];
        let s = make_split(&ds, &ood, 0.1, 4).unwrap();
        assert_eq!(s.train_clients.len(), 8);
        assert_eq!(s.ood_clients.len(), 2);
        for c in &s.train_clients {
            assert_eq!(c.validation.instances.len(), 2);
            assert_eq!(c.test.instances.len(), 2);
            assert_eq!(c.train.instances.len(), 16);
            assert!(!ood.contains(&c.train.client_id));
        }
        assert_eq!(s, make_split(&ds, &ood, 0.1, 4).unwrap());
        assert_ne!(s, make_split(&ds, &ood, 0.1, 5).unwrap());
        let pure = make_split(&ds, &[], 0.1, 4).unwrap();
        assert!(pure.ood_clients.is_empty());
    }

    #[test]
    fn split_errors() {
        let ds = toy_dataset(3, 10);
        assert!(matches!(
            make_split(&ds, &["zz".into()], 0.1, 1),
            Err(Error::UnknownClient(_))
        ));
        for f in [0.0, 0.5, 1.2, f64::NAN] {
            assert!(make_split(&ds, &[], f, 1).is_err());
        }
        let tiny = toy_dataset(2, 2);
        assert!(make_split(&tiny, &[], 0.1, 1).is_err());
    }

    #[test]
    fn hyperparams_kv_round_trip() {
        let mut hp = Hyperparams::default();
        for (k, v) in [("lr", "0.01"), ("combiner", "moe_g"), ("sketch", "avg_length"), ("dropout_p", "0.3"), ("n_experts", "4")] {
            hp.set(k, v).unwrap();
        }
        let mut back = Hyperparams::default();
        for line in hp.to_kv().lines() {
            let (k, v) = line.split_once('=').unwrap();
            back.set(k, v).unwrap();
        }
        assert_eq!(hp, back);
        assert!(hp.set("nope", "1").is_err());
        assert!(hp.set("epochs", "x").is_err());
        hp.dropout_p = None;
        assert_eq!(hp.dropout(Task::Lm), 0.2);
        assert_eq!(hp.dropout(Task::Classify), 0.0);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = ModelConfig::new(Task::Classify, 5, 2, 5, CombinerKind::Baseline);
        let mut p = ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let before = p.clone();
        let grads: Vec<Vec<f64>> = p.tensors.iter().map(|t| vec![0.5; t.len()]).collect();
        let mut adam = Adam::new(&p, 0.01);
        adam.step(&mut p, &grads);
        for (a, b) in p.tensors.iter().zip(&before.tensors) {
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!(((y - x) - 0.01).abs() < 1e-9);
            }
        }
    }
}
