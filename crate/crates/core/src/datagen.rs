//! Deterministic synthetic multi-client corpora.
//!
//! Every client belongs to a cluster. Filler words come from a Zipfian
//! shared pool, the cluster's topic pool, a small per-client signature pool
//! and a large uniform rare tail. On top of that each task plants its signal:
//!
//! * classify: a label drawn from the cluster prior, a fixed number of noisy
//!   sentiment words, and negative instances `length_label_delta` words longer;
//! * tag: entity slots tagged `MONEY`/`CARDINAL`/`ORG`, plus ambiguous tokens
//!   whose tag distribution depends on the cluster;
//! * lm: fixed-length sentences with no labels.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClientCorpus, Dataset, Labels, Task, OUTSIDE_TAG};
use crate::error::{Error, Result};

pub const PRESETS: [&str; 4] = ["label_prior_shift", "length_bias", "ambiguous_tokens", "lm_topics"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbiguousToken {
    pub token: String,
    /// Per cluster: `(tag, probability)` pairs summing to 1.
    pub per_cluster: Vec<Vec<(String, f64)>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub task: Task,
    pub n_clusters: usize,
    pub clients_per_cluster: usize,
    pub instances_per_client: usize,
    /// Zipf-distributed words shared by every client.
    pub shared_vocab: usize,
    pub zipf_exponent: f64,
    /// Words per cluster topic pool (pools are disjoint).
    pub topic_vocab: usize,
    /// Probability that a filler word is drawn from the cluster's topic pool.
    pub topic_concentration: f64,
    /// Words per client signature pool.
    pub signature_vocab: usize,
    pub signature_rate: f64,
    /// Uniform rare words shared by every client.
    pub tail_vocab: usize,
    /// Each client's tail rate is drawn uniformly from this range.
    pub tail_rate: (f64, f64),
    /// Classification: probability of the positive label per cluster.
    pub label_prior_by_cluster: Vec<f64>,
    pub sentiment_vocab: usize,
    pub sentiment_tokens: usize,
    /// Probability that a sentiment word matches the instance label.
    pub sentiment_accuracy: f64,
    pub base_length: usize,
    /// Extra words per cluster added to `base_length`.
    pub length_offset_by_cluster: Vec<usize>,
    /// Extra words on negative instances.
    pub length_label_delta: usize,
    /// Instance length noise, uniform in `[-length_noise, length_noise]`.
    pub length_noise: usize,
    /// Tagging: probability that a position is an entity slot.
    pub entity_rate: f64,
    /// Tagging: probability that an entity slot holds an ambiguous token.
    pub ambiguous_share: f64,
    pub ambiguous_tokens: Vec<AmbiguousToken>,
    /// Clients meant to be held out as out-of-distribution.
    pub ood_clients: Vec<String>,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            task: Task::Classify,
            n_clusters: 2,
            clients_per_cluster: 4,
            instances_per_client: 800,
            shared_vocab: 300,
            zipf_exponent: 1.0,
            topic_vocab: 150,
            topic_concentration: 0.03,
            signature_vocab: 10,
            signature_rate: 0.0,
            tail_vocab: 3000,
            tail_rate: (0.02, 0.08),
            label_prior_by_cluster: vec![0.5, 0.5],
            sentiment_vocab: 10,
            sentiment_tokens: 2,
            sentiment_accuracy: 0.75,
            base_length: 20,
            length_offset_by_cluster: vec![0, 0],
            length_label_delta: 0,
            length_noise: 5,
            entity_rate: 0.0,
            ambiguous_share: 0.0,
            ambiguous_tokens: Vec::new(),
            ood_clients: Vec::new(),
            seed: 1,
        }
    }
}

pub const MONEY: &str = "MONEY";
pub const CARDINAL: &str = "CARDINAL";
pub const ORG: &str = "ORG";

fn dist(pairs: &[(&str, f64)]) -> Vec<(String, f64)> {
    pairs.iter().map(|(t, p)| (t.to_string(), *p)).collect()
}

/// Named configurations used by the acceptance experiments.
pub fn preset(name: &str) -> Result<GenConfig> {
    let base = GenConfig::default();
    Ok(match name {
        "label_prior_shift" => GenConfig {
            label_prior_by_cluster: vec![0.7, 0.3],
            ood_clients: vec!["c0".into(), "c4".into()],
            ..base
        },
        "length_bias" => GenConfig {
            n_clusters: 4,
            clients_per_cluster: 2,
            label_prior_by_cluster: vec![0.5; 4],
            length_offset_by_cluster: vec![0, 15, 30, 50],
            length_label_delta: 20,
            sentiment_tokens: 3,
            ood_clients: vec!["c7".into()],
            ..base
        },
        "ambiguous_tokens" => GenConfig {
            task: Task::Tag,
            instances_per_client: 300,
            entity_rate: 0.15,
            ambiguous_share: 0.5,
            ambiguous_tokens: vec![
                AmbiguousToken {
                    token: "million".into(),
                    per_cluster: vec![dist(&[(MONEY, 0.92), (CARDINAL, 0.08)]), dist(&[(MONEY, 0.08), (CARDINAL, 0.92)])],
                },
                AmbiguousToken {
                    token: "billion".into(),
                    per_cluster: vec![dist(&[(MONEY, 0.92), (CARDINAL, 0.08)]), dist(&[(MONEY, 0.2), (CARDINAL, 0.8)])],
                },
                AmbiguousToken {
                    token: "apple".into(),
                    per_cluster: vec![dist(&[(ORG, 0.9), (OUTSIDE_TAG, 0.1)]), dist(&[(ORG, 0.1), (OUTSIDE_TAG, 0.9)])],
                },
                AmbiguousToken {
                    token: "shares".into(),
                    per_cluster: vec![dist(&[(CARDINAL, 0.85), (OUTSIDE_TAG, 0.15)]), dist(&[(CARDINAL, 0.1), (OUTSIDE_TAG, 0.9)])],
                },
            ],
            label_prior_by_cluster: Vec::new(),
            sentiment_tokens: 0,
            ood_clients: vec!["c0".into(), "c4".into()],
            ..base
        },
        "lm_topics" => GenConfig {
            task: Task::Lm,
            n_clusters: 6,
            clients_per_cluster: 2,
            instances_per_client: 60,
            shared_vocab: 200,
            topic_vocab: 60,
            topic_concentration: 0.4,
            signature_vocab: 0,
            signature_rate: 0.0,
            tail_vocab: 0,
            tail_rate: (0.0, 0.0),
            label_prior_by_cluster: Vec::new(),
            sentiment_tokens: 0,
            base_length: 50,
            length_offset_by_cluster: vec![0; 6],
            length_noise: 0,
            ood_clients: vec!["c1".into(), "c5".into(), "c9".into()],
            ..base
        },
        other => return Err(Error::UnknownPreset(other.to_string())),
    })
}

impl GenConfig {
    pub fn n_clients(&self) -> usize {
        self.n_clusters * self.clients_per_cluster
    }

    pub fn client_id(&self, index: usize) -> String {
        format!("c{index}")
    }

    pub fn cluster_of(&self, index: usize) -> usize {
        index / self.clients_per_cluster
    }

    pub fn label_names(&self) -> Vec<String> {
        match self.task {
            Task::Classify => vec!["neg".into(), "pos".into()],
            Task::Tag => [OUTSIDE_TAG, MONEY, CARDINAL, ORG].iter().map(|s| s.to_string()).collect(),
            Task::Lm => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_clusters == 0 || self.clients_per_cluster == 0 || self.instances_per_client == 0 {
            return bad("cluster, client and instance counts must be positive".into());
        }
        if self.shared_vocab == 0 {
            return bad("shared_vocab must be positive".into());
        }
        if self.length_offset_by_cluster.len() != self.n_clusters {
            return bad(format!(
                "length_offset_by_cluster has {} entries for {} clusters",
                self.length_offset_by_cluster.len(),
                self.n_clusters
            ));
        }
        let prob = |name: &str, p: f64| -> Result<()> {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} = {p} is not a probability")))
            }
        };
        prob("topic_concentration", self.topic_concentration)?;
        prob("signature_rate", self.signature_rate)?;
        prob("tail_rate.0", self.tail_rate.0)?;
        prob("tail_rate.1", self.tail_rate.1)?;
        prob("sentiment_accuracy", self.sentiment_accuracy)?;
        prob("entity_rate", self.entity_rate)?;
        prob("ambiguous_share", self.ambiguous_share)?;
        if self.tail_rate.0 > self.tail_rate.1 {
            return bad("tail_rate range is reversed".into());
        }
        if self.topic_concentration + self.signature_rate + self.tail_rate.1 > 1.0 {
            return bad("filler rates exceed 1".into());
        }
        if (self.topic_concentration > 0.0 && self.topic_vocab == 0)
            || (self.signature_rate > 0.0 && self.signature_vocab == 0)
            || (self.tail_rate.1 > 0.0 && self.tail_vocab == 0)
        {
            return bad("a filler pool with positive rate is empty".into());
        }
        match self.task {
            Task::Classify => {
                if self.label_prior_by_cluster.len() != self.n_clusters {
                    return bad(format!(
                        "label_prior_by_cluster has {} entries for {} clusters",
                        self.label_prior_by_cluster.len(),
                        self.n_clusters
                    ));
                }
                for &p in &self.label_prior_by_cluster {
                    if !(p > 0.0 && p < 1.0) {
                        return bad(format!("label prior {p} must lie in (0, 1)"));
                    }
                }
                if self.sentiment_tokens > 0 && self.sentiment_vocab == 0 {
                    return bad("sentiment_vocab must be positive".into());
                }
            }
            Task::Tag => {
                let labels = self.label_names();
                for amb in &self.ambiguous_tokens {
                    if amb.per_cluster.len() != self.n_clusters {
                        return bad(format!(
                            "ambiguous token {} has {} cluster distributions for {} clusters",
                            amb.token,
                            amb.per_cluster.len(),
                            self.n_clusters
                        ));
                    }
                    for d in &amb.per_cluster {
                        let total: f64 = d.iter().map(|(_, p)| p).sum();
                        if (total - 1.0).abs() > 1e-9 || d.iter().any(|(_, p)| *p < 0.0) {
                            return bad(format!("tag distribution of {} does not sum to 1", amb.token));
                        }
                        if let Some((t, _)) = d.iter().find(|(t, _)| !labels.contains(t)) {
                            return bad(format!("unknown tag {t}"));
                        }
                    }
                }
                if self.ambiguous_share > 0.0 && self.ambiguous_tokens.is_empty() {
                    return bad("ambiguous_share > 0 without ambiguous tokens".into());
                }
            }
            Task::Lm => {}
        }
        if self.base_length == 0 {
            return bad("base_length must be positive".into());
        }
        Ok(())
    }
}

fn zipf(n: usize, exponent: f64) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new((1..=n).map(|r| 1.0 / (r as f64).powf(exponent)))
        .map_err(|e| Error::InvalidArgument(format!("zipf weights: {e}")))
}

struct Pools {
    shared: WeightedIndex<f64>,
    topic: Option<WeightedIndex<f64>>,
}

struct ClientGen<'a> {
    cfg: &'a GenConfig,
    pools: &'a Pools,
    cluster: usize,
    client: usize,
    tail_rate: f64,
}

impl ClientGen<'_> {
    fn filler<R: Rng>(&self, rng: &mut R) -> String {
        let cfg = self.cfg;
        let u: f64 = rng.random();
        let mut edge = cfg.topic_concentration;
        if u < edge {
            let i = self.pools.topic.as_ref().unwrap().sample(rng);
            return format!("t{}_{i}", self.cluster);
        }
        edge += cfg.signature_rate;
        if u < edge {
            return format!("k{}_{}", self.client, rng.random_range(0..cfg.signature_vocab));
        }
        edge += self.tail_rate;
        if u < edge {
            return format!("r{}", rng.random_range(0..cfg.tail_vocab));
        }
        format!("w{}", self.pools.shared.sample(rng))
    }

    fn length<R: Rng>(&self, extra: usize, rng: &mut R) -> usize {
        let cfg = self.cfg;
        let center = (cfg.base_length + cfg.length_offset_by_cluster[self.cluster] + extra) as i64;
        let noise = cfg.length_noise as i64;
        let jitter = if noise > 0 { rng.random_range(-noise..=noise) } else { 0 };
        (center + jitter).max(1) as usize
    }

    fn classify<R: Rng>(&self, rng: &mut R) -> (Vec<String>, usize) {
        let cfg = self.cfg;
        let positive = rng.random::<f64>() < cfg.label_prior_by_cluster[self.cluster];
        let label = usize::from(positive);
        let extra = if positive { 0 } else { cfg.length_label_delta };
        let len = self.length(extra, rng).max(cfg.sentiment_tokens);
        let mut tokens: Vec<String> = (0..len).map(|_| self.filler(rng)).collect();
        let mut slots: Vec<usize> = (0..len).collect();
        for k in 0..cfg.sentiment_tokens {
            let j = rng.random_range(k..len);
            slots.swap(k, j);
            let agrees = rng.random::<f64>() < cfg.sentiment_accuracy;
            let polarity = if agrees == positive { "pos" } else { "neg" };
            tokens[slots[k]] = format!("{polarity}{}", rng.random_range(0..cfg.sentiment_vocab));
        }
        (tokens, label)
    }

    fn tag<R: Rng>(&self, rng: &mut R, labels: &[String]) -> (Vec<String>, Vec<usize>) {
        let cfg = self.cfg;
        let idx = |t: &str| labels.iter().position(|l| l == t).unwrap();
        let len = self.length(0, rng);
        let mut tokens = Vec::with_capacity(len);
        let mut tags = Vec::with_capacity(len);
        for _ in 0..len {
            if rng.random::<f64>() >= cfg.entity_rate {
                tokens.push(self.filler(rng));
                tags.push(idx(OUTSIDE_TAG));
                continue;
            }
            if !cfg.ambiguous_tokens.is_empty() && rng.random::<f64>() < cfg.ambiguous_share {
                let amb = &cfg.ambiguous_tokens[rng.random_range(0..cfg.ambiguous_tokens.len())];
                let d = &amb.per_cluster[self.cluster];
                let mut u: f64 = rng.random();
                let mut tag = &d[d.len() - 1].0;
                for (t, p) in d {
                    if u < *p {
                        tag = t;
                        break;
                    }
                    u -= p;
                }
                tokens.push(amb.token.clone());
                tags.push(idx(tag));
                continue;
            }
            let (word, tag) = match rng.random_range(0..3) {
                0 => (format!("usd{}", rng.random_range(0..10)), MONEY),
                1 => (format!("num{}", rng.random_range(0..20)), CARDINAL),
                _ => (format!("org{}", rng.random_range(0..20)), ORG),
            };
            tokens.push(word);
            tags.push(idx(tag));
        }
        (tokens, tags)
    }

    fn sentence<R: Rng>(&self, rng: &mut R) -> Vec<String> {
        let len = self.length(0, rng);
        (0..len).map(|_| self.filler(rng)).collect()
    }
}

/// Generates every client's labelled corpus. Pure function of `cfg`.
pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let pools = Pools {
        shared: zipf(cfg.shared_vocab, cfg.zipf_exponent)?,
        topic: if cfg.topic_vocab > 0 {
            Some(zipf(cfg.topic_vocab, cfg.zipf_exponent)?)
        } else {
            None
        },
    };
    let labels = cfg.label_names();
    let mut clients = Vec::with_capacity(cfg.n_clients());
    for index in 0..cfg.n_clients() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(index as u64 + 1);
        let tail_rate = if cfg.tail_rate.1 > cfg.tail_rate.0 {
            rng.random_range(cfg.tail_rate.0..cfg.tail_rate.1)
        } else {
            cfg.tail_rate.0
        };
        let g = ClientGen {
            cfg,
            pools: &pools,
            cluster: cfg.cluster_of(index),
            client: index,
            tail_rate,
        };
        let n = cfg.instances_per_client;
        let corpus = match cfg.task {
            Task::Classify => {
                let (inst, lab): (Vec<_>, Vec<_>) = (0..n).map(|_| g.classify(&mut rng)).unzip();
                ClientCorpus::new(cfg.client_id(index), inst, Some(Labels::PerInstance(lab)))?
            }
            Task::Tag => {
                let (inst, tags): (Vec<_>, Vec<_>) = (0..n).map(|_| g.tag(&mut rng, &labels)).unzip();
                ClientCorpus::new(cfg.client_id(index), inst, Some(Labels::PerToken(tags)))?
            }
            Task::Lm => {
                let inst = (0..n).map(|_| g.sentence(&mut rng)).collect();
                ClientCorpus::unlabeled(cfg.client_id(index), inst)?
            }
        };
        clients.push(corpus);
    }
    Ok(Dataset {
        task: cfg.task,
        label_names: labels,
        clients,
    })
}
