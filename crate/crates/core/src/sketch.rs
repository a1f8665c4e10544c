//! Client count profiles, the background unigram model and the four client
//! sketch variants.

use serde::{Deserialize, Serialize};

use crate::corpus::ClientCorpus;
use crate::error::{Error, Result};
use crate::vocab::Vocab;

pub const DEFAULT_SMOOTHING: f64 = 1.0;

/// Per-word counts of one client, with OOV tokens under UNK.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountProfile {
    pub counts: Vec<u64>,
    pub total: u64,
}

impl CountProfile {
    pub fn from_corpus(corpus: &ClientCorpus, vocab: &Vocab) -> Result<CountProfile> {
        let mut counts = vec![0u64; vocab.size()];
        for inst in &corpus.instances {
            for tok in inst {
                counts[vocab.id(tok)] += 1;
            }
        }
        Self::from_counts(counts)
    }

    pub fn from_counts(counts: Vec<u64>) -> Result<CountProfile> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyCorpus);
        }
        Ok(CountProfile { counts, total })
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }
}

/// Smoothed pooled unigram rates over the training clients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundModel {
    pub rates: Vec<f64>,
    pub smoothing_alpha: f64,
    pub n_train_clients: usize,
}

impl BackgroundModel {
    /// `p_w = (alpha + sum_c n_cw) / (alpha |V| + sum_w sum_c n_cw)`.
    pub fn fit(profiles: &[CountProfile], smoothing_alpha: f64) -> Result<BackgroundModel> {
        if !(smoothing_alpha >= 0.0 && smoothing_alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "smoothing_alpha must be >= 0, got {smoothing_alpha}"
            )));
        }
        let dim = profiles.first().ok_or(Error::EmptyCorpus)?.dim();
        let mut pooled = vec![0u64; dim];
        for p in profiles {
            if p.dim() != dim {
                return Err(Error::DimensionMismatch {
                    what: "count profile",
                    expected: dim,
                    actual: p.dim(),
                });
            }
            for (acc, &n) in pooled.iter_mut().zip(&p.counts) {
                *acc += n;
            }
        }
        let grand: u64 = pooled.iter().sum();
        if grand == 0 {
            return Err(Error::EmptyCorpus);
        }
        let denom = smoothing_alpha * dim as f64 + grand as f64;
        let rates = pooled
            .iter()
            .map(|&n| (smoothing_alpha + n as f64) / denom)
            .collect();
        Ok(BackgroundModel {
            rates,
            smoothing_alpha,
            n_train_clients: profiles.len(),
        })
    }
}

/// Number of training clients in which each word occurs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocFrequencies {
    pub df: Vec<u64>,
    pub n_clients: usize,
}

impl DocFrequencies {
    pub fn fit(profiles: &[CountProfile]) -> Result<DocFrequencies> {
        let dim = profiles.first().ok_or(Error::EmptyCorpus)?.dim();
        let mut df = vec![0u64; dim];
        for p in profiles {
            for (d, &n) in df.iter_mut().zip(&p.counts) {
                if n > 0 {
                    *d += 1;
                }
            }
        }
        Ok(DocFrequencies {
            df,
            n_clients: profiles.len(),
        })
    }
}

/// Affine map of mean instance length onto [-1, 1] over the training clients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthScaler {
    pub min_len: f64,
    pub max_len: f64,
}

impl LengthScaler {
    pub fn fit(mean_lengths: &[f64]) -> Result<LengthScaler> {
        if mean_lengths.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let min_len = mean_lengths.iter().copied().fold(f64::INFINITY, f64::min);
        let max_len = mean_lengths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::new(min_len, max_len)
    }

    pub fn new(min_len: f64, max_len: f64) -> Result<LengthScaler> {
        if max_len.partial_cmp(&min_len) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::DegenerateScaler {
                min: min_len,
                max: max_len,
            });
        }
        Ok(LengthScaler { min_len, max_len })
    }

    pub fn scale(&self, mean_len: f64) -> f64 {
        2.0 * (mean_len - self.min_len) / (self.max_len - self.min_len) - 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SketchVariant {
    Saliency,
    TfIdf,
    BinaryBow,
    AvgLength,
}

impl SketchVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            SketchVariant::Saliency => "saliency",
            SketchVariant::TfIdf => "tf_idf",
            SketchVariant::BinaryBow => "binary_bow",
            SketchVariant::AvgLength => "avg_length",
        }
    }
}

impl std::str::FromStr for SketchVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "saliency" => Ok(SketchVariant::Saliency),
            "tfidf" | "tf_idf" => Ok(SketchVariant::TfIdf),
            "bbow" | "binary_bow" => Ok(SketchVariant::BinaryBow),
            "avg_length" | "length" => Ok(SketchVariant::AvgLength),
            other => Err(Error::InvalidArgument(format!("unknown sketch variant {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sketch {
    pub variant: SketchVariant,
    pub values: Vec<f64>,
}

impl Sketch {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn zeros(variant: SketchVariant, dim: usize) -> Sketch {
        Sketch {
            variant,
            values: vec![0.0; dim],
        }
    }
}

fn l2_normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Per-word negative log marginal probability of the client's count under
/// the background rate, L2-normalized.
pub fn saliency_sketch(profile: &CountProfile, bg: &BackgroundModel) -> Result<Sketch> {
    check_dim("background rates", profile.dim(), bg.rates.len())?;
    let total = profile.total as f64;
    let mut raw = Vec::with_capacity(profile.dim());
    for (w, (&n, &p)) in profile.counts.iter().zip(&bg.rates).enumerate() {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::UnsmoothedBackground { index: w, rate: p });
        }
        // Same value as -n ln p - (N - n) ln(1 - p), written as intercept plus slope.
        let n = n as f64;
        raw.push(-total * (-p).ln_1p() + n * ((1.0 - p) / p).ln());
    }
    Ok(Sketch {
        variant: SketchVariant::Saliency,
        values: l2_normalize(raw),
    })
}

/// Client-as-document TF-IDF: relative term frequency times `ln(|C| / max(df, 1))`.
pub fn tfidf_sketch(profile: &CountProfile, df: &DocFrequencies) -> Result<Sketch> {
    if df.n_clients == 0 {
        return Err(Error::InvalidArgument("tf-idf needs at least one client".into()));
    }
    check_dim("document frequencies", profile.dim(), df.df.len())?;
    let total = profile.total as f64;
    let n_clients = df.n_clients as f64;
    let raw = profile
        .counts
        .iter()
        .zip(&df.df)
        .map(|(&n, &d)| {
            let idf = (n_clients / (d.max(1) as f64)).ln().max(0.0);
            (n as f64 / total) * idf
        })
        .collect();
    Ok(Sketch {
        variant: SketchVariant::TfIdf,
        values: l2_normalize(raw),
    })
}

pub fn bbow_sketch(profile: &CountProfile) -> Sketch {
    Sketch {
        variant: SketchVariant::BinaryBow,
        values: profile
            .counts
            .iter()
            .map(|&n| if n > 0 { 1.0 } else { 0.0 })
            .collect(),
    }
}

pub fn avg_length_sketch(mean_len: f64, scaler: &LengthScaler) -> Result<Sketch> {
    let scaler = LengthScaler::new(scaler.min_len, scaler.max_len)?;
    Ok(Sketch {
        variant: SketchVariant::AvgLength,
        values: vec![scaler.scale(mean_len)],
    })
}

fn check_dim(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            actual,
        });
    }
    Ok(())
}

/// Everything fitted on the training clients that is needed to turn a count
/// profile into a sketch. Frozen once fitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchContext {
    pub variant: SketchVariant,
    pub background: BackgroundModel,
    pub doc_freq: DocFrequencies,
    pub length_scaler: Option<LengthScaler>,
}

impl SketchContext {
    /// Fits on the training clients' corpora only.
    pub fn fit(
        variant: SketchVariant,
        train_clients: &[&ClientCorpus],
        vocab: &Vocab,
        smoothing_alpha: f64,
    ) -> Result<SketchContext> {
        let profiles = train_clients
            .iter()
            .map(|c| CountProfile::from_corpus(c, vocab))
            .collect::<Result<Vec<_>>>()?;
        let background = BackgroundModel::fit(&profiles, smoothing_alpha)?;
        let doc_freq = DocFrequencies::fit(&profiles)?;
        let lengths: Vec<f64> = train_clients.iter().map(|c| c.mean_length()).collect();
        let length_scaler = match variant {
            SketchVariant::AvgLength => Some(LengthScaler::fit(&lengths)?),
            _ => LengthScaler::fit(&lengths).ok(),
        };
        Ok(SketchContext {
            variant,
            background,
            doc_freq,
            length_scaler,
        })
    }

    pub fn dim(&self) -> usize {
        match self.variant {
            SketchVariant::AvgLength => 1,
            _ => self.background.rates.len(),
        }
    }

    /// `n_instances` is only consulted by the average-length variant.
    pub fn sketch(&self, profile: &CountProfile, n_instances: Option<u64>) -> Result<Sketch> {
        match self.variant {
            SketchVariant::Saliency => saliency_sketch(profile, &self.background),
            SketchVariant::TfIdf => tfidf_sketch(profile, &self.doc_freq),
            SketchVariant::BinaryBow => {
                check_dim("count profile", self.background.rates.len(), profile.dim())?;
                Ok(bbow_sketch(profile))
            }
            SketchVariant::AvgLength => {
                let n = n_instances.filter(|&n| n > 0).ok_or_else(|| {
                    Error::InvalidArgument("average-length sketch needs n_instances".into())
                })?;
                let scaler = self.length_scaler.as_ref().ok_or(Error::DegenerateScaler {
                    min: f64::NAN,
                    max: f64::NAN,
                })?;
                avg_length_sketch(profile.total as f64 / n as f64, scaler)
            }
        }
    }

    pub fn sketch_corpus(&self, corpus: &ClientCorpus, vocab: &Vocab) -> Result<Sketch> {
        let profile = CountProfile::from_corpus(corpus, vocab)?;
        self.sketch(&profile, Some(corpus.instances.len() as u64))
    }
}

/// Registration payload: raw counts over the server vocabulary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountsPayload {
    pub client_id: String,
    pub vocab_hash: String,
    pub counts: Vec<u64>,
    pub total: u64,
    /// Number of instances behind the counts; needed for the length sketch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_instances: Option<u64>,
}

impl CountsPayload {
    pub fn from_corpus(corpus: &ClientCorpus, vocab: &Vocab) -> Result<CountsPayload> {
        let profile = CountProfile::from_corpus(corpus, vocab)?;
        Ok(CountsPayload {
            client_id: corpus.client_id.clone(),
            vocab_hash: vocab.hash(),
            counts: profile.counts,
            total: profile.total,
            n_instances: Some(corpus.instances.len() as u64),
        })
    }

    pub fn profile(&self) -> Result<CountProfile> {
        let profile = CountProfile::from_counts(self.counts.clone()).map_err(|_| Error::EmptySketch)?;
        if profile.total != self.total {
            return Err(Error::InvalidArgument(format!(
                "payload total {} does not match summed counts {}",
                self.total, profile.total
            )));
        }
        Ok(profile)
    }
}
