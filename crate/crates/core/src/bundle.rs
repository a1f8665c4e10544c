//! Self-contained model file.
//!
//! Layout: `b"KYCMODEL"`, `u32` format version, `u64` header length, the JSON
//! header, then every tensor as little-endian `f32` in header order. All
//! integers are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, Tensor};
use crate::sketch::SketchContext;
use crate::train::Hyperparams;
use crate::vocab::Vocab;

pub const MAGIC: &[u8; 8] = b"KYCMODEL";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 8 + 4 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub params: ModelParams,
    pub vocab: Vocab,
    pub sketcher: SketchContext,
    pub hyperparams: Hyperparams,
    pub label_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tensors: Vec<TensorEntry>,
    config: ModelConfig,
    vocab: Vocab,
    sketcher: SketchContext,
    hyperparams: Hyperparams,
    label_names: Vec<String>,
}

impl ModelBundle {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            tensors: self
                .params
                .tensors
                .iter()
                .map(|t| TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    dtype: "f32".into(),
                })
                .collect(),
            config: self.params.config.clone(),
            vocab: self.vocab.clone(),
            sketcher: self.sketcher.clone(),
            hyperparams: self.hyperparams.clone(),
            label_names: self.label_names.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let n_scalars = self.params.n_scalars();
        let mut out = Vec::with_capacity(PREAMBLE + json.len() + 4 * n_scalars);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.params.tensors {
            for &v in &t.data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ModelBundle> {
        let magic_len = bytes.len().min(MAGIC.len());
        if bytes[..magic_len] != MAGIC[..magic_len] || bytes.is_empty() {
            return Err(Error::BadMagic);
        }
        if bytes.len() < PREAMBLE {
            return Err(Error::TruncatedHeader);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|l| PREAMBLE.checked_add(l))
            .filter(|&end| end <= bytes.len())
            .ok_or(Error::TruncatedHeader)?;
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])
            .map_err(|e| Error::HeaderMismatch(format!("unreadable header: {e}")))?;

        let needed: usize = header
            .tensors
            .iter()
            .map(|t| 4 * t.shape.iter().product::<usize>())
            .sum();
        let available = bytes.len() - header_end;
        if available < needed {
            return Err(Error::TruncatedTensorData { needed, available });
        }
        if available > needed {
            return Err(Error::HeaderMismatch(format!(
                "{} trailing bytes after tensor data",
                available - needed
            )));
        }
        let mut offset = header_end;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            if entry.dtype != "f32" {
                return Err(Error::HeaderMismatch(format!(
                    "tensor {} has unsupported dtype {}",
                    entry.name, entry.dtype
                )));
            }
            let n: usize = entry.shape.iter().product();
            let data = bytes[offset..offset + 4 * n]
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                .collect();
            offset += 4 * n;
            tensors.push(Tensor {
                name: entry.name,
                shape: entry.shape,
                data,
            });
        }
        let params = ModelParams::from_tensors(header.config, tensors)?;
        let bundle = ModelBundle {
            params,
            vocab: header.vocab,
            sketcher: header.sketcher,
            hyperparams: header.hyperparams,
            label_names: header.label_names,
        };
        bundle.check_consistency()?;
        Ok(bundle)
    }

    fn check_consistency(&self) -> Result<()> {
        let cfg = &self.params.config;
        if cfg.vocab_size != self.vocab.size() {
            return Err(Error::HeaderMismatch(format!(
                "config vocab size {} but vocabulary has {} words",
                cfg.vocab_size,
                self.vocab.size()
            )));
        }
        if cfg.sketch_dim != self.sketcher.dim() {
            return Err(Error::HeaderMismatch(format!(
                "config sketch dim {} but sketch context produces {}",
                cfg.sketch_dim,
                self.sketcher.dim()
            )));
        }
        if self.sketcher.background.rates.len() != self.vocab.size() {
            return Err(Error::HeaderMismatch("background rates do not cover the vocabulary".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ModelBundle> {
        ModelBundle::from_bytes(&std::fs::read(path)?)
    }

    /// Short content hash of the serialized bundle.
    pub fn fingerprint(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_bytes()?);
        Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::{ClientCorpus, Task};
    use crate::model::CombinerKind;
    use crate::sketch::SketchVariant;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn small_bundle(combiner: CombinerKind) -> ModelBundle {
        let words = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
        let corpora = vec![
            ClientCorpus::unlabeled("a", vec![words("the cat sat"), words("the dog")]).unwrap(),
            ClientCorpus::unlabeled("b", vec![words("a cat ran far away")]).unwrap(),
        ];
        let vocab = Vocab::build(&corpora, 100).unwrap();
        let refs: Vec<&ClientCorpus> = corpora.iter().collect();
        let sketcher = SketchContext::fit(SketchVariant::Saliency, &refs, &vocab, 1.0).unwrap();
        let hp = Hyperparams { combiner, ..Hyperparams::default() };
        let cfg = hp.model_config(Task::Classify, vocab.size(), 2, sketcher.dim(), 2);
        let mut params = ModelParams::init(cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        params.round_to_f32();
        ModelBundle {
            params,
            vocab,
            sketcher,
            hyperparams: hp,
            label_names: vec!["neg".into(), "pos".into()],
        }
    }

    #[test]
    fn round_trip_is_byte_exact() {
        for kind in CombinerKind::ALL {
            let b = small_bundle(kind);
            let bytes = b.to_bytes().unwrap();
            let back = ModelBundle::from_bytes(&bytes).unwrap();
            assert_eq!(back, b);
            assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn layout_prefix() {
        let bytes = small_bundle(CombinerKind::Concat).to_bytes().unwrap();
        assert_eq!(&bytes[..8], b"KYCMODEL");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        let hl = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[20..20 + hl]).unwrap();
        assert_eq!(header["tensors"][0]["name"], "embedding");
        assert_eq!(header["tensors"][0]["dtype"], "f32");
    }

    #[test]
    fn corruptions_are_distinguished() {
        let bytes = small_bundle(CombinerKind::Concat).to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ModelBundle::from_bytes(&bad), Err(Error::BadMagic)));
        assert!(matches!(ModelBundle::from_bytes(&[]), Err(Error::BadMagic)));
        let mut v2 = bytes.clone();
        v2[8] = 2;
        assert!(matches!(
            ModelBundle::from_bytes(&v2),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));
        assert!(matches!(ModelBundle::from_bytes(&bytes[..15]), Err(Error::TruncatedHeader)));
        assert!(matches!(ModelBundle::from_bytes(&bytes[..40]), Err(Error::TruncatedHeader)));
        assert!(matches!(
            ModelBundle::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::TruncatedTensorData { .. })
        ));
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 4]);
        assert!(matches!(ModelBundle::from_bytes(&extra), Err(Error::HeaderMismatch(_))));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let bytes = small_bundle(CombinerKind::Baseline).to_bytes().unwrap();
        let hl = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let mut header: serde_json::Value = serde_json::from_slice(&bytes[20..20 + hl]).unwrap();
        // Swap the dimensions of the encoder weight: same byte count, wrong shape.
        let shape = header["tensors"][1]["shape"].as_array().unwrap().clone();
        header["tensors"][1]["shape"] = serde_json::json!([shape[1], shape[0]]);
        let json = serde_json::to_vec(&header).unwrap();
        let mut out = bytes[..12].to_vec();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&bytes[20 + hl..]);
        assert!(matches!(ModelBundle::from_bytes(&out), Err(Error::HeaderMismatch(_))));
    }
}
