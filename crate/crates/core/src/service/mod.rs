//! Registration and prediction on top of a frozen model bundle.
//!
//! Clients register raw word counts once. The server turns them into a
//! sketch with the bundle's frozen sketch context, runs the digest network
//! and caches the digest under a content-addressed id. Predictions read the
//! cached digest and never touch counts or background rates.

pub mod http;

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::bundle::ModelBundle;
use crate::corpus::{tokenize, Task};
use crate::error::{Error, Result};
use crate::model::linalg::argmax;
use crate::model::{digest, instance_outputs, Digest};
use crate::sketch::{CountsPayload, Sketch, SketchVariant};

/// Pseudo-client served with a zero digest.
pub const ANONYMOUS: &str = "anonymous";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub client_id: String,
    /// Name the client supplied in its payload; not part of the id.
    #[serde(default)]
    pub name: String,
    pub sketch: Sketch,
    pub digest: Digest,
    /// Milliseconds since the Unix epoch.
    pub registered_at: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub client_id: String,
    /// One label per output unit: the class, one tag per token, or the
    /// predicted next word per position.
    pub labels: Vec<String>,
    /// Softmax scores per output unit.
    pub scores: Vec<Vec<f64>>,
}

/// Content-addressed client id: hex of the first 16 bytes of SHA-256 over
/// the vocabulary hash, the counts, the total and the instance count.
pub fn client_id_for(payload: &CountsPayload) -> String {
    let mut h = Sha256::new();
    h.update(payload.vocab_hash.as_bytes());
    h.update([0u8]);
    h.update((payload.counts.len() as u64).to_le_bytes());
    for c in &payload.counts {
        h.update(c.to_le_bytes());
    }
    h.update(payload.total.to_le_bytes());
    h.update(payload.n_instances.unwrap_or(0).to_le_bytes());
    h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
}

type Snapshot = Arc<HashMap<String, Arc<ClientRecord>>>;

pub struct Service {
    bundle: Arc<ModelBundle>,
    model_version: String,
    vocab_hash: String,
    records: RwLock<Snapshot>,
    /// Serializes registrations and owns the journal handle.
    writer: Mutex<Option<File>>,
    registry_path: Option<PathBuf>,
    sketch_computations: AtomicU64,
}

impl Service {
    /// In-memory service without persistence.
    pub fn new(bundle: ModelBundle) -> Result<Service> {
        Service::build(bundle, None, HashMap::new(), None)
    }

    /// Opens (or creates) the JSON-lines registry at `path` and replays it.
    /// Lines that fail to parse or do not fit the model are skipped.
    pub fn open(bundle: ModelBundle, path: &Path) -> Result<Service> {
        let mut records = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<ClientRecord>(&line) {
                    Ok(rec) if rec.sketch.dim() == bundle.params.config.sketch_dim => {
                        records.insert(rec.client_id.clone(), Arc::new(rec));
                    }
                    Ok(rec) => tracing::warn!(
                        line = i + 1,
                        client = %rec.client_id,
                        "registry record does not fit the model; skipped"
                    ),
                    Err(e) => tracing::warn!(line = i + 1, error = %e, "corrupt registry line skipped"),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Service::build(bundle, Some(file), records, Some(path.to_path_buf()))
    }

    fn build(
        bundle: ModelBundle,
        file: Option<File>,
        records: HashMap<String, Arc<ClientRecord>>,
        registry_path: Option<PathBuf>,
    ) -> Result<Service> {
        let model_version = bundle.fingerprint()?;
        let vocab_hash = bundle.vocab.hash();
        Ok(Service {
            bundle: Arc::new(bundle),
            model_version,
            vocab_hash,
            records: RwLock::new(Arc::new(records)),
            writer: Mutex::new(file),
            registry_path,
            sketch_computations: AtomicU64::new(0),
        })
    }

    pub fn bundle(&self) -> &ModelBundle {
        &self.bundle
    }

    pub fn model_version(&self) -> &str {
        &self.model_version
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn sketch_variant(&self) -> SketchVariant {
        self.bundle.sketcher.variant
    }

    pub fn registry_path(&self) -> Option<&Path> {
        self.registry_path.as_deref()
    }

    /// Number of sketch-plus-digest computations performed so far.
    pub fn sketch_computations(&self) -> u64 {
        self.sketch_computations.load(Ordering::SeqCst)
    }

    fn snapshot(&self) -> Snapshot {
        self.records.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn record(&self, client_id: &str) -> Option<Arc<ClientRecord>> {
        self.snapshot().get(client_id).cloned()
    }

    /// All records ordered by registration time, then id.
    pub fn records(&self) -> Vec<Arc<ClientRecord>> {
        let mut v: Vec<_> = self.snapshot().values().cloned().collect();
        v.sort_by(|a, b| (a.registered_at, &a.client_id).cmp(&(b.registered_at, &b.client_id)));
        v
    }

    /// Registers a client. Identical payloads map to the same record and are
    /// stored once. Model parameters are never modified.
    pub fn register(&self, payload: &CountsPayload) -> Result<Arc<ClientRecord>> {
        if payload.vocab_hash != self.vocab_hash {
            return Err(Error::VocabMismatch {
                payload: payload.vocab_hash.clone(),
                model: self.vocab_hash.clone(),
            });
        }
        if payload.counts.len() != self.bundle.vocab.size() {
            return Err(Error::DimensionMismatch {
                what: "counts",
                expected: self.bundle.vocab.size(),
                actual: payload.counts.len(),
            });
        }
        if payload.total == 0 {
            return Err(Error::EmptySketch);
        }
        let client_id = client_id_for(payload);
        let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(existing) = self.snapshot().get(&client_id) {
            return Ok(existing.clone());
        }
        let profile = payload.profile()?;
        self.sketch_computations.fetch_add(1, Ordering::SeqCst);
        let sketch = self.bundle.sketcher.sketch(&profile, payload.n_instances)?;
        let params = &self.bundle.params;
        let g = if params.config.combiner.uses_digest() {
            digest(params, &sketch.values)?
        } else {
            Digest(Vec::new())
        };
        if !sketch.values.iter().chain(&g.0).all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("sketch or digest is not finite".into()));
        }
        let registered_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let record = Arc::new(ClientRecord {
            client_id: client_id.clone(),
            name: payload.client_id.clone(),
            sketch,
            digest: g,
            registered_at,
        });
        if let Some(file) = writer.as_mut() {
            let mut line = serde_json::to_vec(&*record)?;
            line.push(b'\n');
            file.write_all(&line)?;
            file.flush()?;
            file.sync_data()?;
        }
        let mut next = HashMap::clone(&self.snapshot());
        next.insert(client_id, record.clone());
        *self.records.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(next);
        Ok(record)
    }

    fn digest_for(&self, client_id: &str) -> Result<Vec<f64>> {
        if client_id == ANONYMOUS {
            let cfg = &self.bundle.params.config;
            let dim = if cfg.combiner.uses_digest() { cfg.digest_dim() } else { 0 };
            return Ok(vec![0.0; dim]);
        }
        self.record(client_id)
            .map(|r| r.digest.0.clone())
            .ok_or_else(|| Error::UnregisteredClient(client_id.to_string()))
    }

    pub fn predict_text(&self, client_id: &str, text: &str) -> Result<Prediction> {
        self.predict_tokens(client_id, &tokenize(text, false))
    }

    pub fn predict_tokens(&self, client_id: &str, tokens: &[String]) -> Result<Prediction> {
        let g = self.digest_for(client_id)?;
        if tokens.is_empty() {
            return Err(Error::EmptyInstance);
        }
        let b = &self.bundle;
        let ids = b.vocab.encode(tokens);
        let outputs = instance_outputs(&b.params, &ids, &g)?;
        let mut labels = Vec::with_capacity(outputs.len());
        let mut scores = Vec::with_capacity(outputs.len());
        for o in outputs {
            let p = o.probabilities();
            let k = argmax(&p);
            labels.push(match b.params.config.task {
                Task::Lm => b.vocab.word(k).to_string(),
                _ => b.label_names.get(k).cloned().unwrap_or_else(|| k.to_string()),
            });
            scores.push(p);
        }
        Ok(Prediction {
            client_id: client_id.to_string(),
            labels,
            scores,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::tests::small_bundle;
    use crate::corpus::ClientCorpus;
    use crate::model::CombinerKind;

    fn payload(service: &Service, text: &str) -> CountsPayload {
        let words: Vec<String> = text.split(' ').map(String::from).collect();
        let corpus = ClientCorpus::unlabeled("x", vec![words]).unwrap();
        CountsPayload::from_corpus(&corpus, &service.bundle().vocab).unwrap()
    }

    #[test]
    fn register_is_idempotent_and_read_only() {
        let svc = Service::new(small_bundle(CombinerKind::Concat)).unwrap();
        let before = svc.bundle().to_bytes().unwrap();
        let p = payload(&svc, "the cat sat");
        let a = svc.register(&p).unwrap();
        let b = svc.register(&p).unwrap();
        assert_eq!(a, b);
        assert_eq!(svc.records().len(), 1);
        assert_eq!(svc.sketch_computations(), 1);
        assert_eq!(svc.bundle().to_bytes().unwrap(), before);
        assert_eq!(a.client_id.len(), 32);
    }

    #[test]
    fn registration_errors() {
        let svc = Service::new(small_bundle(CombinerKind::Concat)).unwrap();
        let mut p = payload(&svc, "the cat");
        p.vocab_hash = "0000000000000000".into();
        assert!(matches!(svc.register(&p), Err(Error::VocabMismatch { .. })));
        let mut p = payload(&svc, "the cat");
        p.counts.iter_mut().for_each(|c| *c = 0);
        p.total = 0;
        assert!(matches!(svc.register(&p), Err(Error::EmptySketch)));
        let mut p = payload(&svc, "the cat");
        p.counts.pop();
        assert!(matches!(svc.register(&p), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn unknown_words_only_register_finite() {
        let svc = Service::new(small_bundle(CombinerKind::Concat)).unwrap();
        let rec = svc.register(&payload(&svc, "zebra quokka zebra")).unwrap();
        assert!(rec.sketch.values.iter().all(|v| v.is_finite()));
        assert!(rec.digest.0.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn predict_uses_cache_only() {
        let svc = Service::new(small_bundle(CombinerKind::Concat)).unwrap();
        let rec = svc.register(&payload(&svc, "the dog ran")).unwrap();
        let before = svc.sketch_computations();
        let a = svc.predict_text(&rec.client_id, "the cat").unwrap();
        let b = svc.predict_text(&rec.client_id, "the cat").unwrap();
        assert_eq!(a, b);
        assert_eq!(svc.sketch_computations(), before);
        assert_eq!(a.labels.len(), 1);
        assert!((a.scores[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(svc.predict_text("nope", "the cat"), Err(Error::UnregisteredClient(_))));
        assert!(matches!(svc.predict_text(ANONYMOUS, "   "), Err(Error::EmptyInstance)));
    }

    #[test]
    fn anonymous_matches_registered_when_digest_pathway_is_zero() {
        let mut bundle = small_bundle(CombinerKind::Concat);
        bundle.params.zero_digest_pathway();
        let svc = Service::new(bundle).unwrap();
        let rec = svc.register(&payload(&svc, "a cat ran far away")).unwrap();
        let a = svc.predict_text(ANONYMOUS, "the cat sat").unwrap();
        let r = svc.predict_text(&rec.client_id, "the cat sat").unwrap();
        assert_eq!(a.scores, r.scores);
    }

    #[test]
    fn replay_is_exact_and_skips_corrupt_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("registry.jsonl");
        let (rec, pred) = {
            let svc = Service::open(small_bundle(CombinerKind::Deep), &path).unwrap();
            let rec = svc.register(&payload(&svc, "the cat sat")).unwrap();
            let pred = svc.predict_text(&rec.client_id, "a dog").unwrap();
            (rec, pred)
        };
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        writeln!(f, "{{not json").unwrap();
        let svc = Service::open(small_bundle(CombinerKind::Deep), &path).unwrap();
        assert_eq!(*svc.record(&rec.client_id).unwrap(), *rec);
        assert_eq!(svc.predict_text(&rec.client_id, "a dog").unwrap(), pred);
        assert_eq!(svc.sketch_computations(), 0);
    }

    #[test]
    fn baseline_bundle_registers_without_digest() {
        let svc = Service::new(small_bundle(CombinerKind::Baseline)).unwrap();
        let rec = svc.register(&payload(&svc, "the cat")).unwrap();
        assert!(rec.digest.0.is_empty());
        let a = svc.predict_text(ANONYMOUS, "the cat").unwrap();
        let r = svc.predict_text(&rec.client_id, "the cat").unwrap();
        assert_eq!((a.labels, a.scores), (r.labels, r.scores));
    }
}
