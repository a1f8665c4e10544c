use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::ClientCorpus;
use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const DEFAULT_MAX_SIZE: usize = 10_001;

/// Frequency-ranked vocabulary with a trailing UNK bucket.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
    unk_index: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    words: Vec<String>,
}

impl Serialize for Vocab {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        VocabRepr {
            words: self.words.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = VocabRepr::deserialize(d)?;
        Vocab::from_words(repr.words).map_err(serde::de::Error::custom)
    }
}

impl Vocab {
    /// Top `max_size - 1` words by total frequency (ties lexicographic), then UNK.
    pub fn build(corpora: &[ClientCorpus], max_size: usize) -> Result<Vocab> {
        if max_size == 0 {
            return Err(Error::InvalidArgument("vocab max_size must be >= 1".into()));
        }
        if corpora.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for corpus in corpora {
            for inst in &corpus.instances {
                for tok in inst {
                    if tok != UNK {
                        *freq.entry(tok.as_str()).or_default() += 1;
                    }
                }
            }
        }
        if freq.is_empty() && corpora.iter().all(|c| c.n_tokens() == 0) {
            return Err(Error::EmptyCorpus);
        }
        let mut ranked: Vec<(&str, u64)> = freq.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut words: Vec<String> = ranked
            .into_iter()
            .take(max_size - 1)
            .map(|(w, _)| w.to_string())
            .collect();
        words.push(UNK.to_string());
        Vocab::from_words(words)
    }

    /// Rebuilds a vocabulary from its ordered word list; UNK must be last.
    pub fn from_words(words: Vec<String>) -> Result<Vocab> {
        if words.last().map(String::as_str) != Some(UNK) {
            return Err(Error::InvalidArgument("vocabulary must end with UNK".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate vocab word {w}")));
            }
        }
        Ok(Vocab {
            unk_index: words.len() - 1,
            words,
            index,
        })
    }

    pub fn size(&self) -> usize {
        self.words.len()
    }

    pub fn unk_index(&self) -> usize {
        self.unk_index
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(self.unk_index)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// 64-bit FNV-1a over the vocab words, each followed by a newline, as hex.
    pub fn hash(&self) -> String {
        let mut h = Fnv1a::new();
        for w in &self.words {
            h.write(w.as_bytes());
            h.write(b"\n");
        }
        format!("{:016x}", h.finish())
    }
}

struct Fnv1a(u64);

impl Fnv1a {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    fn new() -> Self {
        Fnv1a(Self::OFFSET)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(Self::PRIME);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}
