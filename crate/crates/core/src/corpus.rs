//! Client corpora, tokenization and the on-disk corpus directory format.
//!
//! A dataset directory holds one sub-directory per client (directory name is
//! the client id), each containing `corpus.txt`:
//!
//! * classification: `label<TAB>text` per line (or bare `text` when unlabeled)
//! * tagging: `token<TAB>tag` per line, blank line between instances
//! * language modelling: one sentence per line
//!
//! An optional `manifest.json` at the dataset root records the task, the
//! label inventory and the generator configuration.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CORPUS_FILE: &str = "corpus.txt";
pub const MANIFEST_FILE: &str = "manifest.json";
/// Tag treated as "outside" by tagging metrics.
pub const OUTSIDE_TAG: &str = "O";

/// Splits on whitespace and detaches leading and trailing punctuation as
/// single-character tokens.
pub fn tokenize(text: &str, cased: bool) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let start = chars
            .iter()
            .position(|c| !c.is_ascii_punctuation())
            .unwrap_or(chars.len());
        let end = chars
            .iter()
            .rposition(|c| !c.is_ascii_punctuation())
            .map_or(start, |i| i + 1);
        for c in &chars[..start] {
            out.push(c.to_string());
        }
        if start < end {
            let core: String = chars[start..end].iter().collect();
            out.push(if cased { core } else { core.to_lowercase() });
        }
        for c in &chars[end.max(start)..] {
            out.push(c.to_string());
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classify,
    Tag,
    Lm,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Classify => "classify",
            Task::Tag => "tag",
            Task::Lm => "lm",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classify" => Ok(Task::Classify),
            "tag" => Ok(Task::Tag),
            "lm" => Ok(Task::Lm),
            other => Err(Error::InvalidArgument(format!("unknown task {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Labels {
    PerInstance(Vec<usize>),
    PerToken(Vec<Vec<usize>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientCorpus {
    pub client_id: String,
    pub instances: Vec<Vec<String>>,
    pub labels: Option<Labels>,
}

impl ClientCorpus {
    pub fn new(
        client_id: impl Into<String>,
        instances: Vec<Vec<String>>,
        labels: Option<Labels>,
    ) -> Result<Self> {
        let corpus = ClientCorpus {
            client_id: client_id.into(),
            instances,
            labels,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn unlabeled(client_id: impl Into<String>, instances: Vec<Vec<String>>) -> Result<Self> {
        Self::new(client_id, instances, None)
    }

    fn validate(&self) -> Result<()> {
        if self.instances.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        match &self.labels {
            None => {}
            Some(Labels::PerInstance(l)) => {
                if l.len() != self.instances.len() {
                    return Err(Error::DimensionMismatch {
                        what: "instance labels",
                        expected: self.instances.len(),
                        actual: l.len(),
                    });
                }
            }
            Some(Labels::PerToken(l)) => {
                if l.len() != self.instances.len() {
                    return Err(Error::DimensionMismatch {
                        what: "tagged instances",
                        expected: self.instances.len(),
                        actual: l.len(),
                    });
                }
                for (inst, tags) in self.instances.iter().zip(l) {
                    if inst.len() != tags.len() {
                        return Err(Error::DimensionMismatch {
                            what: "token tags",
                            expected: inst.len(),
                            actual: tags.len(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_tokens(&self) -> usize {
        self.instances.iter().map(Vec::len).sum()
    }

    pub fn mean_length(&self) -> f64 {
        self.n_tokens() as f64 / self.instances.len() as f64
    }

    /// Keeps the instances (and labels) at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> ClientCorpus {
        let instances = indices.iter().map(|&i| self.instances[i].clone()).collect();
        let labels = self.labels.as_ref().map(|l| match l {
            Labels::PerInstance(v) => Labels::PerInstance(indices.iter().map(|&i| v[i]).collect()),
            Labels::PerToken(v) => Labels::PerToken(indices.iter().map(|&i| v[i].clone()).collect()),
        });
        ClientCorpus {
            client_id: self.client_id.clone(),
            instances,
            labels,
        }
    }
}

/// Task, label inventory and client corpora.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub label_names: Vec<String>,
    pub clients: Vec<ClientCorpus>,
}

impl Dataset {
    pub fn client(&self, id: &str) -> Option<&ClientCorpus> {
        self.clients.iter().find(|c| c.client_id == id)
    }

    pub fn n_labels(&self) -> usize {
        self.label_names.len()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    task: Task,
    label_names: Vec<String>,
    clients: Vec<String>,
    #[serde(default)]
    generator: Option<serde_json::Value>,
}

pub fn write_dataset(
    dataset: &Dataset,
    dir: &Path,
    generator: Option<serde_json::Value>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    for client in &dataset.clients {
        let cdir = dir.join(&client.client_id);
        fs::create_dir_all(&cdir)?;
        let mut text = String::new();
        match (&client.labels, dataset.task) {
            (Some(Labels::PerToken(tags)), _) => {
                for (inst, t) in client.instances.iter().zip(tags) {
                    for (tok, tag) in inst.iter().zip(t) {
                        text.push_str(tok);
                        text.push('\t');
                        text.push_str(&dataset.label_names[*tag]);
                        text.push('\n');
                    }
                    text.push('\n');
                }
            }
            (Some(Labels::PerInstance(labels)), _) => {
                for (inst, l) in client.instances.iter().zip(labels) {
                    text.push_str(&dataset.label_names[*l]);
                    text.push('\t');
                    text.push_str(&inst.join(" "));
                    text.push('\n');
                }
            }
            (None, _) => {
                for inst in &client.instances {
                    text.push_str(&inst.join(" "));
                    text.push('\n');
                }
            }
        }
        fs::write(cdir.join(CORPUS_FILE), text)?;
    }
    let manifest = Manifest {
        task: dataset.task,
        label_names: dataset.label_names.clone(),
        clients: dataset.clients.iter().map(|c| c.client_id.clone()).collect(),
        generator,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Reads a dataset directory. Without a manifest, `task` must be supplied
/// and labels are inferred (sorted, with `O` first for tagging).
pub fn read_dataset(dir: &Path, task: Option<Task>) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: Option<Manifest> = if manifest_path.exists() {
        Some(serde_json::from_str(&fs::read_to_string(&manifest_path)?)?)
    } else {
        None
    };
    let task = match (&manifest, task) {
        (Some(m), _) => m.task,
        (None, Some(t)) => t,
        (None, None) => {
            return Err(Error::InvalidArgument(
                "dataset has no manifest; task must be given".into(),
            ))
        }
    };
    let client_ids: Vec<String> = match &manifest {
        Some(m) => m.clients.clone(),
        None => {
            let mut ids = Vec::new();
            for entry in fs::read_dir(dir)? {
                let entry = entry?;
                if entry.path().join(CORPUS_FILE).exists() {
                    ids.push(entry.file_name().to_string_lossy().into_owned());
                }
            }
            ids.sort();
            ids
        }
    };

    let mut raw = Vec::new();
    for id in &client_ids {
        let text = fs::read_to_string(dir.join(id).join(CORPUS_FILE))?;
        raw.push((id.clone(), parse_client_text(&text, task)));
    }

    let label_names = match &manifest {
        Some(m) => m.label_names.clone(),
        None => {
            let mut set = BTreeSet::new();
            for (_, parsed) in &raw {
                for inst in parsed {
                    for l in &inst.1 {
                        set.insert(l.clone());
                    }
                }
            }
            let mut names: Vec<String> = set.into_iter().collect();
            if task == Task::Tag {
                if let Some(pos) = names.iter().position(|n| n == OUTSIDE_TAG) {
                    let o = names.remove(pos);
                    names.insert(0, o);
                }
            }
            names
        }
    };

    let mut clients = Vec::new();
    for (id, parsed) in raw {
        let lookup = |name: &str| -> Result<usize> {
            label_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown label {name} in {id}")))
        };
        let instances: Vec<Vec<String>> = parsed.iter().map(|p| p.0.clone()).collect();
        let labels = match task {
            Task::Lm => None,
            Task::Classify if parsed.iter().all(|p| p.1.is_empty()) => None,
            Task::Classify => Some(Labels::PerInstance(
                parsed
                    .iter()
                    .map(|p| lookup(&p.1[0]))
                    .collect::<Result<_>>()?,
            )),
            Task::Tag => Some(Labels::PerToken(
                parsed
                    .iter()
                    .map(|p| p.1.iter().map(|t| lookup(t)).collect::<Result<_>>())
                    .collect::<Result<_>>()?,
            )),
        };
        clients.push(ClientCorpus::new(id, instances, labels)?);
    }
    Ok(Dataset {
        task,
        label_names,
        clients,
    })
}

type ParsedInstance = (Vec<String>, Vec<String>);

fn parse_client_text(text: &str, task: Task) -> Vec<ParsedInstance> {
    let mut out = Vec::new();
    match task {
        Task::Tag => {
            let mut toks = Vec::new();
            let mut tags = Vec::new();
            for line in text.lines() {
                if line.trim().is_empty() {
                    if !toks.is_empty() {
                        out.push((std::mem::take(&mut toks), std::mem::take(&mut tags)));
                    }
                    continue;
                }
                let mut parts = line.splitn(2, '\t');
                let tok = parts.next().unwrap_or_default().to_string();
                let tag = parts.next().unwrap_or(OUTSIDE_TAG).trim().to_string();
                toks.push(tok);
                tags.push(tag);
            }
            if !toks.is_empty() {
                out.push((toks, tags));
            }
        }
        Task::Classify => {
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                match line.split_once('\t') {
                    Some((label, body)) => out.push((tokenize(body, true), vec![label.to_string()])),
                    None => out.push((tokenize(line, true), Vec::new())),
                }
            }
        }
        Task::Lm => {
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                out.push((tokenize(line, true), Vec::new()));
            }
        }
    }
    out
}
