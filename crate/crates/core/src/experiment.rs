//! Glue between data, training, evaluation and the diagnostic reports:
//! everything the CLI and the acceptance runs share.

use std::fmt;
use std::path::{Path, PathBuf};

use sha2::{Digest as _, Sha256};

use crate::bundle::ModelBundle;
use crate::corpus::{read_dataset, Dataset, Task, MANIFEST_FILE};
use crate::datagen::{generate, preset};
use crate::error::{Error, Result};
use crate::eval::{
    label_proportion_report, length_bias_report, EvalSplit, LabelProportionReport, LengthBiasReport,
    LengthPoint, MetricReport, MetricRow,
};
use crate::train::{make_split, predict_all, task_metric, ClientPredictions, EncodedClient, Hyperparams, Split};

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// Generated in memory; `seed` overrides the preset's data seed.
    Preset { name: String, seed: Option<u64> },
    Dir(PathBuf),
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Preset { name, seed: None } => write!(f, "preset:{name}"),
            DataSource::Preset { name, seed: Some(s) } => write!(f, "preset:{name}:{s}"),
            DataSource::Dir(p) => write!(f, "dir:{}", p.display()),
        }
    }
}

/// A dataset plus the OOD clients its generator suggests (if any).
pub struct LoadedData {
    pub dataset: Dataset,
    pub suggested_ood: Vec<String>,
}

pub fn load_data(source: &DataSource) -> Result<LoadedData> {
    match source {
        DataSource::Preset { name, seed } => {
            let mut cfg = preset(name)?;
            if let Some(s) = seed {
                cfg.seed = *s;
            }
            Ok(LoadedData {
                dataset: generate(&cfg)?,
                suggested_ood: cfg.ood_clients,
            })
        }
        DataSource::Dir(dir) => {
            let dataset = read_dataset(dir, None)?;
            let manifest: serde_json::Value =
                serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
            let suggested_ood = manifest["generator"]["ood_clients"]
                .as_array()
                .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
                .unwrap_or_default();
            Ok(LoadedData { dataset, suggested_ood })
        }
    }
}

/// Short hash naming a run: data source, OOD list and every hyperparameter
/// except the seed.
pub fn config_hash(source: &DataSource, ood: &[String], hp: &Hyperparams) -> String {
    let mut unseeded = hp.clone();
    unseeded.seed = 0;
    let mut h = Sha256::new();
    h.update(source.to_string().as_bytes());
    h.update(b"\nood=");
    h.update(ood.join(",").as_bytes());
    h.update(b"\n");
    h.update(unseeded.to_kv().as_bytes());
    h.finalize()[..6].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn run_dir(root: &Path, source: &DataSource, ood: &[String], hp: &Hyperparams) -> PathBuf {
    root.join(format!("{}-seed{}", config_hash(source, ood, hp), hp.seed))
}

/// Name of the task metric in reports.
pub fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Classify => "accuracy",
        Task::Tag => "macro_f1",
        Task::Lm => "perplexity",
    }
}

/// Rebuilds the split a bundle was trained on.
pub fn split_for(bundle: &ModelBundle, dataset: &Dataset, ood: &[String]) -> Result<Split> {
    let hp = &bundle.hyperparams;
    if dataset.task != bundle.params.config.task {
        return Err(Error::InvalidArgument(format!(
            "bundle is a {} model but the data is for {}",
            bundle.params.config.task.as_str(),
            dataset.task.as_str()
        )));
    }
    make_split(dataset, ood, hp.val_fraction, hp.seed)
}

/// Per-client predictions on the ID test portions and the OOD clients.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub model: String,
    pub task: Task,
    pub label_names: Vec<String>,
    pub id: Vec<ClientPredictions>,
    pub ood: Vec<ClientPredictions>,
}

impl Evaluation {
    pub fn split(&self, split: EvalSplit) -> &[ClientPredictions] {
        match split {
            EvalSplit::Id => &self.id,
            EvalSplit::Ood => &self.ood,
        }
    }

    /// Metric over all clients of a split pooled together.
    pub fn pooled(&self, split: EvalSplit) -> Result<f64> {
        task_metric(self.task, &self.label_names, self.split(split))
    }

    pub fn report(&self, split: EvalSplit) -> Result<MetricReport> {
        let rows = self
            .split(split)
            .iter()
            .map(|p| {
                Ok(MetricRow {
                    client: p.client_id.clone(),
                    value: task_metric(self.task, &self.label_names, std::slice::from_ref(p))?,
                    n_units: p.nll.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MetricReport {
            model: self.model.clone(),
            split,
            metric: metric_name(self.task).to_string(),
            rows,
        })
    }
}

/// Scores `bundle` using its own vocabulary and frozen sketch context. ID
/// clients are sketched from their training portion, OOD clients from
/// their full corpus.
pub fn evaluate(bundle: &ModelBundle, split: &Split, model: &str) -> Result<Evaluation> {
    let task = split.task;
    let enc = |c, src| EncodedClient::new(c, src, &bundle.vocab, &bundle.sketcher, task);
    let id = split
        .train_clients
        .iter()
        .map(|c| enc(&c.test, &c.train))
        .collect::<Result<Vec<_>>>()?;
    let ood = split.ood_clients.iter().map(|c| enc(c, c)).collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        model: model.to_string(),
        task,
        label_names: split.label_names.clone(),
        id: predict_all(&bundle.params, &id)?,
        ood: predict_all(&bundle.params, &ood)?,
    })
}

/// One report per client of `split`, comparing gold label proportions with
/// every model's predictions.
pub fn label_proportions(evals: &[Evaluation], split: EvalSplit) -> Result<Vec<LabelProportionReport>> {
    let first = evals
        .first()
        .ok_or_else(|| Error::InvalidArgument("need at least one model".into()))?;
    first
        .split(split)
        .iter()
        .enumerate()
        .map(|(ci, client)| {
            let preds: Vec<(String, Vec<usize>)> = evals
                .iter()
                .map(|e| (e.model.clone(), e.split(split)[ci].flat_preds()))
                .collect();
            label_proportion_report(&client.client_id, &first.label_names, &client.flat_golds(), &preds)
        })
        .collect()
}

/// Mean TV distance over the clients of one split for `model`.
pub fn mean_tv(reports: &[LabelProportionReport], model: &str) -> Option<f64> {
    let tvs: Vec<f64> = reports.iter().filter_map(|r| r.tv_for(model)).collect();
    (!tvs.is_empty()).then(|| tvs.iter().sum::<f64>() / tvs.len() as f64)
}

/// Index of the positive class: the label named `pos`, else label 1.
pub fn positive_label(label_names: &[String]) -> usize {
    label_names.iter().position(|l| l == "pos").unwrap_or(1)
}

fn frac(labels: &[usize], positive: usize) -> f64 {
    labels.iter().filter(|&&l| l == positive).count() as f64 / labels.len().max(1) as f64
}

/// Length-versus-positive-rate points for every client of both splits, for
/// each model and for the gold labels (model `gold`).
pub fn length_bias(evals: &[Evaluation]) -> Result<LengthBiasReport> {
    let first = evals
        .first()
        .ok_or_else(|| Error::InvalidArgument("need at least one model".into()))?;
    if first.task != Task::Classify {
        return Err(Error::InvalidArgument("length bias needs a classification model".into()));
    }
    let pos = positive_label(&first.label_names);
    let mut points = Vec::new();
    for split in [EvalSplit::Id, EvalSplit::Ood] {
        for (ci, c) in first.split(split).iter().enumerate() {
            points.push(LengthPoint {
                client: c.client_id.clone(),
                model: "gold".into(),
                mean_length: c.mean_length,
                frac_positive: frac(&c.flat_golds(), pos),
            });
            for e in evals {
                let p = &e.split(split)[ci];
                points.push(LengthPoint {
                    client: p.client_id.clone(),
                    model: e.model.clone(),
                    mean_length: p.mean_length,
                    frac_positive: frac(&p.flat_preds(), pos),
                });
            }
        }
    }
    length_bias_report(&points)
}

/// Gold and predicted positive rates for one client.
pub fn positive_rates(eval: &Evaluation, client: &str) -> Option<(f64, f64)> {
    let pos = positive_label(&eval.label_names);
    eval.id
        .iter()
        .chain(&eval.ood)
        .find(|c| c.client_id == client)
        .map(|c| (frac(&c.flat_golds(), pos), frac(&c.flat_preds(), pos)))
}
