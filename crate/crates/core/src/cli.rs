//! The `kyc` command line.
//!
//! Every subcommand accepts `--config FILE` with `key=value` lines. Keys are
//! the long flag names with `-` replaced by `_`; `train` also accepts every
//! hyperparameter key. Flags given on the command line win over the file.
//!
//! Exit status is 0 on success, 1 on a usage error and 2 on a runtime error.
//! Errors go to stderr as one JSON object per line.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::bundle::ModelBundle;
use crate::corpus::{read_dataset, tokenize, write_dataset, ClientCorpus, Task, CORPUS_FILE};
use crate::datagen::{generate, preset};
use crate::error::{Error, Result};
use crate::eval::{
    ambiguous_token_report, ambiguous_tokens_csv, paired_t_test, significance_markdown, EvalSplit,
    MetricReport,
};
use crate::experiment::{
    evaluate, label_proportions, length_bias, load_data, mean_tv, run_dir, split_for, DataSource,
    Evaluation,
};
use crate::service::http::{serve, RegisterResponse, VocabResponse};
use crate::service::Service;
use crate::sketch::CountsPayload;
use crate::train::{make_split, train, Hyperparams, HYPERPARAM_KEYS};
use crate::vocab::Vocab;

pub const BUNDLE_FILE: &str = "model.kyc";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const RUN_FILE: &str = "run.json";
pub const CONFIG_FILE: &str = "config.txt";

#[derive(Parser, Debug)]
#[command(name = "kyc", version, about = "Client-sketch conditioned NLP: data, training, evaluation and serving")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic multi-client corpus from a preset.
    GenData(GenDataArgs),
    /// Train a model and write a bundle and training log to a run directory.
    Train(TrainArgs),
    /// Score a bundle on ID test portions and/or OOD clients.
    Eval(EvalArgs),
    /// Paired one-sided t-test over per-seed averages from eval CSVs.
    Significance(SignificanceArgs),
    /// Label-proportion, length-bias and ambiguous-token reports.
    Diagnose(DiagnoseArgs),
    /// Serve registration and prediction over HTTP.
    Serve(ServeArgs),
    /// Register a client corpus with a running server.
    Register(RegisterArgs),
    /// Ask a running server for a prediction.
    Predict(PredictArgs),
}

#[derive(Args, Debug, Default)]
pub struct DataArgs {
    /// Generate data in memory from this preset.
    #[arg(long)]
    pub preset: Option<String>,
    /// Override the preset's data seed.
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Read a dataset directory written by `gen-data`.
    #[arg(long, conflicts_with = "preset")]
    pub data: Option<PathBuf>,
    /// Comma-separated OOD clients; defaults to the generator's suggestion.
    #[arg(long, value_delimiter = ',')]
    pub ood: Option<Vec<String>>,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// baseline, concat, deep, decompose, moe_g or moe.
    #[arg(long)]
    pub combiner: Option<String>,
    /// saliency, tfidf, bbow or avg_length.
    #[arg(long)]
    pub sketch: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Sketch dropout probability, or `auto`.
    #[arg(long)]
    pub dropout: Option<String>,
    #[arg(long)]
    pub max_vocab: Option<usize>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Any hyperparameter as KEY=VALUE; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Parent directory of run directories.
    #[arg(long)]
    pub out_root: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// id, ood or both.
    #[arg(long)]
    pub split: Option<String>,
    /// Model tag in the report; defaults to the combiner's tag.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SignificanceArgs {
    /// Eval CSVs of the reference model, one per seed.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub a: Vec<PathBuf>,
    /// Eval CSVs of the candidate model, paired with `--a` by position.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub b: Vec<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub decimals: Option<usize>,
    /// Also write the markdown table here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    /// Bundles to compare; repeatable.
    #[arg(long, num_args = 1..)]
    pub bundle: Vec<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Split for label proportions: id or ood.
    #[arg(long)]
    pub split: Option<String>,
    /// Minimum per-client occurrences for the ambiguous-token report.
    #[arg(long)]
    pub min_count: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// JSON-lines registry; defaults to `registry.jsonl` beside the bundle.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long)]
    pub bind: Option<SocketAddr>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RegisterArgs {
    #[arg(long)]
    pub server: Option<String>,
    /// Client directory holding `corpus.txt`, or a plain text file with one
    /// instance per line.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Name sent with the counts; defaults to the file or directory name.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub server: Option<String>,
    #[arg(long)]
    pub client_id: Option<String>,
    #[arg(long)]
    pub text: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

const DEFAULT_SERVER: &str = "http://127.0.0.1:8080";
const DEFAULT_BIND: &str = "127.0.0.1:8080";

/// `key=value` lines; blank lines and `#` comments are ignored.
#[derive(Debug, Default)]
pub struct KvFile(BTreeMap<String, String>);

impl KvFile {
    pub fn parse(text: &str) -> Result<KvFile> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            map.insert(k.trim().replace('-', "_"), v.trim().to_string());
        }
        Ok(KvFile(map))
    }

    pub fn load(path: Option<&Path>) -> Result<KvFile> {
        match path {
            None => Ok(KvFile::default()),
            Some(p) => KvFile::parse(&fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?),
        }
    }

    fn check(&self, allowed: &[&str]) -> Result<()> {
        match self.0.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!("unknown config key {k}"))),
            None => Ok(()),
        }
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.0
            .get(key)
            .map(|v| v.parse().map_err(|e| Error::Config(format!("{key}={v}: {e}"))))
            .transpose()
    }

    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    fn list(&self, flag: Option<Vec<String>>, key: &str) -> Option<Vec<String>> {
        flag.or_else(|| {
            self.0
                .get(key)
                .map(|v| v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
        })
    }
}

fn required<T>(v: Option<T>, what: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("missing --{what}")))
}

const DATA_KEYS: [&str; 4] = ["preset", "data_seed", "data", "ood"];

struct ResolvedData {
    source: DataSource,
    ood: Vec<String>,
}

fn resolve_data(args: DataArgs, kv: &KvFile, fallback: Option<&RunInfo>) -> Result<ResolvedData> {
    let preset_name: Option<String> = kv.pick(args.preset, "preset")?;
    let data: Option<PathBuf> = kv.pick(args.data, "data")?;
    let seed: Option<u64> = kv.pick(args.data_seed, "data_seed")?;
    let ood = kv.list(args.ood, "ood");
    let source = match (preset_name, data) {
        (Some(_), Some(_)) => return Err(Error::Config("give either --preset or --data, not both".into())),
        (Some(name), None) => DataSource::Preset { name, seed },
        (None, Some(dir)) => DataSource::Dir(dir),
        (None, None) => match fallback {
            Some(run) => run.source()?,
            None => return Err(Error::Config("missing --preset or --data".into())),
        },
    };
    let ood = match (ood, fallback) {
        (Some(o), _) => o,
        (None, Some(run)) if run.source()? == source => run.ood.clone(),
        _ => load_data(&source)?.suggested_ood,
    };
    Ok(ResolvedData { source, ood })
}

/// Provenance written next to every trained bundle.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunInfo {
    pub preset: Option<String>,
    pub data_seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub ood: Vec<String>,
    pub seed: u64,
    pub model_version: String,
    pub selected_epoch: usize,
}

impl RunInfo {
    fn source(&self) -> Result<DataSource> {
        match (&self.preset, &self.data) {
            (Some(name), _) => Ok(DataSource::Preset { name: name.clone(), seed: self.data_seed }),
            (None, Some(dir)) => Ok(DataSource::Dir(dir.clone())),
            _ => Err(Error::Config("run info names no data source".into())),
        }
    }

    fn beside(bundle: &Path) -> Option<RunInfo> {
        let path = bundle.parent()?.join(RUN_FILE);
        serde_json::from_str(&fs::read_to_string(path).ok()?).ok()
    }
}

fn print_json(v: serde_json::Value) {
    println!("{v}");
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let kv = KvFile::load(args.config.as_deref())?;
    kv.check(&["preset", "seed", "instances", "out"])?;
    let name: String = required(kv.pick(args.preset, "preset")?, "preset")?;
    let out: PathBuf = required(kv.pick(args.out, "out")?, "out")?;
    let mut cfg = preset(&name)?;
    if let Some(s) = kv.pick(args.seed, "seed")? {
        cfg.seed = s;
    }
    if let Some(n) = kv.pick(args.instances, "instances")? {
        cfg.instances_per_client = n;
    }
    let ds = generate(&cfg)?;
    let mut generator = serde_json::to_value(&cfg)?;
    generator["preset"] = json!(name);
    write_dataset(&ds, &out, Some(generator))?;
    print_json(json!({"out": out, "clients": ds.clients.len(), "task": ds.task.as_str()}));
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<()> {
    let kv = KvFile::load(args.config.as_deref())?;
    let mut allowed: Vec<&str> = HYPERPARAM_KEYS.to_vec();
    allowed.extend(DATA_KEYS);
    allowed.extend(["out_root", "lr", "sketch", "dropout"]);
    kv.check(&allowed)?;
    let mut hp = Hyperparams::default();
    for (k, v) in &kv.0 {
        match k.as_str() {
            "dropout" => hp.set("dropout_p", v)?,
            k if DATA_KEYS.contains(&k) || k == "out_root" => {}
            k => hp.set(k, v)?,
        }
    }
    let flags: [(&str, Option<String>); 9] = [
        ("combiner", args.combiner),
        ("sketch_variant", args.sketch),
        ("seed", args.seed.map(|v| v.to_string())),
        ("learning_rate", args.lr.map(|v| v.to_string())),
        ("epochs", args.epochs.map(|v| v.to_string())),
        ("batch_size", args.batch_size.map(|v| v.to_string())),
        ("dropout_p", args.dropout),
        ("max_vocab", args.max_vocab.map(|v| v.to_string())),
        ("val_fraction", args.val_fraction.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            hp.set(k, &v)?;
        }
    }
    for s in &args.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set {s}: expected KEY=VALUE")))?;
        hp.set(k, v)?;
    }
    hp.validate()?;
    let root: PathBuf = kv.pick(args.out_root, "out_root")?.unwrap_or_else(|| PathBuf::from("runs"));
    let data = resolve_data(args.data, &kv, None)?;
    let loaded = load_data(&data.source)?;
    let split = make_split(&loaded.dataset, &data.ood, hp.val_fraction, hp.seed)?;
    let (bundle, log, _) = train(&split, &hp)?;
    let dir = run_dir(&root, &data.source, &data.ood, &hp);
    fs::create_dir_all(&dir)?;
    let bundle_path = dir.join(BUNDLE_FILE);
    bundle.save(&bundle_path)?;
    fs::write(dir.join(TRAIN_LOG_FILE), log.to_csv())?;
    fs::write(dir.join(CONFIG_FILE), hp.to_kv())?;
    let (preset_name, data_seed, data_dir) = match &data.source {
        DataSource::Preset { name, seed } => (Some(name.clone()), *seed, None),
        DataSource::Dir(d) => (None, None, Some(d.clone())),
    };
    let info = RunInfo {
        preset: preset_name,
        data_seed,
        data: data_dir,
        ood: data.ood.clone(),
        seed: hp.seed,
        model_version: bundle.fingerprint()?,
        selected_epoch: log.selected_epoch,
    };
    fs::write(dir.join(RUN_FILE), serde_json::to_string_pretty(&info)?)?;
    let val = log.epochs.get(log.selected_epoch.saturating_sub(1)).map(|e| e.val_metric);
    print_json(json!({
        "run_dir": dir,
        "bundle": bundle_path,
        "model_version": info.model_version,
        "selected_epoch": log.selected_epoch,
        "val_metric": val,
    }));
    Ok(())
}

fn parse_splits(s: Option<String>, default: &str) -> Result<Vec<EvalSplit>> {
    let s = s.unwrap_or_else(|| default.to_string());
    match s.to_ascii_lowercase().as_str() {
        "both" | "all" => Ok(vec![EvalSplit::Id, EvalSplit::Ood]),
        other => Ok(vec![other.parse().map_err(|_| Error::Config(format!("unknown split {other}")))?]),
    }
}

fn evaluation_for(bundle_path: &Path, data: DataArgs, kv: &KvFile, model: Option<String>) -> Result<Evaluation> {
    let bundle = ModelBundle::load(bundle_path)?;
    let info = RunInfo::beside(bundle_path);
    let data = resolve_data(data, kv, info.as_ref())?;
    let loaded = load_data(&data.source)?;
    let split = split_for(&bundle, &loaded.dataset, &data.ood)?;
    let tag = model.unwrap_or_else(|| bundle.params.config.combiner.model_tag().to_string());
    evaluate(&bundle, &split, &tag)
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let kv = KvFile::load(args.config.as_deref())?;
    let mut allowed = DATA_KEYS.to_vec();
    allowed.extend(["bundle", "split", "model", "out"]);
    kv.check(&allowed)?;
    let bundle_path: PathBuf = required(kv.pick(args.bundle, "bundle")?, "bundle")?;
    let split_arg: Option<String> = kv.pick(args.split, "split")?;
    let split_name = split_arg.clone().unwrap_or_else(|| "both".into()).to_ascii_lowercase();
    let splits = parse_splits(split_arg, "both")?;
    let model: Option<String> = kv.pick(args.model, "model")?;
    let eval = evaluation_for(&bundle_path, args.data, &kv, model)?;
    let reports = splits.iter().map(|&s| eval.report(s)).collect::<Result<Vec<_>>>()?;
    let out: PathBuf = match kv.pick(args.out, "out")? {
        Some(p) => p,
        None => bundle_path
            .parent()
            .unwrap_or(Path::new("."))
            .join(format!("eval_{split_name}.csv")),
    };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&out, MetricReport::to_csv(&reports)?)?;
    let summary: serde_json::Map<String, serde_json::Value> = reports
        .iter()
        .map(|r| (r.split.to_string(), json!(r.average())))
        .collect();
    print_json(json!({"out": out, "model": eval.model, "metric": reports[0].metric, "average": summary}));
    Ok(())
}

fn average_from(path: &Path, split: EvalSplit) -> Result<(String, f64, String)> {
    let text = fs::read_to_string(path)?;
    let reports = MetricReport::from_csv(&text)?;
    let r = reports
        .into_iter()
        .find(|r| r.split == split)
        .ok_or_else(|| Error::Csv(format!("{} has no {split} rows", path.display())))?;
    Ok((r.model.clone(), r.average(), r.metric))
}

fn run_significance(args: SignificanceArgs) -> Result<()> {
    let kv = KvFile::load(args.config.as_deref())?;
    kv.check(&["a", "b", "split", "decimals", "out"])?;
    let paths = |flag: Vec<PathBuf>, key: &str| -> Vec<PathBuf> {
        if flag.is_empty() {
            kv.list(None, key).unwrap_or_default().into_iter().map(PathBuf::from).collect()
        } else {
            flag
        }
    };
    let (pa, pb) = (paths(args.a, "a"), paths(args.b, "b"));
    if pa.len() < 2 || pa.len() != pb.len() {
        return Err(Error::Config(format!(
            "need the same number (at least 2) of --a and --b files, got {} and {}",
            pa.len(),
            pb.len()
        )));
    }
    let split = parse_splits(kv.pick(args.split, "split")?, "ood")?;
    let [split] = split[..] else {
        return Err(Error::Config("significance needs a single split".into()));
    };
    let read = |ps: &[PathBuf]| ps.iter().map(|p| average_from(p, split)).collect::<Result<Vec<_>>>();
    let (ra, rb) = (read(&pa)?, read(&pb)?);
    let metric = ra[0].2.clone();
    let a: Vec<f64> = ra.iter().map(|r| r.1).collect();
    let b: Vec<f64> = rb.iter().map(|r| r.1).collect();
    let res = paired_t_test(&a, &b)?;
    let decimals: usize = kv.pick(args.decimals, "decimals")?.unwrap_or(4);
    let table = significance_markdown(&metric, &ra[0].0, &rb[0].0, &[(split.to_string(), res.clone())], decimals);
    if let Some(out) = kv.pick::<PathBuf>(args.out, "out")? {
        fs::write(out, &table)?;
    }
    print_json(json!({
        "metric": metric,
        "split": split.to_string(),
        "model_a": ra[0].0,
        "model_b": rb[0].0,
        "alternative": "b > a (one-sided)",
        "result": res,
    }));
    Ok(())
}

fn run_diagnose(args: DiagnoseArgs) -> Result<()> {
    let kv = KvFile::load(args.config.as_deref())?;
    let mut allowed = DATA_KEYS.to_vec();
    allowed.extend(["bundle", "split", "min_count", "out"]);
    kv.check(&allowed)?;
    let bundles: Vec<PathBuf> = if args.bundle.is_empty() {
        kv.list(None, "bundle").unwrap_or_default().into_iter().map(PathBuf::from).collect()
    } else {
        args.bundle
    };
    if bundles.is_empty() {
        return Err(Error::Config("missing --bundle".into()));
    }
    let out: PathBuf = required(kv.pick(args.out, "out")?, "out")?;
    let split = parse_splits(kv.pick(args.split, "split")?, "ood")?;
    let [split] = split[..] else {
        return Err(Error::Config("diagnose needs a single split".into()));
    };
    let min_count: usize = kv.pick(args.min_count, "min_count")?.unwrap_or(20);
    let info = RunInfo::beside(&bundles[0]);
    let data = resolve_data(args.data, &kv, info.as_ref())?;
    let loaded = load_data(&data.source)?;
    let mut evals = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for path in &bundles {
        let bundle = ModelBundle::load(path)?;
        let split = split_for(&bundle, &loaded.dataset, &data.ood)?;
        let base = bundle.params.config.combiner.model_tag().to_string();
        let n = seen.entry(base.clone()).or_insert(0);
        *n += 1;
        let tag = if *n == 1 { base } else { format!("{base}#{n}") };
        evals.push(evaluate(&bundle, &split, &tag)?);
    }
    fs::create_dir_all(&out)?;
    let mut written = Vec::new();
    let task = loaded.dataset.task;
    let mut tv = serde_json::Map::new();
    if task != Task::Lm {
        let reports = label_proportions(&evals, split)?;
        for r in &reports {
            let p = out.join(format!("label_proportions_{}.csv", r.client));
            fs::write(&p, r.to_csv()?)?;
            written.push(p);
        }
        for e in &evals {
            tv.insert(e.model.clone(), json!(mean_tv(&reports, &e.model)));
        }
    }
    if task == Task::Classify {
        let lb = length_bias(&evals)?;
        let (pp, pf) = (out.join("length_bias_points.csv"), out.join("length_bias_fits.csv"));
        fs::write(&pp, lb.points_csv()?)?;
        fs::write(&pf, lb.fits_csv()?)?;
        written.extend([pp, pf]);
    }
    if task == Task::Tag {
        let report = ambiguous_token_report(&loaded.dataset.clients, &loaded.dataset.label_names, min_count)?;
        let p = out.join("ambiguous_tokens.csv");
        fs::write(&p, ambiguous_tokens_csv(&report)?)?;
        written.push(p);
    }
    print_json(json!({"written": written, "mean_tv": tv, "split": split.to_string()}));
    Ok(())
}

fn run_serve(args: ServeArgs) -> Result<()> {
    let kv = KvFile::load(args.config.as_deref())?;
    kv.check(&["bundle", "registry", "bind"])?;
    let bundle_path: PathBuf = required(kv.pick(args.bundle, "bundle")?, "bundle")?;
    let registry: PathBuf = kv.pick(args.registry, "registry")?.unwrap_or_else(|| {
        bundle_path.parent().unwrap_or(Path::new(".")).join("registry.jsonl")
    });
    let bind: SocketAddr = kv
        .pick(args.bind, "bind")?
        .unwrap_or_else(|| DEFAULT_BIND.parse().expect("default bind address"));
    let service = Arc::new(Service::open(ModelBundle::load(&bundle_path)?, &registry)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(serve(service, bind, shutdown_signal()))
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(30)))
        .build()
        .into()
}

/// Sends a request and decodes the body, turning error bodies from the
/// server into `Error::Http`.
fn http_json<T: serde::de::DeserializeOwned>(
    result: std::result::Result<ureq::http::Response<ureq::Body>, ureq::Error>,
) -> Result<T> {
    let mut resp = result.map_err(|e| Error::Http(e.to_string()))?;
    let status = resp.status();
    let text = resp.body_mut().read_to_string().map_err(|e| Error::Http(e.to_string()))?;
    if !status.is_success() {
        return Err(Error::Http(format!("server returned {status}: {text}")));
    }
    Ok(serde_json::from_str(&text)?)
}

/// Reads a client directory (`corpus.txt`) or a plain text file and
/// tokenizes it the way the server does.
fn read_client_text(path: &Path) -> Result<Vec<Vec<String>>> {
    let file = if path.is_dir() { path.join(CORPUS_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file)?;
    if path.is_dir() {
        if let Some(root) = path.parent() {
            if let Ok(ds) = read_dataset(root, None) {
                let id = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                if let Some(c) = ds.client(&id) {
                    return Ok(c.instances.clone());
                }
            }
        }
    }
    Ok(text
        .lines()
        .map(|l| tokenize(l, false))
        .filter(|t| !t.is_empty())
        .collect())
}

fn run_register(args: RegisterArgs) -> Result<()> {
    let kv = KvFile::load(args.config.as_deref())?;
    kv.check(&["server", "corpus", "name"])?;
    let server: String = kv.pick(args.server, "server")?.unwrap_or_else(|| DEFAULT_SERVER.into());
    let path: PathBuf = required(kv.pick(args.corpus, "corpus")?, "corpus")?;
    let name: String = kv.pick(args.name, "name")?.unwrap_or_else(|| {
        path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    });
    let instances = read_client_text(&path)?;
    let agent = agent();
    let server = server.trim_end_matches('/');
    let vocab: VocabResponse = http_json(agent.get(format!("{server}/vocab")).call())?;
    let v = Vocab::from_words(vocab.words)?;
    if v.hash() != vocab.vocab_hash {
        return Err(Error::VocabMismatch { payload: v.hash(), model: vocab.vocab_hash });
    }
    let corpus = ClientCorpus::unlabeled(name, instances)?;
    let payload = CountsPayload::from_corpus(&corpus, &v)?;
    let resp: RegisterResponse = http_json(agent.post(format!("{server}/register")).send_json(&payload))?;
    print_json(serde_json::to_value(resp)?);
    Ok(())
}

fn run_predict(args: PredictArgs) -> Result<()> {
    let kv = KvFile::load(args.config.as_deref())?;
    kv.check(&["server", "client_id", "text"])?;
    let server: String = kv.pick(args.server, "server")?.unwrap_or_else(|| DEFAULT_SERVER.into());
    let client_id: String = kv.pick(args.client_id, "client_id")?.unwrap_or_else(|| "anonymous".into());
    let text: String = required(kv.pick(args.text, "text")?, "text")?;
    let body = json!({"client_id": client_id, "text": text});
    let resp: serde_json::Value =
        http_json(agent().post(format!("{}/predict", server.trim_end_matches('/'))).send_json(&body))?;
    print_json(resp);
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Significance(a) => run_significance(a),
        Command::Diagnose(a) => run_diagnose(a),
        Command::Serve(a) => run_serve(a),
        Command::Register(a) => run_register(a),
        Command::Predict(a) => run_predict(a),
    }
}

fn error_line(code: &str, message: &str) -> String {
    json!({"error_code": code, "message": message}).to_string()
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                print!("{e}");
                return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { 1 } else { 0 };
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first));
            return 1;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(e.code(), &e.to_string()));
            match e {
                Error::Config(_) => 1,
                _ => 2,
            }
        }
    }
}
