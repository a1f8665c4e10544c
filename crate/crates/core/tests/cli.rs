use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::thread::sleep;
use std::time::{Duration, Instant};

use serde_json::Value;

fn kyc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kyc"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn kyc")
}

fn ok_json(out: &Output) -> Value {
    assert_eq!(
        out.status.code(),
        Some(0),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(text.lines().last().expect("a JSON line")).expect("JSON stdout")
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text
        .lines()
        .rev()
        .find(|l| l.starts_with('{'))
        .unwrap_or_else(|| panic!("no JSON error line in {text}"));
    serde_json::from_str(line).unwrap()
}

/// Small generated dataset shared by the flow tests.
fn gen_data(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let out = kyc(
        &["gen-data", "--preset", "label_prior_shift", "--instances", "40", "--out", data.to_str().unwrap()],
        dir,
    );
    let v = ok_json(&out);
    assert_eq!(v["clients"], 8);
    assert_eq!(v["task"], "classify");
    assert!(data.join("manifest.json").exists());
    data
}

fn train(dir: &Path, data: &Path, combiner: &str, seed: u64, extra: &[&str]) -> Value {
    let seed = seed.to_string();
    let mut args = vec![
        "train",
        "--data",
        data.to_str().unwrap(),
        "--combiner",
        combiner,
        "--seed",
        &seed,
        "--epochs",
        "2",
        "--max-vocab",
        "300",
        "--out-root",
        "runs",
    ];
    args.extend_from_slice(extra);
    ok_json(&kyc(&args, dir))
}

#[test]
fn pipeline_from_generation_to_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = gen_data(dir);

    let k1 = train(dir, &data, "concat", 1, &[]);
    let k2 = train(dir, &data, "concat", 2, &[]);
    let b1 = train(dir, &data, "baseline", 1, &[]);
    let b2 = train(dir, &data, "baseline", 2, &[]);
    let run1 = dir.join(k1["run_dir"].as_str().unwrap());
    for f in ["model.kyc", "train_log.csv", "config.txt", "run.json"] {
        assert!(run1.join(f).exists(), "{f}");
    }
    let run_info: Value = serde_json::from_str(&std::fs::read_to_string(run1.join("run.json")).unwrap()).unwrap();
    assert_eq!(run_info["ood"], serde_json::json!(["c0", "c4"]));
    let log = std::fs::read_to_string(run1.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    // Same config, different seed: same hash prefix, different directory.
    let (d1, d2) = (k1["run_dir"].as_str().unwrap(), k2["run_dir"].as_str().unwrap());
    assert_ne!(d1, d2);
    assert_eq!(d1.rsplit_once("-seed").unwrap().0, d2.rsplit_once("-seed").unwrap().0);
    assert_ne!(d1, b1["run_dir"].as_str().unwrap());

    let mut evals = Vec::new();
    for run in [&k1, &k2, &b1, &b2] {
        let bundle = dir.join(run["bundle"].as_str().unwrap());
        let v = ok_json(&kyc(&["eval", "--bundle", bundle.to_str().unwrap()], dir));
        assert!(v["average"]["ID"].as_f64().unwrap() > 0.0);
        assert!(v["average"]["OOD"].as_f64().unwrap() > 0.0);
        let csv_path = dir.join(v["out"].as_str().unwrap());
        let csv = std::fs::read_to_string(&csv_path).unwrap();
        assert!(csv.starts_with("model,split,client,metric,value,n_units"));
        assert!(csv.lines().any(|l| l.contains(",OOD,c0,accuracy,")));
        assert_eq!(csv.lines().filter(|l| l.contains(",average,")).count(), 2);
        evals.push(csv_path);
    }

    let md = dir.join("sig.md");
    let v = ok_json(&kyc(
        &[
            "significance",
            "--a",
            &format!("{},{}", evals[2].display(), evals[3].display()),
            "--b",
            &format!("{},{}", evals[0].display(), evals[1].display()),
            "--decimals",
            "3",
            "--out",
            md.to_str().unwrap(),
        ],
        dir,
    ));
    assert_eq!(v["split"], "OOD");
    assert_eq!(v["model_a"], "Base");
    assert_eq!(v["model_b"], "KYC");
    let p = v["result"]["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert!(std::fs::read_to_string(&md).unwrap().contains("p-value"));

    let diag = dir.join("diag");
    let v = ok_json(&kyc(
        &[
            "diagnose",
            "--bundle",
            dir.join(b1["bundle"].as_str().unwrap()).to_str().unwrap(),
            "--bundle",
            dir.join(k1["bundle"].as_str().unwrap()).to_str().unwrap(),
            "--out",
            diag.to_str().unwrap(),
        ],
        dir,
    ));
    assert!(v["mean_tv"]["Base"].is_number());
    for f in ["label_proportions_c0.csv", "label_proportions_c4.csv", "length_bias_points.csv", "length_bias_fits.csv"] {
        assert!(diag.join(f).exists(), "{f}");
    }
}

#[test]
fn rerunning_a_run_overwrites_it_bit_for_bit() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = gen_data(dir);
    let first = train(dir, &data, "concat", 7, &[]);
    let run = dir.join(first["run_dir"].as_str().unwrap());
    let bundle = std::fs::read(run.join("model.kyc")).unwrap();
    ok_json(&kyc(&["eval", "--bundle", run.join("model.kyc").to_str().unwrap()], dir));
    let csv = std::fs::read(run.join("eval_both.csv")).unwrap();

    let second = train(dir, &data, "concat", 7, &[]);
    assert_eq!(first["run_dir"], second["run_dir"]);
    assert_eq!(first["model_version"], second["model_version"]);
    assert_eq!(std::fs::read(run.join("model.kyc")).unwrap(), bundle);
    ok_json(&kyc(&["eval", "--bundle", run.join("model.kyc").to_str().unwrap()], dir));
    assert_eq!(std::fs::read(run.join("eval_both.csv")).unwrap(), csv);
}

#[test]
fn config_file_is_read_and_flags_override_it() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = gen_data(dir);
    std::fs::write(
        dir.join("train.conf"),
        format!("# shared settings\ndata = {}\nepochs = 1\nlearning-rate = 0.002\nmax_vocab = 200\n", data.display()),
    )
    .unwrap();
    let v = ok_json(&kyc(&["train", "--config", "train.conf", "--epochs", "2", "--combiner", "deep"], dir));
    let run = dir.join(v["run_dir"].as_str().unwrap());
    let cfg = std::fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(cfg.contains("epochs=2"), "{cfg}");
    assert!(cfg.contains("learning_rate=0.002"), "{cfg}");
    assert!(cfg.contains("max_vocab=200"), "{cfg}");
    assert!(cfg.contains("combiner=deep"), "{cfg}");

    std::fs::write(dir.join("bad.conf"), "epochz = 3\n").unwrap();
    let out = kyc(&["train", "--config", "bad.conf", "--preset", "length_bias"], dir);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error_code"], "config");
}

#[test]
fn exit_codes_and_error_records() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let out = kyc(&[], dir);
    assert_eq!(out.status.code(), Some(1));
    let out = kyc(&["train", "--no-such-flag"], dir);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error_code"], "usage");
    let out = kyc(&["--help"], dir);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("gen-data"));

    let out = kyc(&["gen-data", "--preset", "bogus", "--out", "x"], dir);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error_code"], "unknown_preset");

    let out = kyc(&["eval", "--bundle", "missing.kyc", "--preset", "length_bias"], dir);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error_code"], "io");

    std::fs::write(dir.join("junk.kyc"), b"not a model").unwrap();
    let out = kyc(&["eval", "--bundle", "junk.kyc", "--preset", "length_bias"], dir);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error_code"], "bad_magic");

    let port = free_port();
    let server = format!("http://127.0.0.1:{port}");
    let out = kyc(&["predict", "--server", &server, "--text", "hello"], dir);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error_code"], "http");
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

struct KillOnDrop(Child);

impl Drop for KillOnDrop {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn wait_until_up(server: &str, dir: &Path) {
    let deadline = Instant::now() + Duration::from_secs(30);
    while Instant::now() < deadline {
        let out = kyc(&["predict", "--server", server, "--text", "ping"], dir);
        if out.status.success() {
            return;
        }
        sleep(Duration::from_millis(100));
    }
    panic!("server at {server} did not come up");
}

#[test]
fn serve_register_predict_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = gen_data(dir);
    let run = train(dir, &data, "concat", 1, &[]);
    let bundle = dir.join(run["bundle"].as_str().unwrap());
    let port = free_port();
    let server = format!("http://127.0.0.1:{port}");
    let child = Command::new(env!("CARGO_BIN_EXE_kyc"))
        .args(["serve", "--bundle", bundle.to_str().unwrap(), "--bind", &format!("127.0.0.1:{port}")])
        .current_dir(dir)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let _guard = KillOnDrop(child);
    wait_until_up(&server, dir);

    let client_dir = data.join("c0");
    let reg = ok_json(&kyc(&["register", "--server", &server, "--corpus", client_dir.to_str().unwrap()], dir));
    let id = reg["client_id"].as_str().unwrap().to_string();
    assert_eq!(id.len(), 32);
    assert_eq!(reg["sketch_variant"], "saliency");
    let again = ok_json(&kyc(&["register", "--server", &server, "--corpus", client_dir.to_str().unwrap()], dir));
    assert_eq!(again["client_id"], reg["client_id"]);

    let pred = ok_json(&kyc(&["predict", "--server", &server, "--client-id", &id, "--text", "a fine product"], dir));
    assert_eq!(pred["client_id"], id.as_str());
    let labels = pred["labels"].as_array().unwrap();
    assert_eq!(labels.len(), 1);
    assert!(["neg", "pos"].contains(&labels[0].as_str().unwrap()));

    let out = kyc(&["predict", "--server", &server, "--client-id", "nobody", "--text", "x"], dir);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unregistered_client"));

    let registry = std::fs::read_to_string(bundle.parent().unwrap().join("registry.jsonl")).unwrap();
    assert_eq!(registry.lines().count(), 1);
}
