use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

use kyc_core::corpus::ClientCorpus;
use kyc_core::datagen::{generate, preset};
use kyc_core::sketch::CountsPayload;
use kyc_core::train::{make_split, train, Hyperparams};
use kyc_ffi::*;

fn tiny_bundle(dir: &Path) -> (PathBuf, ClientCorpus) {
    let mut cfg = preset("label_prior_shift").unwrap();
    cfg.instances_per_client = 30;
    let ds = generate(&cfg).unwrap();
    let split = make_split(&ds, &cfg.ood_clients, 0.1, 1).unwrap();
    let hp = Hyperparams { epochs: 1, max_vocab: 300, ..Hyperparams::default() };
    let (bundle, _, _) = train(&split, &hp).unwrap();
    let path = dir.join("m.kyc");
    bundle.save(&path).unwrap();
    (path, ds.client("c0").unwrap().clone())
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(p: *mut c_char) -> String {
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    kyc_string_free(p);
    s
}

unsafe fn last_error() -> String {
    let p = kyc_last_error();
    assert!(!p.is_null());
    CStr::from_ptr(p).to_str().unwrap().to_string()
}

#[test]
fn register_and_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (bundle, corpus) = tiny_bundle(dir.path());
    let registry = dir.path().join("reg.jsonl");
    unsafe {
        assert_eq!(kyc_abi_version(), KYC_ABI_VERSION);
        let mut svc = ptr::null_mut();
        let b = cstr(bundle.to_str().unwrap());
        let r = cstr(registry.to_str().unwrap());
        assert_eq!(kyc_service_open(b.as_ptr(), r.as_ptr(), &mut svc), KycStatus::Ok);
        assert!(!svc.is_null());

        let mut vocab = ptr::null_mut();
        assert_eq!(kyc_vocab_json(svc, &mut vocab), KycStatus::Ok);
        let vocab: serde_json::Value = serde_json::from_str(&take(vocab)).unwrap();
        let words: Vec<String> = serde_json::from_value(vocab["words"].clone()).unwrap();
        assert_eq!(words.len(), kyc_vocab_size(svc));

        let v = kyc_core::vocab::Vocab::from_words(words).unwrap();
        let payload = CountsPayload::from_corpus(&corpus, &v).unwrap();
        let json = cstr(&serde_json::to_string(&payload).unwrap());
        let mut id = ptr::null_mut();
        assert_eq!(kyc_register_json(svc, json.as_ptr(), &mut id), KycStatus::Ok);
        let id = take(id);

        let mut id2 = ptr::null_mut();
        let n = payload.n_instances.unwrap();
        assert_eq!(
            kyc_register_counts(svc, payload.counts.as_ptr(), payload.counts.len(), n, &mut id2),
            KycStatus::Ok
        );
        assert_eq!(take(id2), id);

        let cid = cstr(&id);
        let text = cstr("pos1 w2 w3");
        let mut out = ptr::null_mut();
        assert_eq!(kyc_predict(svc, cid.as_ptr(), text.as_ptr(), &mut out), KycStatus::Ok);
        let first = take(out);
        let pred: serde_json::Value = serde_json::from_str(&first).unwrap();
        assert_eq!(pred["labels"].as_array().unwrap().len(), 1);

        let mut version = ptr::null_mut();
        assert_eq!(kyc_model_version(svc, &mut version), KycStatus::Ok);
        assert_eq!(take(version).len(), 16);
        kyc_service_free(svc);

        // Replayed registry serves the same client identically.
        let mut svc = ptr::null_mut();
        assert_eq!(kyc_service_open(b.as_ptr(), r.as_ptr(), &mut svc), KycStatus::Ok);
        let mut out = ptr::null_mut();
        assert_eq!(kyc_predict(svc, cid.as_ptr(), text.as_ptr(), &mut out), KycStatus::Ok);
        assert_eq!(take(out), first);
        kyc_service_free(svc);
    }
}

#[test]
fn failures_report_status_and_message() {
    let dir = tempfile::tempdir().unwrap();
    let (bundle, _) = tiny_bundle(dir.path());
    unsafe {
        let mut svc = ptr::null_mut();
        let missing = cstr(dir.path().join("nope.kyc").to_str().unwrap());
        assert_eq!(kyc_service_open(missing.as_ptr(), ptr::null(), &mut svc), KycStatus::Io);
        assert!(svc.is_null());
        assert!(last_error().starts_with("io"));

        let bytes = std::fs::read(&bundle).unwrap();
        let corrupt = dir.path().join("bad.kyc");
        std::fs::write(&corrupt, &bytes[..bytes.len() - 1]).unwrap();
        let c = cstr(corrupt.to_str().unwrap());
        assert_eq!(kyc_service_open(c.as_ptr(), ptr::null(), &mut svc), KycStatus::TruncatedTensorData);
        let mut bad = bytes.clone();
        bad[0] ^= 0xff;
        std::fs::write(&corrupt, &bad).unwrap();
        assert_eq!(kyc_service_open(c.as_ptr(), ptr::null(), &mut svc), KycStatus::BadMagic);

        let b = cstr(bundle.to_str().unwrap());
        assert_eq!(kyc_service_open(b.as_ptr(), ptr::null(), &mut svc), KycStatus::Ok);
        assert!(kyc_last_error().is_null());
        let mut out = ptr::null_mut();
        let unknown = cstr("deadbeef");
        let text = cstr("hello");
        assert_eq!(kyc_predict(svc, unknown.as_ptr(), text.as_ptr(), &mut out), KycStatus::UnregisteredClient);
        assert!(out.is_null());
        let anon = cstr("anonymous");
        let empty = cstr("  ");
        assert_eq!(kyc_predict(svc, anon.as_ptr(), empty.as_ptr(), &mut out), KycStatus::EmptyInstance);
        assert_eq!(kyc_predict(svc, anon.as_ptr(), ptr::null(), &mut out), KycStatus::NullArgument);
        assert_eq!(kyc_predict(ptr::null(), anon.as_ptr(), text.as_ptr(), &mut out), KycStatus::NullArgument);

        let zeros = vec![0u64; kyc_vocab_size(svc)];
        let mut id = ptr::null_mut();
        assert_eq!(kyc_register_counts(svc, zeros.as_ptr(), zeros.len(), 0, &mut id), KycStatus::EmptySketch);
        let wrong = cstr(r#"{"client_id":"x","vocab_hash":"00","counts":[1],"total":1}"#);
        assert_eq!(kyc_register_json(svc, wrong.as_ptr(), &mut id), KycStatus::VocabMismatch);
        let junk = cstr("{");
        assert_eq!(kyc_register_json(svc, junk.as_ptr(), &mut id), KycStatus::Json);
        kyc_service_free(svc);
        kyc_service_free(ptr::null_mut());
        kyc_string_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_the_abi() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/kyc.h")).unwrap();
    for name in [
        "kyc_abi_version",
        "kyc_last_error",
        "kyc_service_open",
        "kyc_service_free",
        "kyc_register_json",
        "kyc_register_counts",
        "kyc_predict",
        "kyc_vocab_size",
        "kyc_vocab_json",
        "kyc_model_version",
        "kyc_string_free",
        "KYC_STATUS_UNREGISTERED_CLIENT = 11",
        "typedef struct KycService KycService",
    ] {
        assert!(header.contains(name), "{name}");
    }
}

/// Compiles `examples/smoke.c` against the generated header and the static
/// library, then runs it. Skipped when no C compiler is on the path.
#[test]
fn c_program_links_and_runs() {
    use std::process::Command;
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("cc not found; skipping");
        return;
    }
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(Path::parent).unwrap();
    let lib = profile_dir.join("libkyc_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let (bundle, _) = tiny_bundle(dir.path());
    let bin = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(manifest.join("examples/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).arg(&bundle).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pred: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(pred["labels"].is_array());
}
