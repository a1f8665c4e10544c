//! C ABI over `kyc-core`.
//!
//! A `KycService` handle owns a loaded model bundle and its client registry.
//! Every function returns a `KycStatus`; on failure a message is available
//! from `kyc_last_error` on the same thread. Strings returned through out
//! parameters are owned by the caller and released with `kyc_string_free`.
//! Handles may be shared across threads.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use kyc_core::bundle::ModelBundle;
use kyc_core::service::Service;
use kyc_core::sketch::CountsPayload;
use kyc_core::Error;

/// Bumped whenever a signature or status value changes.
pub const KYC_ABI_VERSION: u32 = 1;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KycStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    BadMagic = 4,
    VersionMismatch = 5,
    TruncatedHeader = 6,
    TruncatedTensorData = 7,
    HeaderMismatch = 8,
    VocabMismatch = 9,
    EmptySketch = 10,
    UnregisteredClient = 11,
    EmptyInstance = 12,
    InvalidArgument = 13,
    Json = 14,
    Panic = 15,
    Internal = 16,
}

impl From<&Error> for KycStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io(_) => KycStatus::Io,
            Error::BadMagic => KycStatus::BadMagic,
            Error::VersionMismatch { .. } => KycStatus::VersionMismatch,
            Error::TruncatedHeader => KycStatus::TruncatedHeader,
            Error::TruncatedTensorData { .. } => KycStatus::TruncatedTensorData,
            Error::HeaderMismatch(_) => KycStatus::HeaderMismatch,
            Error::VocabMismatch { .. } => KycStatus::VocabMismatch,
            Error::EmptySketch => KycStatus::EmptySketch,
            Error::UnregisteredClient(_) => KycStatus::UnregisteredClient,
            Error::EmptyInstance => KycStatus::EmptyInstance,
            Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => KycStatus::InvalidArgument,
            Error::Json(_) => KycStatus::Json,
            _ => KycStatus::Internal,
        }
    }
}

/// Opaque handle.
pub struct KycService {
    inner: Service,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(KycStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(KycStatus::from(&e), format!("{}: {e}", e.code()))
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KycStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KycStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside kyc");
            KycStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(KycStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(KycStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn service<'a>(p: *const KycService) -> Result<&'a Service, Failure> {
    p.as_ref()
        .map(|s| &s.inner)
        .ok_or_else(|| Failure(KycStatus::NullArgument, "service is null".into()))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(KycStatus::NullArgument, "output pointer is null".into()));
    }
    let c = CString::new(s).map_err(|_| Failure(KycStatus::Internal, "interior NUL in output".into()))?;
    *out = c.into_raw();
    Ok(())
}

#[no_mangle]
pub extern "C" fn kyc_abi_version() -> u32 {
    KYC_ABI_VERSION
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next kyc call on the same thread.
#[no_mangle]
pub extern "C" fn kyc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a bundle. `registry_path` may be NULL for an in-memory registry;
/// otherwise the JSON-lines registry there is replayed and appended to.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kyc_service_open(
    bundle_path: *const c_char,
    registry_path: *const c_char,
    out: *mut *mut KycService,
) -> KycStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(KycStatus::NullArgument, "out is null".into()));
        }
        *out = ptr::null_mut();
        let bundle = ModelBundle::load(Path::new(str_arg(bundle_path, "bundle_path")?))?;
        let inner = if registry_path.is_null() {
            Service::new(bundle)?
        } else {
            Service::open(bundle, Path::new(str_arg(registry_path, "registry_path")?))?
        };
        *out = Box::into_raw(Box::new(KycService { inner }));
        Ok(())
    })
}

/// # Safety
/// `svc` must come from `kyc_service_open` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kyc_service_free(svc: *mut KycService) {
    if !svc.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(svc))));
    }
}

/// Registers a counts payload given as JSON
/// (`{"client_id", "vocab_hash", "counts", "total", "n_instances"?}`) and
/// returns the content-addressed client id.
///
/// # Safety
/// Pointers must be valid; `out_client_id` receives a string for `kyc_string_free`.
#[no_mangle]
pub unsafe extern "C" fn kyc_register_json(
    svc: *const KycService,
    payload_json: *const c_char,
    out_client_id: *mut *mut c_char,
) -> KycStatus {
    guard(|| {
        let svc = service(svc)?;
        let payload: CountsPayload = serde_json::from_str(str_arg(payload_json, "payload_json")?)
            .map_err(Error::from)?;
        let rec = svc.register(&payload)?;
        write_string(out_client_id, rec.client_id.clone())
    })
}

/// Registers raw counts over the model vocabulary (`n_counts` must equal
/// the vocabulary size). `n_instances` may be 0 when unknown.
///
/// # Safety
/// `counts` must point to `n_counts` readable values.
#[no_mangle]
pub unsafe extern "C" fn kyc_register_counts(
    svc: *const KycService,
    counts: *const u64,
    n_counts: usize,
    n_instances: u64,
    out_client_id: *mut *mut c_char,
) -> KycStatus {
    guard(|| {
        let svc = service(svc)?;
        if counts.is_null() {
            return Err(Failure(KycStatus::NullArgument, "counts is null".into()));
        }
        let counts = std::slice::from_raw_parts(counts, n_counts).to_vec();
        let total = counts.iter().sum();
        let payload = CountsPayload {
            client_id: String::new(),
            vocab_hash: svc.vocab_hash().to_string(),
            counts,
            total,
            n_instances: (n_instances > 0).then_some(n_instances),
        };
        let rec = svc.register(&payload)?;
        write_string(out_client_id, rec.client_id.clone())
    })
}

/// Predicts for one instance of text. `client_id` may be `"anonymous"`.
/// The result is JSON: `{"client_id", "labels": [...], "scores": [[...]]}`.
///
/// # Safety
/// Pointers must be valid; `out_json` receives a string for `kyc_string_free`.
#[no_mangle]
pub unsafe extern "C" fn kyc_predict(
    svc: *const KycService,
    client_id: *const c_char,
    text: *const c_char,
    out_json: *mut *mut c_char,
) -> KycStatus {
    guard(|| {
        let svc = service(svc)?;
        let pred = svc.predict_text(str_arg(client_id, "client_id")?, str_arg(text, "text")?)?;
        write_string(out_json, serde_json::to_string(&pred).map_err(Error::from)?)
    })
}

/// Vocabulary size expected by `kyc_register_counts`, or 0 for NULL.
///
/// # Safety
/// `svc` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kyc_vocab_size(svc: *const KycService) -> usize {
    svc.as_ref().map_or(0, |s| s.inner.bundle().vocab.size())
}

/// Vocabulary as JSON: `{"words": [...], "vocab_hash": "..."}`.
///
/// # Safety
/// Pointers must be valid; `out_json` receives a string for `kyc_string_free`.
#[no_mangle]
pub unsafe extern "C" fn kyc_vocab_json(svc: *const KycService, out_json: *mut *mut c_char) -> KycStatus {
    guard(|| {
        let svc = service(svc)?;
        let v = serde_json::json!({"words": svc.bundle().vocab.words(), "vocab_hash": svc.vocab_hash()});
        write_string(out_json, v.to_string())
    })
}

/// Short content hash of the loaded bundle.
///
/// # Safety
/// Pointers must be valid; `out` receives a string for `kyc_string_free`.
#[no_mangle]
pub unsafe extern "C" fn kyc_model_version(svc: *const KycService, out: *mut *mut c_char) -> KycStatus {
    guard(|| {
        let svc = service(svc)?;
        write_string(out, svc.model_version().to_string())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn kyc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
