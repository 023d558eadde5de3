//! C ABI for the consent engine.
//!
//! Every function returns a [`CeStatus`]. Outputs go through out-pointers.
//! Strings handed back to the caller are NUL-terminated, UTF-8, and owned by
//! the caller, who releases them with [`ce_string_free`]. Structured inputs
//! and outputs are JSON. On failure a message is available from
//! [`ce_last_error`] on the calling thread.
//!
//! An engine handle is not thread-safe: use one handle per thread or
//! serialize calls externally.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};


use consentchain::authz::AccessRequest;
use consentchain::cli::Settings;
use consentchain::contract::ContractError;
use consentchain::engine::IntegrityStatus;
use consentchain::ledger::{verify_dump, ChainStatus, LedgerError};
use consentchain::provenance::{ExportFormat, OrientationQuery, ProvenanceGraph};
use consentchain::{ConsentEngine, EngineError, InformedConsent, LogicalTime, Ppa};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CeStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    Conflict = 4,
    ValidationFailed = 5,
    UnknownId = 6,
    Tampered = 7,
    Incomplete = 8,
    Duplicate = 9,
    LedgerError = 10,
    Reverted = 11,
    Internal = 12,
}

/// Opaque engine handle.
pub struct CeEngine {
    inner: ConsentEngine,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("interior NULs removed"));
}

struct Failure(CeStatus, String);

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::IncompletePpa(_) => CeStatus::Incomplete,
            EngineError::DuplicatePpaId(_) => CeStatus::Duplicate,
            EngineError::PpaConflict { .. } => CeStatus::Conflict,
            EngineError::UnknownPpa(_) | EngineError::UnknownPatient(_) => CeStatus::UnknownId,
            EngineError::TamperedPpa(_) => CeStatus::Tampered,
            EngineError::Reverted { .. } => CeStatus::Reverted,
            EngineError::Contract(c) => match c {
                ContractError::UnknownConsent(_) | ContractError::UnknownContainer(_) => CeStatus::UnknownId,
                ContractError::ConsentConflict(_) => CeStatus::Conflict,
                ContractError::ValidationFailed(_) | ContractError::PatientMismatch { .. } => {
                    CeStatus::ValidationFailed
                }
                ContractError::DuplicateConsentId(_)
                | ContractError::DuplicatePpaId(_)
                | ContractError::ContainerExists(_) => CeStatus::Duplicate,
                ContractError::BadCall(_) => CeStatus::ParseError,
            },
            EngineError::Ledger(LedgerError::Parse { .. }) => CeStatus::ParseError,
            EngineError::Ledger(_) => CeStatus::LedgerError,
            EngineError::Domain(_) => CeStatus::ValidationFailed,
        };
        Failure(status, e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> CeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CeStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            CeStatus::Internal
        }
    }
}

unsafe fn text<'a>(p: *const c_char) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure(CeStatus::NullArgument, "null string argument".into()));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CeStatus::InvalidUtf8, "argument is not UTF-8".into()))
}

fn json<T: serde::de::DeserializeOwned>(s: &str) -> FfiResult<T> {
    serde_json::from_str(s).map_err(|e| Failure(CeStatus::ParseError, e.to_string()))
}

unsafe fn engine<'a>(p: *mut CeEngine) -> FfiResult<&'a mut ConsentEngine> {
    p.as_mut()
        .map(|e| &mut e.inner)
        .ok_or_else(|| Failure(CeStatus::NullArgument, "null engine handle".into()))
}

unsafe fn engine_ref<'a>(p: *const CeEngine) -> FfiResult<&'a ConsentEngine> {
    p.as_ref()
        .map(|e| &e.inner)
        .ok_or_else(|| Failure(CeStatus::NullArgument, "null engine handle".into()))
}

unsafe fn put<T>(out: *mut T, v: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(Failure(CeStatus::NullArgument, "null output pointer".into()));
    }
    out.write(v);
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> FfiResult<()> {
    let c = CString::new(s).map_err(|_| Failure(CeStatus::Internal, "output contains NUL".into()))?;
    put(out, c.into_raw())
}

/// Creates an engine. `settings_toml` may be null for defaults; otherwise it
/// accepts the same keys as the command-line config file.
///
/// # Safety
/// `settings_toml` must be null or a valid NUL-terminated string; `out` must
/// be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ce_engine_new(settings_toml: *const c_char, out: *mut *mut CeEngine) -> CeStatus {
    guard(|| {
        let settings = if settings_toml.is_null() {
            Settings::default()
        } else {
            Settings::from_toml(text(settings_toml)?).map_err(|e| Failure(CeStatus::ParseError, e.to_string()))?
        };
        let cfg = consentchain::cli::scenario::engine_config(&settings, std::path::Path::new("."), None)
            .map_err(|e| Failure(CeStatus::ParseError, e.to_string()))?;
        let inner = ConsentEngine::new(cfg)?;
        put(out, Box::into_raw(Box::new(CeEngine { inner })))
    })
}

/// Releases an engine. Null is ignored.
///
/// # Safety
/// `engine` must be null or a handle from [`ce_engine_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ce_engine_free(engine: *mut CeEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Moves the logical clock forward to `millis` since the Unix epoch.
///
/// # Safety
/// `e` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ce_engine_set_time(e: *mut CeEngine, millis: u64) -> CeStatus {
    guard(|| {
        engine(e)?.set_time(LogicalTime(millis));
        Ok(())
    })
}

/// Finalizes an agreement given as JSON. Writes the hex agreement digest to
/// `out_h_ppa` when it is non-null.
///
/// # Safety
/// Pointers must be valid; `ppa_json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ce_create_ppa(e: *mut CeEngine, ppa_json: *const c_char, out_h_ppa: *mut *mut c_char) -> CeStatus {
    guard(|| {
        let ppa: Ppa = json(text(ppa_json)?)?;
        let integrity = engine(e)?.create_ppa(ppa)?;
        if out_h_ppa.is_null() {
            Ok(())
        } else {
            put_string(out_h_ppa, integrity.h_ppa.to_hex())
        }
    })
}

/// Compares an agreement copy with its anchored digest. `out_intact` is set
/// to 1 when intact and 0 when tampered.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ce_verify_ppa(
    e: *mut CeEngine,
    ppa_id: *const c_char,
    ppa_json: *const c_char,
    out_intact: *mut i32,
) -> CeStatus {
    guard(|| {
        let ppa: Ppa = json(text(ppa_json)?)?;
        let status = engine(e)?.verify_ppa_integrity(text(ppa_id)?, &ppa)?;
        put(out_intact, i32::from(status == IntegrityStatus::Intact))
    })
}

/// Deploys an agreement's consents. Writes a JSON array of consent ids.
///
/// # Safety
/// Pointers must be valid; `ppa_id` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ce_deploy_consents(e: *mut CeEngine, ppa_id: *const c_char, out_ids: *mut *mut c_char) -> CeStatus {
    guard(|| {
        let ids = engine(e)?.deploy_consents(text(ppa_id)?)?;
        put_string(out_ids, serde_json::to_string(&ids).expect("ids serialize"))
    })
}

/// # Safety
/// Pointers must be valid; `consent_json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ce_create_consent(e: *mut CeEngine, consent_json: *const c_char) -> CeStatus {
    guard(|| {
        let ic: InformedConsent = json(text(consent_json)?)?;
        engine(e)?.create_consent(ic)?;
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ce_alter_consent(e: *mut CeEngine, old_id: *const c_char, consent_json: *const c_char) -> CeStatus {
    guard(|| {
        let ic: InformedConsent = json(text(consent_json)?)?;
        engine(e)?.alter_consent(text(old_id)?, ic)?;
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid; `consent_id` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ce_terminate_consent(e: *mut CeEngine, consent_id: *const c_char) -> CeStatus {
    guard(|| {
        engine(e)?.terminate_consent(text(consent_id)?)?;
        Ok(())
    })
}

/// Expires spent consents as of `now_millis`. Writes a JSON array of the
/// expired ids.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ce_expire_sweep(e: *mut CeEngine, now_millis: u64, out_ids: *mut *mut c_char) -> CeStatus {
    guard(|| {
        let ids = engine(e)?.expire_sweep(LogicalTime(now_millis))?;
        put_string(out_ids, serde_json::to_string(&ids).expect("ids serialize"))
    })
}

/// Decides an access request given as JSON. Sets `out_granted` to 1 or 0
/// and, when `out_decision` is non-null, writes the decision as JSON.
///
/// # Safety
/// Pointers must be valid; `request_json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ce_authorize(
    e: *mut CeEngine,
    request_json: *const c_char,
    out_granted: *mut i32,
    out_decision: *mut *mut c_char,
) -> CeStatus {
    guard(|| {
        let req: AccessRequest = json(text(request_json)?)?;
        let d = engine(e)?.authorize(&req)?;
        put(out_granted, i32::from(d.is_grant()))?;
        if out_decision.is_null() {
            Ok(())
        } else {
            put_string(out_decision, d.to_line())
        }
    })
}

/// Granted accesses sealed under `consent_id`.
///
/// # Safety
/// Pointers must be valid; `consent_id` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ce_use_count(e: *const CeEngine, consent_id: *const c_char, out: *mut u64) -> CeStatus {
    guard(|| put(out, engine_ref(e)?.use_count(text(consent_id)?)))
}

/// Seals pending transactions. Writes the new head height when `out_height`
/// is non-null.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ce_seal(e: *mut CeEngine, out_height: *mut u64) -> CeStatus {
    guard(|| {
        let h = engine(e)?.seal()?.height;
        if out_height.is_null() {
            Ok(())
        } else {
            put(out_height, h)
        }
    })
}

fn broken_height(s: ChainStatus) -> i64 {
    match s {
        ChainStatus::Valid => -1,
        ChainStatus::Broken(h) => h as i64,
    }
}

/// Verifies the engine's chain. Writes -1 when valid, otherwise the first
/// broken height.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ce_verify_chain(e: *const CeEngine, out_broken: *mut i64) -> CeStatus {
    guard(|| put(out_broken, broken_height(engine_ref(e)?.ledger().verify_chain())))
}

/// Verifies a chain dump. Same output convention as [`ce_verify_chain`].
///
/// # Safety
/// `dump` must be NUL-terminated; `out_broken` valid.
#[no_mangle]
pub unsafe extern "C" fn ce_verify_dump(dump: *const c_char, out_broken: *mut i64) -> CeStatus {
    guard(|| put(out_broken, broken_height(verify_dump(text(dump)?))))
}

/// Writes the chain dump: one JSON line per block.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ce_chain_dump(e: *const CeEngine, out: *mut *mut c_char) -> CeStatus {
    guard(|| put_string(out, engine_ref(e)?.ledger().dump()))
}

fn graph(e: &ConsentEngine) -> FfiResult<ProvenanceGraph> {
    let events = e.ledger().all_events();
    ProvenanceGraph::from_events(Some(&e.fixtures().catalog), &events)
        .map_err(|err| Failure(CeStatus::Internal, err.to_string()))
}

/// Runs a provenance query. `orientation` is user, resource, operation or
/// condition; `mode` is given or executed. Writes JSON lines, one per row.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ce_provenance_query(
    e: *const CeEngine,
    orientation: *const c_char,
    key: *const c_char,
    mode: *const c_char,
    out_rows: *mut *mut c_char,
) -> CeStatus {
    guard(|| {
        let parse = |m: String| Failure(CeStatus::ParseError, m);
        let q = OrientationQuery::new(
            text(orientation)?.parse().map_err(parse)?,
            text(key)?,
            text(mode)?.parse().map_err(parse)?,
        );
        let rows = graph(engine_ref(e)?)?
            .query(&q)
            .map_err(|err| Failure(CeStatus::UnknownId, err.to_string()))?;
        put_string(out_rows, rows.iter().map(|r| r.to_line() + "\n").collect())
    })
}

/// Exports the provenance graph as `dot` or `json`.
///
/// # Safety
/// Pointers must be valid; `format` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ce_provenance_export(e: *const CeEngine, format: *const c_char, out: *mut *mut c_char) -> CeStatus {
    guard(|| {
        let fmt: ExportFormat = text(format)?.parse().map_err(|m| Failure(CeStatus::ParseError, m))?;
        put_string(out, graph(engine_ref(e)?)?.export(fmt))
    })
}

/// Message for the most recent failure on this thread, or an empty string.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ce_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ce_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
