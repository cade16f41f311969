//! C ABI over `coview-core`.
//!
//! Every fallible function returns a [`CvStatus`]; on failure the message is
//! available from [`cv_last_error`] on the same thread. Strings handed out
//! through `out` parameters are owned by the caller and must be released
//! with [`cv_string_free`]. Handles are released with their `*_free`.
//! Structured inputs and outputs travel as UTF-8 JSON.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::OnceLock;

use coview_core::consensus::{
    replay, start_session, ConsensusConfig, ConsensusError, ConsensusSession, Decision,
    Modification, Outcome, Position, SessionEvent, Stage,
};
use coview_core::feedback::{self, Alignment, Scale};
use coview_core::guidelines::{
    derive_personalized, load_common, render_prompt_context, CommonGuidelineSet,
};
use coview_core::ingest::IngestConfig;
use coview_core::pipeline::{censor_bundle, BundleRef, PipelineError};
use coview_core::preference::{normalize_keyword, PreferencePanel, Role, Weight};
use coview_core::provider::{MockProvider, Presence, ProviderConfig};
use coview_core::time::Timestamp;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Malformed JSON or a value outside its domain.
    InvalidInput = 3,
    /// The operation is not allowed in the session's current stage.
    WrongStage = 4,
    /// The acting role may not perform the operation.
    WrongActor = 5,
    /// A file could not be read or parsed.
    Io = 6,
    Provider = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvRole {
    Parent = 0,
    Youth = 1,
    Co = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvStage {
    InitialProposal = 0,
    SelfEvaluation = 1,
    PerspectiveTaking = 2,
    FinalProposal = 3,
    Finalized = 4,
    /// Not produced by sessions started through this API.
    AwaitingInitialPanel = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvOutcome {
    /// Session still running.
    Pending = 0,
    ConsensusReached = 1,
    ConsensusFailed = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvAlignment {
    Aligned = 0,
    Misaligned = 1,
    Informational = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvScale {
    Preference = 0,
    Presence = 1,
}

/// Opaque consensus session.
pub struct CvSession {
    inner: ConsensusSession,
}

/// Opaque common guideline set.
pub struct CvGuidelines {
    inner: CommonGuidelineSet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(CvStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn fail(status: CvStatus, message: impl ToString) -> Failure {
    Failure(status, message.to_string())
}

fn set_last_error(message: Option<String>) {
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() =
            message.map(|m| CString::new(m.replace('\0', " ")).expect("NULs removed"));
    });
}

/// Runs `f`, records its error (if any) and converts panics to `Panic`.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> CvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(None);
            CvStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(Some(message));
            status
        }
        Err(_) => {
            set_last_error(Some("internal panic".into()));
            CvStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(fail(CvStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(CvStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<Option<&'a str>> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

fn json_arg<T: serde::de::DeserializeOwned>(text: &str, name: &str) -> FfiResult<T> {
    serde_json::from_str(text).map_err(|e| fail(CvStatus::InvalidInput, format!("{name}: {e}")))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(fail(CvStatus::NullArgument, "output pointer is null"));
    }
    out.write(value);
    Ok(())
}

unsafe fn write_string(out: *mut *mut c_char, text: String) -> FfiResult<()> {
    let c = CString::new(text).map_err(|_| fail(CvStatus::InvalidInput, "output contains NUL"))?;
    write_out(out, c.into_raw())
}

unsafe fn session_mut<'a>(s: *mut CvSession) -> FfiResult<&'a mut CvSession> {
    s.as_mut()
        .ok_or_else(|| fail(CvStatus::NullArgument, "session is null"))
}

fn role(r: CvRole) -> Role {
    match r {
        CvRole::Parent => Role::Parent,
        CvRole::Youth => Role::Youth,
        CvRole::Co => Role::Co,
    }
}

fn stage(s: Stage) -> CvStage {
    match s {
        Stage::InitialProposal => CvStage::InitialProposal,
        Stage::SelfEvaluation => CvStage::SelfEvaluation,
        Stage::PerspectiveTaking => CvStage::PerspectiveTaking,
        Stage::FinalProposal => CvStage::FinalProposal,
        Stage::Finalized => CvStage::Finalized,
        Stage::AwaitingInitialPanel => CvStage::AwaitingInitialPanel,
    }
}

fn consensus_failure(e: ConsensusError) -> Failure {
    let status = match e {
        ConsensusError::WrongStage(_) | ConsensusError::NotFinalized => CvStatus::WrongStage,
        ConsensusError::WrongActor(_) | ConsensusError::InvalidRole(_) => CvStatus::WrongActor,
        _ => CvStatus::InvalidInput,
    };
    fail(status, e)
}

fn step(
    s: *mut CvSession,
    f: impl FnOnce(&ConsensusSession) -> Result<ConsensusSession, ConsensusError>,
) -> CvStatus {
    guard(|| {
        let s = unsafe { session_mut(s)? };
        s.inner = f(&s.inner).map_err(consensus_failure)?;
        Ok(())
    })
}

/// Last error message on this thread, or NULL after a successful call. The
/// pointer stays valid until the next call into this library on the thread.
#[no_mangle]
pub extern "C" fn cv_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cv_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---- consensus ----

/// Starts a session. `panel_json` is a panel document
/// (`{"role": ..., "entries": {...}}`); `config_json` may be NULL for defaults.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cv_session_start(
    session_id: *const c_char,
    initiator: CvRole,
    panel_json: *const c_char,
    config_json: *const c_char,
    now_ms: i64,
    out: *mut *mut CvSession,
) -> CvStatus {
    guard(|| {
        let id = str_arg(session_id, "session_id")?;
        let panel: PreferencePanel = json_arg(str_arg(panel_json, "panel_json")?, "panel_json")?;
        let cfg: ConsensusConfig = match opt_str_arg(config_json, "config_json")? {
            Some(t) => json_arg(t, "config_json")?,
            None => ConsensusConfig::default(),
        };
        let inner = start_session(id, role(initiator), &panel, &cfg, Timestamp(now_ms))
            .map_err(consensus_failure)?;
        write_out(out, Box::into_raw(Box::new(CvSession { inner })))
    })
}

/// # Safety
/// `s` must be a live session handle.
#[no_mangle]
pub unsafe extern "C" fn cv_session_accept(
    s: *mut CvSession,
    actor: CvRole,
    now_ms: i64,
) -> CvStatus {
    step(s, |inner| {
        inner.reviewer_respond(role(actor), Decision::Accept, Timestamp(now_ms))
    })
}

/// `changes_json` is a list of `{"keyword": ..., "position": {"kind": "keep"|"drop"|"change", "weight": n}}`.
///
/// # Safety
/// `s` must be a live session handle; `changes_json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cv_session_modify(
    s: *mut CvSession,
    actor: CvRole,
    changes_json: *const c_char,
    now_ms: i64,
) -> CvStatus {
    let changes: Vec<Modification> =
        match str_arg(changes_json, "changes_json").and_then(|t| json_arg(t, "changes_json")) {
            Ok(c) => c,
            Err(f) => return guard(|| Err(f)),
        };
    step(s, |inner| {
        inner.reviewer_respond(role(actor), Decision::Modify { changes }, Timestamp(now_ms))
    })
}

/// # Safety
/// `s` must be a live session handle; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cv_session_reason(
    s: *mut CvSession,
    actor: CvRole,
    keyword: *const c_char,
    reason: *const c_char,
    now_ms: i64,
) -> CvStatus {
    let args = str_arg(keyword, "keyword").and_then(|k| {
        let kw = normalize_keyword(k).map_err(|e| fail(CvStatus::InvalidInput, e))?;
        Ok((kw, str_arg(reason, "reason")?))
    });
    match args {
        Ok((kw, text)) => step(s, |inner| {
            inner.submit_reason(role(actor), &kw, text, Timestamp(now_ms))
        }),
        Err(f) => guard(|| Err(f)),
    }
}

/// `position_json` is `{"kind": "keep"|"drop"}` or `{"kind": "change", "weight": n}`.
///
/// # Safety
/// `s` must be a live session handle; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn cv_session_position(
    s: *mut CvSession,
    actor: CvRole,
    keyword: *const c_char,
    position_json: *const c_char,
    now_ms: i64,
) -> CvStatus {
    let args = str_arg(keyword, "keyword").and_then(|k| {
        let kw = normalize_keyword(k).map_err(|e| fail(CvStatus::InvalidInput, e))?;
        let pos: Position = json_arg(str_arg(position_json, "position_json")?, "position_json")?;
        Ok((kw, pos))
    });
    match args {
        Ok((kw, pos)) => step(s, |inner| {
            inner.submit_position(role(actor), &kw, pos, Timestamp(now_ms))
        }),
        Err(f) => guard(|| Err(f)),
    }
}

/// # Safety
/// `s` must be a live session handle.
#[no_mangle]
pub unsafe extern "C" fn cv_session_advance(s: *mut CvSession, now_ms: i64) -> CvStatus {
    step(s, |inner| inner.advance(Timestamp(now_ms)))
}

/// # Safety
/// `s` must be a live session handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cv_session_stage(s: *const CvSession, out: *mut CvStage) -> CvStatus {
    guard(|| {
        let s = s
            .as_ref()
            .ok_or_else(|| fail(CvStatus::NullArgument, "session is null"))?;
        write_out(out, stage(s.inner.stage))
    })
}

/// Full session state as JSON.
///
/// # Safety
/// `s` must be a live session handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cv_session_snapshot_json(
    s: *const CvSession,
    out: *mut *mut c_char,
) -> CvStatus {
    guard(|| {
        let s = s
            .as_ref()
            .ok_or_else(|| fail(CvStatus::NullArgument, "session is null"))?;
        write_string(
            out,
            serde_json::to_string(&s.inner).expect("session serializes"),
        )
    })
}

/// The session's event log as a JSON array, suitable for [`cv_session_replay`].
///
/// # Safety
/// `s` must be a live session handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cv_session_events_json(
    s: *const CvSession,
    out: *mut *mut c_char,
) -> CvStatus {
    guard(|| {
        let s = s
            .as_ref()
            .ok_or_else(|| fail(CvStatus::NullArgument, "session is null"))?;
        write_string(
            out,
            serde_json::to_string(&s.inner.events).expect("events serialize"),
        )
    })
}

/// Rebuilds a session from its event log.
///
/// # Safety
/// `events_json` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cv_session_replay(
    events_json: *const c_char,
    out: *mut *mut CvSession,
) -> CvStatus {
    guard(|| {
        let events: Vec<SessionEvent> =
            json_arg(str_arg(events_json, "events_json")?, "events_json")?;
        let inner = replay(&events).map_err(consensus_failure)?;
        write_out(out, Box::into_raw(Box::new(CvSession { inner })))
    })
}

/// Co-preference panel JSON and outcome of a finalized session.
///
/// # Safety
/// `s` must be a live session handle; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn cv_session_finalize(
    s: *const CvSession,
    out_panel_json: *mut *mut c_char,
    out_outcome: *mut CvOutcome,
) -> CvStatus {
    guard(|| {
        let s = s
            .as_ref()
            .ok_or_else(|| fail(CvStatus::NullArgument, "session is null"))?;
        let (panel, outcome) = s.inner.finalize().map_err(consensus_failure)?;
        if out_outcome.is_null() {
            return Err(fail(CvStatus::NullArgument, "out_outcome is null"));
        }
        write_string(
            out_panel_json,
            serde_json::to_string(&panel).expect("panel serializes"),
        )?;
        out_outcome.write(match outcome {
            Outcome::ConsensusReached => CvOutcome::ConsensusReached,
            Outcome::ConsensusFailed => CvOutcome::ConsensusFailed,
        });
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not have been freed. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn cv_session_free(s: *mut CvSession) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

// ---- feedback helpers ----

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cv_classify(weight: i32, score: i32, out: *mut CvAlignment) -> CvStatus {
    guard(|| {
        let w = Weight::new(weight.into()).map_err(|e| fail(CvStatus::InvalidInput, e))?;
        let p = Presence::new(score.into()).map_err(|e| fail(CvStatus::InvalidInput, e))?;
        write_out(
            out,
            match feedback::classify(w, p) {
                Alignment::Aligned => CvAlignment::Aligned,
                Alignment::Misaligned => CvAlignment::Misaligned,
                Alignment::Informational => CvAlignment::Informational,
            },
        )
    })
}

/// Display label for a value on either scale; out-of-range values clamp.
/// The returned string is static and must not be freed.
#[no_mangle]
pub extern "C" fn cv_label_of(value: i32, scale: CvScale) -> *const c_char {
    static LABELS: OnceLock<[Vec<CString>; 2]> = OnceLock::new();
    let table = LABELS.get_or_init(|| {
        [Scale::Preference, Scale::Presence].map(|scale| {
            (-2..=2)
                .map(|v| CString::new(feedback::label_of(v, scale)).expect("labels have no NUL"))
                .collect()
        })
    });
    table[scale as usize][(value.clamp(-2, 2) + 2) as usize].as_ptr()
}

/// # Safety
/// `raw` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cv_normalize_keyword(
    raw: *const c_char,
    out: *mut *mut c_char,
) -> CvStatus {
    guard(|| {
        let kw =
            normalize_keyword(str_arg(raw, "raw")?).map_err(|e| fail(CvStatus::InvalidInput, e))?;
        write_string(out, kw.as_str().to_string())
    })
}

// ---- guidelines ----

/// Parses and validates a guideline document.
///
/// # Safety
/// `json` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cv_guidelines_load(
    json: *const c_char,
    out: *mut *mut CvGuidelines,
) -> CvStatus {
    guard(|| {
        let inner =
            load_common(str_arg(json, "json")?).map_err(|e| fail(CvStatus::InvalidInput, e))?;
        write_out(out, Box::into_raw(Box::new(CvGuidelines { inner })))
    })
}

/// The built-in guideline set.
///
/// # Safety
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cv_guidelines_default(out: *mut *mut CvGuidelines) -> CvStatus {
    guard(|| {
        write_out(
            out,
            Box::into_raw(Box::new(CvGuidelines {
                inner: CommonGuidelineSet::default_set(),
            })),
        )
    })
}

/// Serialized guideline document.
///
/// # Safety
/// `g` a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cv_guidelines_json(
    g: *const CvGuidelines,
    out: *mut *mut c_char,
) -> CvStatus {
    guard(|| {
        let g = g
            .as_ref()
            .ok_or_else(|| fail(CvStatus::NullArgument, "guidelines is null"))?;
        write_string(out, g.inner.to_json())
    })
}

/// Prompt context for the guidelines personalized with a co-preference panel.
///
/// # Safety
/// `g` a live handle; `co_panel_json` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cv_guidelines_render(
    g: *const CvGuidelines,
    co_panel_json: *const c_char,
    out: *mut *mut c_char,
) -> CvStatus {
    guard(|| {
        let g = g
            .as_ref()
            .ok_or_else(|| fail(CvStatus::NullArgument, "guidelines is null"))?;
        let panel: PreferencePanel =
            json_arg(str_arg(co_panel_json, "co_panel_json")?, "co_panel_json")?;
        let personal = derive_personalized(&panel).map_err(|e| fail(CvStatus::InvalidInput, e))?;
        write_string(out, render_prompt_context(&g.inner, &personal))
    })
}

/// # Safety
/// `g` must come from this library and not have been freed. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn cv_guidelines_free(g: *mut CvGuidelines) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

// ---- censorship ----

/// Runs the censorship pipeline with the deterministic mock provider and
/// writes `{"result": ..., "feedback": ...}`. `guidelines` and
/// `lexicon_path` may be NULL for the built-in defaults.
///
/// # Safety
/// Strings NUL-terminated; `guidelines` NULL or a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cv_censor_bundle(
    video_id: *const c_char,
    frames_dir: *const c_char,
    subtitles: *const c_char,
    co_panel_json: *const c_char,
    guidelines: *const CvGuidelines,
    lexicon_path: *const c_char,
    produced_at_ms: i64,
    out: *mut *mut c_char,
) -> CvStatus {
    guard(|| {
        let video_id = str_arg(video_id, "video_id")?;
        let bundle = BundleRef {
            frames_dir: PathBuf::from(str_arg(frames_dir, "frames_dir")?),
            subtitles: PathBuf::from(str_arg(subtitles, "subtitles")?),
            subtitle_format: None,
        };
        let panel: PreferencePanel =
            json_arg(str_arg(co_panel_json, "co_panel_json")?, "co_panel_json")?;
        let default_set;
        let set = match guidelines.as_ref() {
            Some(g) => &g.inner,
            None => {
                default_set = CommonGuidelineSet::default_set();
                &default_set
            }
        };
        let provider = match opt_str_arg(lexicon_path, "lexicon_path")? {
            Some(p) => MockProvider::from_path(p.as_ref()).map_err(|e| fail(CvStatus::Io, e))?,
            None => MockProvider::with_default_lexicon(),
        };
        let (result, feedback) = censor_bundle(
            video_id,
            &bundle,
            &panel,
            set,
            &IngestConfig::default(),
            ProviderConfig::default().context_budget,
            &provider,
            Timestamp(produced_at_ms),
        )
        .map_err(|e| {
            let status = match e {
                PipelineError::Ingest(_) => CvStatus::Io,
                PipelineError::Provider(_) => CvStatus::Provider,
                _ => CvStatus::InvalidInput,
            };
            fail(status, e)
        })?;
        let doc = serde_json::json!({ "result": result, "feedback": feedback });
        write_string(
            out,
            serde_json::to_string_pretty(&doc).expect("result serializes"),
        )
    })
}
