//! C ABI over the cascom engine.
//!
//! Knowledge bases and running pipelines are opaque handles. Structured data
//! crosses the boundary as UTF-8 JSON strings: inputs are borrowed, outputs
//! are allocated here and must be released with [`cascom_string_free`]. Every
//! call returns a [`CascomStatus`]; on failure, [`cascom_last_error`] holds a
//! message for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use cascom::bundled;
use cascom::cost::PriorityVector;
use cascom::kb::{parse_kb, KbError, KnowledgeBase, ParseMode};
use cascom::planner::{Solution, SolveOptions};
use cascom::runtime::{generate, to_xml, ExecMode, Executor, PipelineDefinition, Projection, RunLimit};
use cascom::service::{rank_grounded, ServiceError, Session};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CascomStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    KbError = 4,
    NotFound = 5,
    NoSolution = 6,
    InvalidRequest = 7,
    GenerateError = 8,
    RunError = 9,
    /// The pipeline reached its record limit.
    EndOfStream = 10,
    Io = 11,
    Panic = 99,
}

/// Execution strategy of a pipeline.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CascomMode {
    Precompiled = 0,
    DynamicDispatch = 1,
}

/// A loaded, immutable knowledge base.
pub struct CascomKb {
    kb: Arc<KnowledgeBase>,
}

/// A generated pipeline and its record iterator.
pub struct CascomPipeline {
    definition: PipelineDefinition,
    executor: Executor,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(CascomStatus, String);

impl From<ServiceError> for Failure {
    fn from(e: ServiceError) -> Self {
        let status = match &e {
            ServiceError::NoSolution { .. } => CascomStatus::NoSolution,
            ServiceError::NotFound { .. } | ServiceError::UnknownSolution(_) => CascomStatus::NotFound,
            ServiceError::Kb(KbError::Io { .. }) => CascomStatus::Io,
            ServiceError::Kb(_) => CascomStatus::KbError,
            ServiceError::Generate(_) => CascomStatus::GenerateError,
            ServiceError::Run(_) => CascomStatus::RunError,
            _ => CascomStatus::InvalidRequest,
        };
        Failure(status, e.to_string())
    }
}

impl From<KbError> for Failure {
    fn from(e: KbError) -> Self {
        let status = if matches!(e, KbError::Io { .. }) { CascomStatus::Io } else { CascomStatus::KbError };
        Failure(status, e.to_string())
    }
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

/// Runs `f`, turning errors and panics into a status plus the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CascomStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            CascomStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            CascomStatus::Panic
        }
    }
}

unsafe fn borrowed_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(CascomStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(CascomStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn optional_str<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        borrowed_str(p, what).map(Some)
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T, Failure> {
    serde_json::from_str(text).map_err(|e| Failure(CascomStatus::InvalidJson, format!("{what}: {e}")))
}

unsafe fn kb_ref<'a>(kb: *const CascomKb) -> Result<&'a CascomKb, Failure> {
    kb.as_ref().ok_or_else(|| Failure(CascomStatus::NullArgument, "kb is null".into()))
}

fn check_out<T>(out: *mut T) -> Result<(), Failure> {
    if out.is_null() {
        Err(Failure(CascomStatus::NullArgument, "output pointer is null".into()))
    } else {
        Ok(())
    }
}

fn into_c_string(text: String) -> *mut c_char {
    CString::new(text.replace('\0', " ")).unwrap_or_default().into_raw()
}

unsafe fn write_string(out: *mut *mut c_char, text: String) {
    *out = into_c_string(text);
}

/// Accepts a single solution, a list of them, or an object with a `solutions` list.
fn solutions_from(text: &str) -> Result<Vec<Solution>, Failure> {
    let value: serde_json::Value = parse_json(text, "solutions")?;
    let items = match value {
        serde_json::Value::Array(items) => items,
        serde_json::Value::Object(mut map) if map.contains_key("solutions") => match map.remove("solutions") {
            Some(serde_json::Value::Array(items)) => items,
            _ => return Err(Failure(CascomStatus::InvalidJson, "`solutions` must be a list".into())),
        },
        other => vec![other],
    };
    items
        .into_iter()
        .map(|v| serde_json::from_value(v).map_err(|e| Failure(CascomStatus::InvalidJson, format!("solution: {e}"))))
        .collect()
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn cascom_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static, human-readable name of a `CascomStatus` value; "unknown" for
/// anything else.
#[no_mangle]
pub extern "C" fn cascom_status_name(status: i32) -> *const c_char {
    let name: &'static CStr = match status {
        0 => c"ok",
        1 => c"null-argument",
        2 => c"invalid-utf8",
        3 => c"invalid-json",
        4 => c"kb-error",
        5 => c"not-found",
        6 => c"no-solution",
        7 => c"invalid-request",
        8 => c"generate-error",
        9 => c"run-error",
        10 => c"end-of-stream",
        11 => c"io",
        99 => c"panic",
        _ => c"unknown",
    };
    name.as_ptr()
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn cascom_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cascom_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads the knowledge base bundled with the library.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn cascom_kb_bundled(out: *mut *mut CascomKb) -> CascomStatus {
    guard(|| {
        check_out(out)?;
        *out = Box::into_raw(Box::new(CascomKb { kb: Arc::new(bundled::use_case_kb()) }));
        Ok(())
    })
}

/// Parses a knowledge base document. `strict` rejects unknown keys.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cascom_kb_from_json(json: *const c_char, strict: bool, out: *mut *mut CascomKb) -> CascomStatus {
    guard(|| {
        check_out(out)?;
        let text = borrowed_str(json, "json")?;
        let mode = if strict { ParseMode::Strict } else { ParseMode::Lax };
        *out = Box::into_raw(Box::new(CascomKb { kb: Arc::new(parse_kb(text, mode)?) }));
        Ok(())
    })
}

/// Reads and parses a knowledge base file in strict mode.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cascom_kb_load(path: *const c_char, out: *mut *mut CascomKb) -> CascomStatus {
    guard(|| {
        check_out(out)?;
        let path = borrowed_str(path, "path")?;
        let kb = cascom::kb::load_kb(path, ParseMode::Strict)?;
        *out = Box::into_raw(Box::new(CascomKb { kb: Arc::new(kb) }));
        Ok(())
    })
}

/// Releases a knowledge base. Null is ignored.
///
/// # Safety
/// `kb` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cascom_kb_free(kb: *mut CascomKb) {
    if !kb.is_null() {
        drop(Box::from_raw(kb));
    }
}

/// Monotonic content version of a knowledge base, or 0 for null.
///
/// # Safety
/// `kb` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cascom_kb_version(kb: *const CascomKb) -> u64 {
    kb.as_ref().map(|k| k.kb.version()).unwrap_or(0)
}

/// Serializes the knowledge base document.
///
/// # Safety
/// `kb` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cascom_kb_to_json(kb: *const CascomKb, out: *mut *mut c_char) -> CascomStatus {
    guard(|| {
        check_out(out)?;
        write_string(out, kb_ref(kb)?.kb.to_json());
        Ok(())
    })
}

/// Solves a task and ranks its grounded solutions with equal priorities.
/// `options_json` may be null or `{"maxDepth", "allowConversions", "maxSolutions"}`.
///
/// On success `out` receives `{"taskId", "priorities", "solutions", ...}`.
/// When the task has no solution the status is `NoSolution` and `out`
/// receives the error body with its `gapReport`.
///
/// # Safety
/// `kb` must be a live handle, strings NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cascom_solve(
    kb: *const CascomKb,
    task_id: *const c_char,
    options_json: *const c_char,
    out: *mut *mut c_char,
) -> CascomStatus {
    guard(|| {
        check_out(out)?;
        *out = ptr::null_mut();
        let kb = kb_ref(kb)?.kb.clone();
        let task = borrowed_str(task_id, "task_id")?;
        let opts: SolveOptions = match optional_str(options_json, "options_json")? {
            Some(text) => parse_json(text, "options")?,
            None => SolveOptions::default(),
        };
        let mut session = Session::new("ffi", &kb)?;
        session.select_task(&kb, task)?;
        match session.solve(kb, opts) {
            Ok(view) => {
                write_string(out, serde_json::to_string(&view).expect("view serializes"));
                Ok(())
            }
            Err(e) => {
                write_string(out, serde_json::to_string(&e.body()).expect("error serializes"));
                Err(e.into())
            }
        }
    })
}

/// Grounds and re-ranks solutions under `priorities_json` (`{"weights": {...}}`).
/// `solutions_json` is one solution, a list, or a `solve` result. `out`
/// receives the ranked list, best first.
///
/// # Safety
/// `kb` must be a live handle, strings NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cascom_rank(
    kb: *const CascomKb,
    solutions_json: *const c_char,
    priorities_json: *const c_char,
    out: *mut *mut c_char,
) -> CascomStatus {
    guard(|| {
        check_out(out)?;
        let kb = &kb_ref(kb)?.kb;
        let solutions = solutions_from(borrowed_str(solutions_json, "solutions_json")?)?;
        let priorities: PriorityVector = match optional_str(priorities_json, "priorities_json")? {
            Some(text) => parse_json(text, "priorities")?,
            None => PriorityVector::equal(),
        };
        let ranked = rank_grounded(kb, &solutions, &priorities)?;
        write_string(out, serde_json::to_string(&ranked).expect("solutions serialize"));
        Ok(())
    })
}

/// Generates a pipeline for a grounded solution, exporting the task outputs
/// and accepted context. `mode` is a `CascomMode` value; `records` bounds the
/// stream, 0 meaning unbounded.
///
/// # Safety
/// `kb` must be a live handle, `solution_json` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cascom_pipeline_new(
    kb: *const CascomKb,
    solution_json: *const c_char,
    mode: i32,
    records: u64,
    out: *mut *mut CascomPipeline,
) -> CascomStatus {
    guard(|| {
        check_out(out)?;
        let kb = &kb_ref(kb)?.kb;
        let mut solutions = solutions_from(borrowed_str(solution_json, "solution_json")?)?;
        if solutions.is_empty() {
            return Err(Failure(CascomStatus::InvalidRequest, "no solution given".into()));
        }
        let mode = match mode {
            m if m == CascomMode::Precompiled as i32 => ExecMode::Precompiled,
            m if m == CascomMode::DynamicDispatch as i32 => ExecMode::DynamicDispatch,
            other => return Err(Failure(CascomStatus::InvalidRequest, format!("unknown mode {other}"))),
        };
        let definition = generate(kb, &solutions.remove(0), &Projection::Required, mode)
            .map_err(|e| Failure(CascomStatus::GenerateError, e.to_string()))?;
        let limit = if records == 0 { RunLimit::DurationMs(u64::MAX) } else { RunLimit::Records(records as usize) };
        let executor = Executor::new(&definition, limit).map_err(|e| Failure(CascomStatus::RunError, e.to_string()))?;
        *out = Box::into_raw(Box::new(CascomPipeline { definition, executor }));
        Ok(())
    })
}

/// Releases a pipeline. Null is ignored.
///
/// # Safety
/// `p` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cascom_pipeline_free(p: *mut CascomPipeline) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// JSON pipeline definition.
///
/// # Safety
/// `p` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cascom_pipeline_definition(p: *const CascomPipeline, out: *mut *mut c_char) -> CascomStatus {
    guard(|| {
        check_out(out)?;
        let p = p.as_ref().ok_or_else(|| Failure(CascomStatus::NullArgument, "pipeline is null".into()))?;
        write_string(out, p.definition.to_json());
        Ok(())
    })
}

/// Virtual sensor XML document of the pipeline.
///
/// # Safety
/// `p` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cascom_pipeline_xml(p: *const CascomPipeline, out: *mut *mut c_char) -> CascomStatus {
    guard(|| {
        check_out(out)?;
        let p = p.as_ref().ok_or_else(|| Failure(CascomStatus::NullArgument, "pipeline is null".into()))?;
        write_string(out, to_xml(&p.definition));
        Ok(())
    })
}

/// Next stream item as one JSON object, either a record or an error record.
/// Returns `EndOfStream`, leaving `out` null, once the record limit is reached.
///
/// # Safety
/// `p` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cascom_pipeline_next(p: *mut CascomPipeline, out: *mut *mut c_char) -> CascomStatus {
    let status = guard(|| {
        check_out(out)?;
        *out = ptr::null_mut();
        let p = p.as_mut().ok_or_else(|| Failure(CascomStatus::NullArgument, "pipeline is null".into()))?;
        match p.executor.next() {
            Some(item) => {
                write_string(out, item.to_json_line());
                Ok(())
            }
            None => Err(Failure(CascomStatus::EndOfStream, "end of stream".into())),
        }
    });
    if status == CascomStatus::EndOfStream {
        set_last_error("");
    }
    status
}
