//! C ABI over the `vodswarm` library.
//!
//! Every function returns a [`VsStatus`]. On failure a description is
//! available from [`vs_last_error_message`] on the same thread until the
//! next call. Handles are opaque and must be released with their `_free`
//! function; strings returned through `char **` out-parameters must be
//! released with [`vs_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use vodswarm::experiment::parse_sim_config;
use vodswarm::metrics::{
    dispersion_report, merge_records, sharing_potential, spatial_dispersion, PopularityRecord,
};
use vodswarm::sim;
use vodswarm::workload::{generate_workload, parse_trace, GeneratorConfig, TraceOptions, Workload};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    InvalidArgument = 4,
    Internal = 5,
}

/// A parsed or generated workload.
pub struct VsWorkload(Workload);

/// A position popularity record.
pub struct VsRecord(PopularityRecord);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Fail(VsStatus, String);

type FfiResult = Result<(), Fail>;

fn guard(f: impl FnOnce() -> FfiResult) -> VsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            VsStatus::Internal
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(VsStatus::NullPointer, format!("{what} is null"))
}

fn invalid(e: impl ToString) -> Fail {
    Fail(VsStatus::InvalidArgument, e.to_string())
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(VsStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn out<T>(p: *mut T, what: &str, value: T) -> FfiResult {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(value);
    Ok(())
}

fn c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(VsStatus::Internal, "output contains a NUL byte".into()))
}

fn optional(x: f64) -> Option<f64> {
    (x > 0.0).then_some(x)
}

/// Message for the last failed call on this thread, or NULL. Owned by
/// the library; valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn vs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parses a trace. `object_length` and `window` override the metadata
/// comment when positive.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out_workload` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vs_workload_parse(
    text: *const c_char,
    object_length: f64,
    window: f64,
    out_workload: *mut *mut VsWorkload,
) -> VsStatus {
    guard(|| {
        let text = read_str(text, "text")?;
        if out_workload.is_null() {
            return Err(null("out_workload"));
        }
        let opts = TraceOptions {
            object_length: optional(object_length),
            observation_window: optional(window),
            playback_rate: None,
        };
        let w = parse_trace(text, opts).map_err(|e| Fail(VsStatus::ParseError, e.to_string()))?;
        out(out_workload, "out_workload", Box::into_raw(Box::new(VsWorkload(w))))
    })
}

/// Generates a synthetic workload for profile `"hi"`, `"mi"` or `"li"`.
///
/// # Safety
/// `profile` must be a NUL-terminated string and `out_workload` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vs_workload_generate(
    profile: *const c_char,
    sessions: u32,
    object_length: f64,
    seed: u64,
    out_workload: *mut *mut VsWorkload,
) -> VsStatus {
    guard(|| {
        let profile = read_str(profile, "profile")?.parse().map_err(invalid)?;
        if out_workload.is_null() {
            return Err(null("out_workload"));
        }
        let cfg = GeneratorConfig {
            profile,
            session_count: sessions as usize,
            object_length,
            seed,
            ..GeneratorConfig::default()
        };
        let w = generate_workload(&cfg).map_err(invalid)?;
        out(out_workload, "out_workload", Box::into_raw(Box::new(VsWorkload(w))))
    })
}

/// # Safety
/// `workload` must come from this library and not be freed twice. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn vs_workload_free(workload: *mut VsWorkload) {
    if !workload.is_null() {
        drop(Box::from_raw(workload));
    }
}

/// # Safety
/// `workload` must be a live handle and `out_count` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vs_workload_session_count(workload: *const VsWorkload, out_count: *mut usize) -> VsStatus {
    guard(|| {
        let w = workload.as_ref().ok_or_else(|| null("workload"))?;
        out(out_count, "out_count", w.0.sessions.len())
    })
}

/// Serializes the workload as a trace.
///
/// # Safety
/// `workload` must be a live handle and `out_text` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vs_workload_to_trace(workload: *const VsWorkload, out_text: *mut *mut c_char) -> VsStatus {
    guard(|| {
        let w = workload.as_ref().ok_or_else(|| null("workload"))?;
        if out_text.is_null() {
            return Err(null("out_text"));
        }
        out(out_text, "out_text", c_string(w.0.to_trace())?)
    })
}

/// Dispersion report (`n`, `temporal_dispersion`, `p`, `m`, `d`,
/// `category`) as JSON.
///
/// # Safety
/// `workload` must be a live handle and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vs_workload_analyze_json(
    workload: *const VsWorkload,
    granularity: f64,
    out_json: *mut *mut c_char,
) -> VsStatus {
    guard(|| {
        let w = workload.as_ref().ok_or_else(|| null("workload"))?;
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let r = dispersion_report(&w.0, granularity).map_err(invalid)?;
        let json = serde_json::to_string(&r).map_err(|e| Fail(VsStatus::Internal, e.to_string()))?;
        out(out_json, "out_json", c_string(json)?)
    })
}

/// Empty record of `horizon` bins, each `granularity` seconds wide.
///
/// # Safety
/// `out_record` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vs_record_new(granularity: f64, horizon: usize, out_record: *mut *mut VsRecord) -> VsStatus {
    guard(|| {
        if out_record.is_null() {
            return Err(null("out_record"));
        }
        let r = PopularityRecord::new(granularity, horizon).map_err(invalid)?;
        out(out_record, "out_record", Box::into_raw(Box::new(VsRecord(r))))
    })
}

/// # Safety
/// `record` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn vs_record_add(record: *mut VsRecord, position: usize, count: u64) -> VsStatus {
    guard(|| {
        let r = record.as_mut().ok_or_else(|| null("record"))?;
        r.0.add(position, count).map_err(invalid)
    })
}

/// # Safety
/// `record` must come from this library and not be freed twice. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn vs_record_free(record: *mut VsRecord) {
    if !record.is_null() {
        drop(Box::from_raw(record));
    }
}

/// # Safety
/// `record` must be a live handle and `out_value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vs_record_sharing_potential(record: *const VsRecord, out_value: *mut u64) -> VsStatus {
    guard(|| {
        let r = record.as_ref().ok_or_else(|| null("record"))?;
        out(out_value, "out_value", sharing_potential(&r.0))
    })
}

/// # Safety
/// `record` must be a live handle and `out_value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vs_record_total_mass(record: *const VsRecord, out_value: *mut u64) -> VsStatus {
    guard(|| {
        let r = record.as_ref().ok_or_else(|| null("record"))?;
        out(out_value, "out_value", r.0.total_mass())
    })
}

/// Fails with `VS_STATUS_INVALID_ARGUMENT` on an empty record.
///
/// # Safety
/// `record` must be a live handle and `out_value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vs_record_spatial_dispersion(record: *const VsRecord, out_value: *mut f64) -> VsStatus {
    guard(|| {
        let r = record.as_ref().ok_or_else(|| null("record"))?;
        let d = spatial_dispersion(&r.0).map_err(invalid)?;
        out(out_value, "out_value", d)
    })
}

/// Pointwise sum of `len` records into a new handle.
///
/// # Safety
/// `records` must point to `len` live handles (it may be NULL when `len`
/// is 0) and `out_record` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vs_record_merge(
    records: *const *const VsRecord,
    len: usize,
    out_record: *mut *mut VsRecord,
) -> VsStatus {
    guard(|| {
        if out_record.is_null() {
            return Err(null("out_record"));
        }
        let handles: &[*const VsRecord] = if len == 0 {
            &[]
        } else if records.is_null() {
            return Err(null("records"));
        } else {
            std::slice::from_raw_parts(records, len)
        };
        let refs = handles
            .iter()
            .map(|h| h.as_ref().map(|r| &r.0).ok_or_else(|| null("records[i]")))
            .collect::<Result<Vec<_>, _>>()?;
        let merged = merge_records(refs).map_err(invalid)?;
        out(out_record, "out_record", Box::into_raw(Box::new(VsRecord(merged))))
    })
}

/// Runs a simulation from a TOML config and returns the QoS report as JSON.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vs_simulate_json(config_toml: *const c_char, out_json: *mut *mut c_char) -> VsStatus {
    guard(|| {
        let text = read_str(config_toml, "config_toml")?;
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let cfg = parse_sim_config(text).map_err(|e| Fail(VsStatus::ParseError, e.to_string()))?;
        let report = sim::run(&cfg).map_err(|e| match e {
            sim::SimError::Config(_) | sim::SimError::Workload(_) | sim::SimError::TraceIo { .. } => invalid(e),
            other => Fail(VsStatus::Internal, other.to_string()),
        })?;
        let json = serde_json::to_string(&report).map_err(|e| Fail(VsStatus::Internal, e.to_string()))?;
        out(out_json, "out_json", c_string(json)?)
    })
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn vs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
