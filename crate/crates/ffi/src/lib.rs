//! C ABI over the `fedgen` experiment runner.
//!
//! Every function returns a [`FedgenStatus`]. On failure the message is
//! available from [`fedgen_last_error`] on the same thread. Handles and
//! strings created here must be released with the matching `*_free` call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fedgen::bound::b_coefficient;
use fedgen::error::Error;
use fedgen::experiment::{emit_csv, emit_json, emit_svg_plot, parse_config, run_sweep, run_verify, ExperimentSpec, ResultsTable};
use fedgen::model::Schedule;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedgenStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    ValidationError = 4,
    RuntimeError = 5,
    TooFewRows = 6,
    IndexOutOfRange = 7,
    Panic = 8,
}

/// Parsed experiment configuration.
pub struct FedgenSpec(ExperimentSpec);

/// Results of a sweep, one row per number of rounds.
pub struct FedgenTable(ResultsTable);

/// One results row. Columns that were not computed are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FedgenRow {
    pub rounds: usize,
    pub gen_mean: f64,
    pub gen_se: f64,
    pub bound_term1: f64,
    pub bound_term2: f64,
    pub bound_total: f64,
    pub bound_se: f64,
    pub emp_risk: f64,
    pub pop_risk: f64,
    pub proxy_delta: f64,
    pub seconds: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: FedgenStatus, msg: &str) -> FedgenStatus {
    set_error(msg);
    status
}

fn from_error(e: &Error) -> FedgenStatus {
    let status = match e {
        Error::Parse { .. } => FedgenStatus::ParseError,
        Error::Validation { .. } => FedgenStatus::ValidationError,
        Error::TooFewRows { .. } => FedgenStatus::TooFewRows,
        _ => FedgenStatus::RuntimeError,
    };
    fail(status, &e.to_string())
}

fn guarded(f: impl FnOnce() -> FedgenStatus) -> FedgenStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => {
            if status == FedgenStatus::Ok {
                set_error("");
            }
            status
        }
        Err(_) => fail(FedgenStatus::Panic, "internal panic"),
    }
}

unsafe fn out_string(text: String, out: *mut *mut c_char) -> FedgenStatus {
    match CString::new(text) {
        Ok(c) => {
            *out = c.into_raw();
            FedgenStatus::Ok
        }
        Err(_) => fail(FedgenStatus::RuntimeError, "output contains a NUL byte"),
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn fedgen_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fedgen_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses `key = value` configuration text into a new spec handle.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fedgen_spec_parse(text: *const c_char, out: *mut *mut FedgenSpec) -> FedgenStatus {
    guarded(|| {
        if text.is_null() || out.is_null() {
            return fail(FedgenStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        let Ok(text) = CStr::from_ptr(text).to_str() else {
            return fail(FedgenStatus::InvalidUtf8, "configuration is not UTF-8");
        };
        match parse_config(text) {
            Ok(spec) => {
                *out = Box::into_raw(Box::new(FedgenSpec(spec)));
                FedgenStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// # Safety
/// `spec` must come from [`fedgen_spec_parse`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn fedgen_spec_free(spec: *mut FedgenSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// # Safety
/// `spec` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fedgen_spec_set_seed(spec: *mut FedgenSpec, seed: u64) -> FedgenStatus {
    guarded(|| match spec.as_mut() {
        Some(s) => {
            s.0.seed = seed;
            FedgenStatus::Ok
        }
        None => fail(FedgenStatus::NullPointer, "null spec"),
    })
}

/// Sets the number of Monte-Carlo replicates `M`.
///
/// # Safety
/// `spec` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fedgen_spec_set_replicates(spec: *mut FedgenSpec, m: usize) -> FedgenStatus {
    guarded(|| match spec.as_mut() {
        Some(_) if m == 0 => fail(FedgenStatus::ValidationError, "M: must be at least 1"),
        Some(s) => {
            s.0.m = m;
            FedgenStatus::Ok
        }
        None => fail(FedgenStatus::NullPointer, "null spec"),
    })
}

/// Canonical configuration text of the spec.
///
/// # Safety
/// `spec` must be a live handle and `out` a valid pointer. Free the result with [`fedgen_string_free`].
#[no_mangle]
pub unsafe extern "C" fn fedgen_spec_to_config(spec: *const FedgenSpec, out: *mut *mut c_char) -> FedgenStatus {
    guarded(|| match (spec.as_ref(), out.is_null()) {
        (Some(s), false) => out_string(s.0.to_config_text(), out),
        _ => fail(FedgenStatus::NullPointer, "null argument"),
    })
}

/// Runs the sweep described by `spec`.
///
/// # Safety
/// `spec` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fedgen_sweep_run(spec: *const FedgenSpec, out: *mut *mut FedgenTable) -> FedgenStatus {
    guarded(|| {
        let (Some(spec), false) = (spec.as_ref(), out.is_null()) else {
            return fail(FedgenStatus::NullPointer, "null argument");
        };
        *out = ptr::null_mut();
        match run_sweep(&spec.0) {
            Ok(table) => {
                *out = Box::into_raw(Box::new(FedgenTable(table)));
                FedgenStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// # Safety
/// `table` must come from [`fedgen_sweep_run`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn fedgen_table_free(table: *mut FedgenTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Number of rows; 0 for a null handle.
///
/// # Safety
/// `table` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fedgen_table_row_count(table: *const FedgenTable) -> usize {
    table.as_ref().map_or(0, |t| t.0.rows.len())
}

/// # Safety
/// `table` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fedgen_table_row(table: *const FedgenTable, index: usize, out: *mut FedgenRow) -> FedgenStatus {
    guarded(|| {
        let (Some(t), false) = (table.as_ref(), out.is_null()) else {
            return fail(FedgenStatus::NullPointer, "null argument");
        };
        let Some(row) = t.0.rows.get(index) else {
            return fail(FedgenStatus::IndexOutOfRange, &format!("row {index} of {}", t.0.rows.len()));
        };
        let v = |x: Option<f64>| x.unwrap_or(f64::NAN);
        *out = FedgenRow {
            rounds: row.rounds,
            gen_mean: v(row.gen.map(|e| e.mean)),
            gen_se: v(row.gen.map(|e| e.se)),
            bound_term1: v(row.term1.map(|e| e.mean)),
            bound_term2: v(row.term2.map(|e| e.mean)),
            bound_total: v(row.total.map(|e| e.mean)),
            bound_se: v(row.total.map(|e| e.se)),
            emp_risk: v(row.emp_risk),
            pop_risk: v(row.pop_risk),
            proxy_delta: v(row.proxy),
            seconds: v(row.seconds),
        };
        FedgenStatus::Ok
    })
}

unsafe fn emit(table: *const FedgenTable, out: *mut *mut c_char, f: impl FnOnce(&ResultsTable) -> Result<String, Error>) -> FedgenStatus {
    guarded(|| {
        let (Some(t), false) = (table.as_ref(), out.is_null()) else {
            return fail(FedgenStatus::NullPointer, "null argument");
        };
        *out = ptr::null_mut();
        match f(&t.0) {
            Ok(text) => out_string(text, out),
            Err(e) => from_error(&e),
        }
    })
}

/// # Safety
/// `table` must be a live handle and `out` a valid pointer. Free the result with [`fedgen_string_free`].
#[no_mangle]
pub unsafe extern "C" fn fedgen_table_to_csv(table: *const FedgenTable, out: *mut *mut c_char) -> FedgenStatus {
    emit(table, out, |t| Ok(emit_csv(t)))
}

/// # Safety
/// `table` must be a live handle and `out` a valid pointer. Free the result with [`fedgen_string_free`].
#[no_mangle]
pub unsafe extern "C" fn fedgen_table_to_json(table: *const FedgenTable, out: *mut *mut c_char) -> FedgenStatus {
    emit(table, out, |t| Ok(emit_json(t)))
}

/// # Safety
/// `table` must be a live handle and `out` a valid pointer. Free the result with [`fedgen_string_free`].
#[no_mangle]
pub unsafe extern "C" fn fedgen_table_to_svg(table: *const FedgenTable, out: *mut *mut c_char) -> FedgenStatus {
    emit(table, out, emit_svg_plot)
}

/// # Safety
/// `s` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn fedgen_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// `b_{r+1}` for a constant rate `eta`, `rounds` rounds of `steps` steps and smoothness `l`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fedgen_b_coefficient(
    eta: f64,
    l: f64,
    steps: usize,
    rounds: usize,
    r: usize,
    out: *mut f64,
) -> FedgenStatus {
    guarded(|| {
        if out.is_null() {
            return fail(FedgenStatus::NullPointer, "null argument");
        }
        match Schedule::constant(rounds, steps, eta) {
            Ok(s) => {
                *out = b_coefficient(&s, r, l);
                FedgenStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// Runs the exact verification suite. `passed` is set to whether every check held;
/// `report` (optional) receives the printed report.
///
/// # Safety
/// `passed` must be valid; `report` may be null.
#[no_mangle]
pub unsafe extern "C" fn fedgen_verify(passed: *mut bool, report: *mut *mut c_char) -> FedgenStatus {
    guarded(|| {
        if passed.is_null() {
            return fail(FedgenStatus::NullPointer, "null argument");
        }
        match run_verify(0.0) {
            Ok(r) => {
                *passed = r.passed();
                if report.is_null() {
                    FedgenStatus::Ok
                } else {
                    out_string(r.text, report)
                }
            }
            Err(e) => from_error(&e),
        }
    })
}
