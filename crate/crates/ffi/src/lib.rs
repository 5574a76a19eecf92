//! C interface to the sverl explanation engine.
//!
//! Every fallible function returns a [`SverlStatus`]. On failure the message
//! is kept per thread and can be read with [`sverl_last_error`]. Handles are
//! opaque; free them with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sverl::approx::{mc_outcome_shapley, mc_shapley, McConfig, McTarget};
use sverl::characteristics::Removal;
use sverl::explain::{Explainer, ExplanationRequest, Target};
use sverl::mdp::SolverConfig;
use sverl::shapley::{shapley_exact, ShapleyReport};
use sverl::Error;

/// Status codes. The nonzero values match the exit codes of the `sverl`
/// command where the two overlap.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SverlStatus {
    Ok = 0,
    Io = 1,
    NullArgument = 2,
    UnknownEnvironment = 3,
    Solver = 4,
    Conditioning = 5,
    Mismatch = 6,
    InvalidInput = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SverlTarget {
    Behaviour = 0,
    Outcome = 1,
    Prediction = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SverlRemoval {
    Conditional = 0,
    Marginal = 1,
}

/// Endpoints of an explanation: `v(empty)`, `v(all features)` and the
/// efficiency residual `grand - baseline - sum(phi)`.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SverlSummary {
    pub baseline: f64,
    pub grand: f64,
    pub residual: f64,
}

/// A solved environment ready to explain.
pub struct SverlExplainer {
    inner: Explainer,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> SverlStatus {
    match e {
        Error::Io(_) => SverlStatus::Io,
        Error::UnknownEnvironment(_) => SverlStatus::UnknownEnvironment,
        Error::EpisodicSolvability(_) | Error::ImproperPolicy(_) => SverlStatus::Solver,
        Error::ZeroMassConditioning(_) | Error::InvalidComposite(_) | Error::EmptyRenormalisationSupport(_) => {
            SverlStatus::Conditioning
        }
        _ => SverlStatus::InvalidInput,
    }
}

struct Fail(SverlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, records any failure and turns panics into [`SverlStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SverlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SverlStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SverlStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(SverlStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SverlStatus::InvalidInput, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a>(h: *const SverlExplainer) -> Result<&'a Explainer, Fail> {
    h.as_ref().map(|h| &h.inner).ok_or_else(|| Fail(SverlStatus::NullArgument, "explainer handle is null".into()))
}

fn target(t: SverlTarget) -> Target {
    match t {
        SverlTarget::Behaviour => Target::Behaviour,
        SverlTarget::Outcome => Target::Outcome,
        SverlTarget::Prediction => Target::Prediction,
    }
}

fn removal(r: SverlRemoval) -> Removal {
    match r {
        SverlRemoval::Conditional => Removal::Conditional,
        SverlRemoval::Marginal => Removal::Marginal,
    }
}

fn copy_out(dst: *mut f64, len: usize, src: &[f64], what: &str) -> Result<(), Fail> {
    if src.len() > len {
        return Err(Fail(SverlStatus::BufferTooSmall, format!("{what} needs {} slots, got {len}", src.len())));
    }
    if dst.is_null() {
        return Err(Fail(SverlStatus::NullArgument, format!("{what} is null")));
    }
    unsafe { ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len()) };
    Ok(())
}

fn write_summary(out: *mut SverlSummary, r: &ShapleyReport) {
    if let Some(out) = unsafe { out.as_mut() } {
        *out = SverlSummary { baseline: r.baseline, grand: r.grand, residual: r.residual };
    }
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next sverl call on the same thread.
#[no_mangle]
pub extern "C" fn sverl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sverl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Opens a catalog environment by name, or an interchange JSON file by
/// path, and solves it with the default tolerance.
///
/// # Safety
/// `env_or_path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sverl_explainer_open(env_or_path: *const c_char, out: *mut *mut SverlExplainer) -> SverlStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail(SverlStatus::NullArgument, "out is null".into()));
        }
        *out = ptr::null_mut();
        let name = str_arg(env_or_path, "env_or_path")?;
        let inner = Explainer::open(name, SolverConfig::default())?;
        *out = Box::into_raw(Box::new(SverlExplainer { inner }));
        Ok(())
    })
}

/// # Safety
/// `h` must come from [`sverl_explainer_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sverl_explainer_free(h: *mut SverlExplainer) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Number of features, or 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sverl_explainer_n_features(h: *const SverlExplainer) -> usize {
    h.as_ref().map_or(0, |h| h.inner.mdp().schema().names().len())
}

/// Number of non-terminal states, or 0 for a null handle.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sverl_explainer_n_states(h: *const SverlExplainer) -> usize {
    h.as_ref().map_or(0, |h| h.inner.mdp().n_non_terminal())
}

/// Steady-state probability of the state named by `state`
/// (e.g. `"direction=R,distance=10"`).
///
/// # Safety
/// `h` must be a live handle, `state` a NUL-terminated string and `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sverl_state_probability(h: *const SverlExplainer, state: *const c_char, out: *mut f64) -> SverlStatus {
    guard(|| {
        let ex = handle(h)?;
        let s = ex.select_state(str_arg(state, "state")?)?;
        match out.as_mut() {
            Some(out) => *out = ex.occ.prob(s),
            None => return Err(Fail(SverlStatus::NullArgument, "out is null".into())),
        }
        Ok(())
    })
}

unsafe fn resolve(
    ex: &Explainer,
    t: SverlTarget,
    state: *const c_char,
    action: *const c_char,
) -> Result<(usize, Option<usize>), Fail> {
    let s = ex.select_state(str_arg(state, "state")?)?;
    let a = match (t, action.is_null()) {
        (SverlTarget::Behaviour, false) => Some(ex.select_action(str_arg(action, "action")?)?),
        (SverlTarget::Behaviour, true) => {
            return Err(Fail(SverlStatus::NullArgument, "behaviour explanations need an action".into()))
        }
        (_, true) => None,
        (_, false) => return Err(Fail(SverlStatus::InvalidInput, "an action only applies to behaviour explanations".into())),
    };
    Ok((s, a))
}

/// Exact Shapley values. `action` is required for behaviour targets and
/// must be null otherwise. `phi` receives one value per feature; `summary`
/// may be null.
///
/// # Safety
/// Pointers must be valid; `phi` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sverl_explain_exact(
    h: *const SverlExplainer,
    t: SverlTarget,
    state: *const c_char,
    action: *const c_char,
    r: SverlRemoval,
    phi: *mut f64,
    len: usize,
    summary: *mut SverlSummary,
) -> SverlStatus {
    guard(|| {
        let ex = handle(h)?;
        let (s, a) = resolve(ex, t, state, action)?;
        let report = shapley_exact(&ex.game(target(t), s, a, removal(r))?)?;
        copy_out(phi, len, &report.phi, "phi")?;
        write_summary(summary, &report);
        Ok(())
    })
}

/// Monte Carlo Shapley values from `samples` draws seeded by `seed`.
/// `std_error` may be null; otherwise it receives one standard error per
/// feature.
///
/// # Safety
/// Pointers must be valid; `phi` and a non-null `std_error` must hold
/// `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sverl_explain_mc(
    h: *const SverlExplainer,
    t: SverlTarget,
    state: *const c_char,
    action: *const c_char,
    r: SverlRemoval,
    samples: u64,
    seed: u64,
    phi: *mut f64,
    std_error: *mut f64,
    len: usize,
    summary: *mut SverlSummary,
) -> SverlStatus {
    guard(|| {
        let ex = handle(h)?;
        let (s, a) = resolve(ex, t, state, action)?;
        let cfg = McConfig::new(samples, seed);
        let ctx = ex.ctx();
        let est = match t {
            SverlTarget::Behaviour => mc_shapley(&ctx, McTarget::Behaviour(a.expect("resolved")), s, removal(r), &cfg)?,
            SverlTarget::Prediction => mc_shapley(&ctx, McTarget::Prediction(&ex.vhat), s, removal(r), &cfg)?,
            SverlTarget::Outcome => mc_outcome_shapley(&ctx, s, ex.values.v[s], removal(r), &cfg)?.0,
        };
        copy_out(phi, len, &est.report.phi, "phi")?;
        if !std_error.is_null() {
            copy_out(std_error, len, &est.std_error, "std_error")?;
        }
        write_summary(summary, &est.report);
        Ok(())
    })
}

/// Runs a JSON explanation request against the handle's environment and
/// returns the report as canonical JSON. Free the result with
/// [`sverl_string_free`].
///
/// # Safety
/// `h` must be a live handle, `request_json` a NUL-terminated string and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sverl_explain_json(
    h: *const SverlExplainer,
    request_json: *const c_char,
    out: *mut *mut c_char,
) -> SverlStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail(SverlStatus::NullArgument, "out is null".into()));
        }
        *out = ptr::null_mut();
        let ex = handle(h)?;
        let req: ExplanationRequest = serde_json::from_str(str_arg(request_json, "request_json")?).map_err(Error::from)?;
        let json = ex.explain(&req)?.to_json()?;
        *out = CString::new(json).map_err(|e| Fail(SverlStatus::InvalidInput, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn sverl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Recomputes a reference table by id. `pass` receives whether every row
/// matched; a mismatch also returns [`SverlStatus::Mismatch`].
///
/// # Safety
/// `id` must be a NUL-terminated string and `pass` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sverl_reproduce(id: *const c_char, pass: *mut bool) -> SverlStatus {
    guard(|| {
        let report = sverl::reproduce::reproduce(str_arg(id, "id")?)?;
        match pass.as_mut() {
            Some(p) => *p = report.pass,
            None => return Err(Fail(SverlStatus::NullArgument, "pass is null".into())),
        }
        if !report.pass {
            return Err(Fail(SverlStatus::Mismatch, format!("table {} does not match", report.id)));
        }
        Ok(())
    })
}
