//! C ABI over the `hybridcub` library.
//!
//! Objects cross the boundary as opaque handles created by `hc_*_new` /
//! `hc_*_load` / `hc_*_run` and released by the matching `hc_*_free`.
//! Every fallible call returns an [`HcStatus`]; the message of the most
//! recent failure on the calling thread is available through
//! [`hc_last_error`]. Matrices are dense row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, c_void, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use hybridcub::cubature::{make_rule, stability_factor, CubatureRule, RuleKind};
use hybridcub::filter::{CubatureFilter, FilterError, GaussianBelief, Transition};
use hybridcub::scenario::{execute, load_scenario, write_artifacts, ScenarioFile, ScenarioResult};
use nalgebra::{DMatrix, DVector};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    RuleError = 3,
    FilterError = 4,
    ScenarioError = 5,
    Panic = 6,
}

/// Rule families accepted by [`hc_rule_new`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcRuleKind {
    CnfI = 0,
    CnfII = 1,
    CnfIII = 2,
    CnfIV = 3,
    CnfV = 4,
    CnfVI = 5,
    Ukf = 6,
}

impl From<HcRuleKind> for RuleKind {
    fn from(k: HcRuleKind) -> Self {
        match k {
            HcRuleKind::CnfI => RuleKind::CnfI,
            HcRuleKind::CnfII => RuleKind::CnfII,
            HcRuleKind::CnfIII => RuleKind::CnfIII,
            HcRuleKind::CnfIV => RuleKind::CnfIV,
            HcRuleKind::CnfV => RuleKind::CnfV,
            HcRuleKind::CnfVI => RuleKind::CnfVI,
            HcRuleKind::Ukf => RuleKind::Ukf,
        }
    }
}

/// Opaque cubature rule.
pub struct HcRule(CubatureRule);

/// Opaque square-root filter holding its current Gaussian belief.
pub struct HcFilter {
    engine: CubatureFilter,
    belief: GaussianBelief,
}

/// Opaque parsed scenario.
pub struct HcScenario(ScenarioFile);

/// Opaque finished scenario run.
pub struct HcResult(ScenarioResult);

/// Model callback: read `n_in` values from `x`, write `n_out` values to
/// `out`, return 0 on success.
pub type HcModelFn =
    Option<unsafe extern "C" fn(user: *mut c_void, x: *const f64, n_in: usize, out: *mut f64, n_out: usize) -> c_int>;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: HcStatus, msg: impl Into<String>) -> HcStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> HcStatus) -> HcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(HcStatus::Panic, msg)
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize) -> Option<&'a [f64]> {
    if len == 0 {
        return Some(&[]);
    }
    (!p.is_null()).then(|| std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize) -> Option<&'a mut [f64]> {
    if len == 0 {
        return Some(&mut []);
    }
    (!p.is_null()).then(|| std::slice::from_raw_parts_mut(p, len))
}

unsafe fn str_arg(p: *const c_char) -> Result<String, HcStatus> {
    if p.is_null() {
        return Err(fail(HcStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| fail(HcStatus::InvalidArgument, "string is not UTF-8"))
}

fn write_out<T>(out: *mut *mut T, value: T) -> HcStatus {
    unsafe { *out = Box::into_raw(Box::new(value)) };
    HcStatus::Ok
}

/// Copy the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn hc_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Build a rule of `kind` in dimension `n`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hc_rule_new(kind: HcRuleKind, n: usize, out: *mut *mut HcRule) -> HcStatus {
    guard(|| {
        if out.is_null() {
            return fail(HcStatus::NullPointer, "out is null");
        }
        match make_rule(kind.into(), n) {
            Ok(r) => write_out(out, HcRule(r)),
            Err(e) => fail(HcStatus::RuleError, e.to_string()),
        }
    })
}

/// # Safety
/// `rule` must come from [`hc_rule_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn hc_rule_free(rule: *mut HcRule) {
    if !rule.is_null() {
        drop(Box::from_raw(rule));
    }
}

/// Number of points; 0 for a null handle.
///
/// # Safety
/// `rule` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hc_rule_len(rule: *const HcRule) -> usize {
    rule.as_ref().map_or(0, |r| r.0.len())
}

/// # Safety
/// `rule` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hc_rule_dim(rule: *const HcRule) -> usize {
    rule.as_ref().map_or(0, |r| r.0.n)
}

/// # Safety
/// `rule` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hc_rule_degree(rule: *const HcRule) -> usize {
    rule.as_ref().map_or(0, |r| r.0.degree)
}

/// `sum |w| / sum w`; NaN for a null handle.
///
/// # Safety
/// `rule` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn hc_rule_stability_factor(rule: *const HcRule) -> f64 {
    rule.as_ref().map_or(f64::NAN, |r| stability_factor(&r.0))
}

/// Copy weights (`len` values) and points (`len * dim`, row-major).
/// Either output may be null to skip it.
///
/// # Safety
/// Non-null outputs must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn hc_rule_copy(rule: *const HcRule, weights: *mut f64, points: *mut f64) -> HcStatus {
    guard(|| {
        let Some(r) = rule.as_ref() else {
            return fail(HcStatus::NullPointer, "rule is null");
        };
        let r = &r.0;
        if !weights.is_null() {
            std::slice::from_raw_parts_mut(weights, r.len()).copy_from_slice(r.weights.as_slice());
        }
        if !points.is_null() {
            let dst = std::slice::from_raw_parts_mut(points, r.len() * r.n);
            for i in 0..r.len() {
                for j in 0..r.n {
                    dst[i * r.n + j] = r.points[(i, j)];
                }
            }
        }
        HcStatus::Ok
    })
}

/// Create a filter over a copy of `rule`, starting from mean `mean` (n) and
/// covariance square root `sqrt_cov` (n x n, row-major, lower triangular).
///
/// # Safety
/// Pointers must be valid for the stated sizes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn hc_filter_new(
    rule: *const HcRule,
    mean: *const f64,
    sqrt_cov: *const f64,
    out: *mut *mut HcFilter,
) -> HcStatus {
    guard(|| {
        let (Some(r), false) = (rule.as_ref(), out.is_null()) else {
            return fail(HcStatus::NullPointer, "rule or out is null");
        };
        let n = r.0.n;
        let (Some(m), Some(s)) = (slice(mean, n), slice(sqrt_cov, n * n)) else {
            return fail(HcStatus::NullPointer, "mean or sqrt_cov is null");
        };
        let belief = GaussianBelief::new(DVector::from_column_slice(m), DMatrix::from_row_slice(n, n, s));
        if !belief.is_finite() {
            return fail(HcStatus::InvalidArgument, "initial belief is not finite");
        }
        write_out(
            out,
            HcFilter {
                engine: CubatureFilter::new(r.0.clone()),
                belief,
            },
        )
    })
}

/// # Safety
/// `filter` must come from [`hc_filter_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn hc_filter_free(filter: *mut HcFilter) {
    if !filter.is_null() {
        drop(Box::from_raw(filter));
    }
}

struct Callback {
    f: unsafe extern "C" fn(*mut c_void, *const f64, usize, *mut f64, usize) -> c_int,
    user: *mut c_void,
    n_in: usize,
    n_out: usize,
}

impl Transition for Callback {
    fn dim_in(&self) -> usize {
        self.n_in
    }
    fn dim_out(&self) -> usize {
        self.n_out
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<(), FilterError> {
        let code = unsafe { (self.f)(self.user, x.as_ptr(), x.len(), out.as_mut_ptr(), out.len()) };
        if code == 0 {
            Ok(())
        } else {
            Err(FilterError::Model(format!("callback returned {code}")))
        }
    }
}

/// Time update through `model` (n -> n) with process-noise square root
/// `sqrt_q` (n x n, row-major).
///
/// # Safety
/// `filter` must be live; `sqrt_q` must hold n*n doubles; `model` must be
/// safe to call with `user`.
#[no_mangle]
pub unsafe extern "C" fn hc_filter_predict(
    filter: *mut HcFilter,
    model: HcModelFn,
    user: *mut c_void,
    sqrt_q: *const f64,
) -> HcStatus {
    guard(|| {
        let (Some(f), Some(cb)) = (filter.as_mut(), model) else {
            return fail(HcStatus::NullPointer, "filter or model is null");
        };
        let n = f.belief.dim();
        let Some(q) = slice(sqrt_q, n * n) else {
            return fail(HcStatus::NullPointer, "sqrt_q is null");
        };
        let m = Callback {
            f: cb,
            user,
            n_in: n,
            n_out: n,
        };
        match f.engine.predict(&f.belief, &m, &DMatrix::from_row_slice(n, n, q)) {
            Ok((b, _)) => {
                f.belief = b;
                HcStatus::Ok
            }
            Err(e) => fail(HcStatus::FilterError, e.to_string()),
        }
    })
}

/// Measurement update with `m` outputs: `z` (m), measurement map (n -> m)
/// and noise square root `sqrt_r` (m x m, row-major).
///
/// # Safety
/// As [`hc_filter_predict`], with `z` holding m and `sqrt_r` m*m doubles.
#[no_mangle]
pub unsafe extern "C" fn hc_filter_update(
    filter: *mut HcFilter,
    model: HcModelFn,
    user: *mut c_void,
    m: usize,
    z: *const f64,
    sqrt_r: *const f64,
) -> HcStatus {
    guard(|| {
        let (Some(f), Some(cb)) = (filter.as_mut(), model) else {
            return fail(HcStatus::NullPointer, "filter or model is null");
        };
        if m == 0 {
            return fail(HcStatus::InvalidArgument, "measurement dimension is 0");
        }
        let (Some(zs), Some(r)) = (slice(z, m), slice(sqrt_r, m * m)) else {
            return fail(HcStatus::NullPointer, "z or sqrt_r is null");
        };
        let h = Callback {
            f: cb,
            user,
            n_in: f.belief.dim(),
            n_out: m,
        };
        match f.engine.update(
            &f.belief,
            &DVector::from_column_slice(zs),
            &h,
            &DMatrix::from_row_slice(m, m, r),
        ) {
            Ok(u) => {
                f.belief = u.belief;
                HcStatus::Ok
            }
            Err(e) => fail(HcStatus::FilterError, e.to_string()),
        }
    })
}

/// State dimension; 0 for a null handle.
///
/// # Safety
/// `filter` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn hc_filter_dim(filter: *const HcFilter) -> usize {
    filter.as_ref().map_or(0, |f| f.belief.dim())
}

/// Copy the mean (n) and covariance (n x n, row-major); either may be null.
///
/// # Safety
/// Non-null outputs must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn hc_filter_belief(filter: *const HcFilter, mean: *mut f64, cov: *mut f64) -> HcStatus {
    guard(|| {
        let Some(f) = filter.as_ref() else {
            return fail(HcStatus::NullPointer, "filter is null");
        };
        let n = f.belief.dim();
        if let Some(m) = slice_mut(mean, n).filter(|_| !mean.is_null()) {
            m.copy_from_slice(f.belief.mean.as_slice());
        }
        if let Some(c) = slice_mut(cov, n * n).filter(|_| !cov.is_null()) {
            let p = f.belief.cov();
            for i in 0..n {
                for j in 0..n {
                    c[i * n + j] = p[(i, j)];
                }
            }
        }
        HcStatus::Ok
    })
}

/// Load a scenario file with `n_overrides` `key=value` overrides.
///
/// # Safety
/// `path` and each override must be NUL-terminated strings; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn hc_scenario_load(
    path: *const c_char,
    overrides: *const *const c_char,
    n_overrides: usize,
    out: *mut *mut HcScenario,
) -> HcStatus {
    guard(|| {
        if out.is_null() {
            return fail(HcStatus::NullPointer, "out is null");
        }
        let path = match str_arg(path) {
            Ok(p) => PathBuf::from(p),
            Err(s) => return s,
        };
        if n_overrides > 0 && overrides.is_null() {
            return fail(HcStatus::NullPointer, "overrides is null");
        }
        let mut sets = Vec::with_capacity(n_overrides);
        for i in 0..n_overrides {
            match str_arg(*overrides.add(i)) {
                Ok(s) => sets.push(s),
                Err(s) => return s,
            }
        }
        match load_scenario(&path, &sets) {
            Ok(f) => write_out(out, HcScenario(f)),
            Err(e) => fail(HcStatus::ScenarioError, e.to_string()),
        }
    })
}

/// # Safety
/// `scenario` must come from [`hc_scenario_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn hc_scenario_free(scenario: *mut HcScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Calibrate (unless thresholds are configured) and run every estimator.
///
/// # Safety
/// `scenario` must be live; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn hc_scenario_run(scenario: *const HcScenario, out: *mut *mut HcResult) -> HcStatus {
    guard(|| {
        let (Some(s), false) = (scenario.as_ref(), out.is_null()) else {
            return fail(HcStatus::NullPointer, "scenario or out is null");
        };
        match execute(&s.0) {
            Ok(r) => write_out(out, HcResult(r)),
            Err(e) => fail(HcStatus::ScenarioError, e.to_string()),
        }
    })
}

/// # Safety
/// `result` must come from [`hc_scenario_run`] or be null.
#[no_mangle]
pub unsafe extern "C" fn hc_result_free(result: *mut HcResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Number of estimators in the run; 0 for a null handle.
///
/// # Safety
/// `result` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn hc_result_estimators(result: *const HcResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.labels.len())
}

/// Per-estimator counts: Monte-Carlo runs, runs with a detection, runs
/// with at least one false-alarm sample. Outputs may be null.
///
/// # Safety
/// `result` must be live; non-null outputs must be valid.
#[no_mangle]
pub unsafe extern "C" fn hc_result_counts(
    result: *const HcResult,
    estimator: usize,
    runs: *mut usize,
    detected: *mut usize,
    false_alarm_runs: *mut usize,
) -> HcStatus {
    guard(|| {
        let Some(r) = result.as_ref() else {
            return fail(HcStatus::NullPointer, "result is null");
        };
        let Some(l) = r.0.labels.get(estimator) else {
            return fail(HcStatus::InvalidArgument, format!("estimator index {estimator} out of range"));
        };
        let put = |p: *mut usize, v: usize| {
            if !p.is_null() {
                *p = v;
            }
        };
        put(runs, l.metrics.len());
        put(detected, l.metrics.iter().filter(|m| m.fdt.is_some()).count());
        put(
            false_alarm_runs,
            l.metrics.iter().filter(|m| m.false_alarm_samples > 0).count(),
        );
        HcStatus::Ok
    })
}

/// Write the CSV/JSON artifacts below directory `dir`.
///
/// # Safety
/// `result` must be live; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hc_result_write(result: *const HcResult, dir: *const c_char) -> HcStatus {
    guard(|| {
        let Some(r) = result.as_ref() else {
            return fail(HcStatus::NullPointer, "result is null");
        };
        let dir = match str_arg(dir) {
            Ok(d) => PathBuf::from(d),
            Err(s) => return s,
        };
        match write_artifacts(&r.0, &dir) {
            Ok(()) => HcStatus::Ok,
            Err(e) => fail(HcStatus::ScenarioError, e.to_string()),
        }
    })
}
