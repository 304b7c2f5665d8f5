//! C ABI over grids, protocols, kernels and the QSD solver.
//!
//! Every object is an opaque heap handle released with its `_free` function.
//! Fallible calls return a [`QsdlabStatus`]; the message of the most recent
//! failure on the calling thread is available from [`qsdlab_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use qsdlab::config::ExperimentConfig;
use qsdlab::qsd::{self, QsdOptions, QsdSolution};
use qsdlab::{PayoffGame, RevisionProtocol, SimplexGrid, TransitionKernel};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QsdlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

pub struct QsdlabGrid {
    inner: SimplexGrid,
}

pub struct QsdlabProtocol {
    inner: RevisionProtocol,
}

pub struct QsdlabKernel {
    inner: TransitionKernel,
}

pub struct QsdlabQsd {
    inner: QsdSolution,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn fail(status: QsdlabStatus, msg: impl std::fmt::Display) -> QsdlabStatus {
    set_error(msg.to_string());
    status
}

/// Runs `f`, turning panics into [`QsdlabStatus::Panic`].
fn guard(f: impl FnOnce() -> QsdlabStatus) -> QsdlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == QsdlabStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(QsdlabStatus::Panic, "internal panic"),
    }
}

unsafe fn boxed<T>(out: *mut *mut T, value: T) -> QsdlabStatus {
    *out = Box::into_raw(Box::new(value));
    QsdlabStatus::Ok
}

macro_rules! deref {
    ($p:expr) => {
        match unsafe { $p.as_ref() } {
            Some(r) => r,
            None => return fail(QsdlabStatus::NullPointer, concat!("null ", stringify!($p))),
        }
    };
}

/// Message of the last failure on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn qsdlab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qsdlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn qsdlab_grid_new(d: usize, n: u32, out: *mut *mut QsdlabGrid) -> QsdlabStatus {
    guard(|| {
        if out.is_null() {
            return fail(QsdlabStatus::NullPointer, "null out");
        }
        match SimplexGrid::new(d, n) {
            Ok(g) => boxed(out, QsdlabGrid { inner: g }),
            Err(e) => fail(QsdlabStatus::InvalidArgument, e),
        }
    })
}

/// Number of states, or 0 for a null handle.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qsdlab_grid_len(grid: *const QsdlabGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.inner.len())
}

/// Number of interior states, or 0 for a null handle.
///
/// # Safety
/// `grid` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qsdlab_grid_interior_len(grid: *const QsdlabGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.inner.interior_len())
}

/// Writes the `d` coordinates of state `rank` into `out`.
///
/// # Safety
/// `grid` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn qsdlab_grid_coords(grid: *const QsdlabGrid, rank: usize, out: *mut f64, len: usize) -> QsdlabStatus {
    guard(|| {
        let g = deref!(grid);
        if out.is_null() {
            return fail(QsdlabStatus::NullPointer, "null out");
        }
        if rank >= g.inner.len() {
            return fail(QsdlabStatus::InvalidArgument, format!("rank {rank} out of range"));
        }
        let d = g.inner.d();
        if len < d {
            return fail(QsdlabStatus::BufferTooSmall, format!("need {d} doubles"));
        }
        std::slice::from_raw_parts_mut(out, d).copy_from_slice(&g.inner.coords(rank));
        QsdlabStatus::Ok
    })
}

/// # Safety
/// `grid` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qsdlab_grid_free(grid: *mut QsdlabGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Uniform-aspiration imitation for the `d x d` row-major payoff matrix.
///
/// # Safety
/// `payoff` must hold `d * d` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qsdlab_protocol_aspiration_uniform(
    payoff: *const f64,
    d: usize,
    scale: f64,
    out: *mut *mut QsdlabProtocol,
) -> QsdlabStatus {
    guard(|| {
        if payoff.is_null() || out.is_null() {
            return fail(QsdlabStatus::NullPointer, "null payoff or out");
        }
        if d < 2 {
            return fail(QsdlabStatus::InvalidArgument, "d must be at least 2");
        }
        let flat = std::slice::from_raw_parts(payoff, d * d);
        let rows: Vec<Vec<f64>> = flat.chunks(d).map(<[f64]>::to_vec).collect();
        let built = PayoffGame::new(&rows).and_then(|g| RevisionProtocol::aspiration_uniform(g, scale));
        match built {
            Ok(p) => boxed(out, QsdlabProtocol { inner: p }),
            Err(e) => fail(QsdlabStatus::InvalidArgument, e),
        }
    })
}

/// Protocol described by the `[model]` section of a TOML config.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qsdlab_protocol_from_toml(toml: *const c_char, out: *mut *mut QsdlabProtocol) -> QsdlabStatus {
    guard(|| {
        if toml.is_null() || out.is_null() {
            return fail(QsdlabStatus::NullPointer, "null toml or out");
        }
        let Ok(text) = CStr::from_ptr(toml).to_str() else {
            return fail(QsdlabStatus::InvalidArgument, "config is not UTF-8");
        };
        match ExperimentConfig::from_toml(text) {
            Ok(c) => boxed(out, QsdlabProtocol { inner: c.protocol }),
            Err(e) => fail(QsdlabStatus::Config, e),
        }
    })
}

/// Writes the mean field at `x` (length `d`) into `out` (length `d`).
///
/// # Safety
/// `protocol` must be live; `x` and `out` must hold `d` doubles each.
#[no_mangle]
pub unsafe extern "C" fn qsdlab_protocol_mean_field(
    protocol: *const QsdlabProtocol,
    x: *const f64,
    d: usize,
    out: *mut f64,
) -> QsdlabStatus {
    guard(|| {
        let p = deref!(protocol);
        if x.is_null() || out.is_null() {
            return fail(QsdlabStatus::NullPointer, "null x or out");
        }
        if d != p.inner.d() {
            return fail(QsdlabStatus::InvalidArgument, format!("protocol has d = {}", p.inner.d()));
        }
        match p.inner.mean_field(std::slice::from_raw_parts(x, d)) {
            Ok(f) => {
                std::slice::from_raw_parts_mut(out, d).copy_from_slice(&f);
                QsdlabStatus::Ok
            }
            Err(e) => fail(QsdlabStatus::InvalidArgument, e),
        }
    })
}

/// # Safety
/// `protocol` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qsdlab_protocol_free(protocol: *mut QsdlabProtocol) {
    if !protocol.is_null() {
        drop(Box::from_raw(protocol));
    }
}

/// Assembles the transition kernel of `protocol` on `grid`.
///
/// # Safety
/// Both handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qsdlab_kernel_new(
    protocol: *const QsdlabProtocol,
    grid: *const QsdlabGrid,
    out: *mut *mut QsdlabKernel,
) -> QsdlabStatus {
    guard(|| {
        let p = deref!(protocol);
        let g = deref!(grid);
        if out.is_null() {
            return fail(QsdlabStatus::NullPointer, "null out");
        }
        match TransitionKernel::assemble(&p.inner, &g.inner) {
            Ok(k) => boxed(out, QsdlabKernel { inner: k }),
            Err(e) => fail(QsdlabStatus::Numerical, e),
        }
    })
}

/// # Safety
/// `kernel` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qsdlab_kernel_free(kernel: *mut QsdlabKernel) {
    if !kernel.is_null() {
        drop(Box::from_raw(kernel));
    }
}

/// Power iteration on the interior block. Non-positive `tol` or zero
/// `max_iter` select the library defaults.
///
/// # Safety
/// `kernel` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qsdlab_qsd_solve(
    kernel: *const QsdlabKernel,
    tol: f64,
    max_iter: usize,
    out: *mut *mut QsdlabQsd,
) -> QsdlabStatus {
    guard(|| {
        let k = deref!(kernel);
        if out.is_null() {
            return fail(QsdlabStatus::NullPointer, "null out");
        }
        let mut opts = QsdOptions::default();
        if tol > 0.0 {
            opts.tol = tol;
        }
        if max_iter > 0 {
            opts.max_iter = max_iter;
        }
        match qsd::solve_qsd(k.inner.interior(), opts) {
            Ok(s) => boxed(out, QsdlabQsd { inner: s }),
            Err(e) => fail(QsdlabStatus::Numerical, e),
        }
    })
}

/// Scalar summary of a solution.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct QsdlabQsdSummary {
    pub rho: f64,
    pub one_minus_rho: f64,
    pub theta: f64,
    pub expected_t0: f64,
    pub residual: f64,
    pub gap_estimate: f64,
    pub iterations: usize,
}

/// # Safety
/// `solution` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qsdlab_qsd_summary(solution: *const QsdlabQsd, out: *mut QsdlabQsdSummary) -> QsdlabStatus {
    guard(|| {
        let s = &deref!(solution).inner;
        if out.is_null() {
            return fail(QsdlabStatus::NullPointer, "null out");
        }
        *out = QsdlabQsdSummary {
            rho: s.rho,
            one_minus_rho: s.one_minus_rho,
            theta: s.theta,
            expected_t0: s.expected_t0,
            residual: s.residual,
            gap_estimate: s.gap_estimate,
            iterations: s.iterations,
        };
        QsdlabStatus::Ok
    })
}

/// Copies the QSD (indexed by interior position) into `out`. With a null
/// `out`, only reports the required length through `needed`.
///
/// # Safety
/// `solution` must be live; `out` must hold `len` doubles when non-null;
/// `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn qsdlab_qsd_mu(solution: *const QsdlabQsd, out: *mut f64, len: usize, needed: *mut usize) -> QsdlabStatus {
    guard(|| {
        let mu = &deref!(solution).inner.mu;
        if let Some(n) = needed.as_mut() {
            *n = mu.len();
        }
        if out.is_null() {
            return QsdlabStatus::Ok;
        }
        if len < mu.len() {
            return fail(QsdlabStatus::BufferTooSmall, format!("need {} doubles", mu.len()));
        }
        ptr::copy_nonoverlapping(mu.as_ptr(), out, mu.len());
        QsdlabStatus::Ok
    })
}

/// # Safety
/// `solution` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qsdlab_qsd_free(solution: *mut QsdlabQsd) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}
