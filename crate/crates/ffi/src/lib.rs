//! C ABI over `homog_core`.
//!
//! Every fallible function returns a [`HomogStatus`]; on failure the message
//! is available from [`homog_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use homog_core::cell::{solve_linear_correctors, CellData, CellEvaluator, LinearCoefficient};
use homog_core::cli::{exit_code, EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_SOLVER};
use homog_core::discretization::{CellGrid, MacroFunction};
use homog_core::effective::build_linear_effective;
use homog_core::epsilon::{solve_epsilon, EpsilonTemplate};
use homog_core::expr::Expr;
use homog_core::fields::{PeriodicField, PotentialField, DEFAULT_MEAN_TOL};
use homog_core::solver::SolverConfig;
use homog_core::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HomogStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or an out-of-range argument.
    InvalidArgument = 1,
    /// Malformed field, expression or grid.
    Config = 2,
    /// Coefficient not positive, potential not centred.
    Hypothesis = 3,
    /// A linear or nonlinear solve failed.
    Solver = 4,
    /// Internal panic caught at the boundary.
    Internal = 5,
}

/// Effective coefficients of the linear (p = 2) model, row-major.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct HomogLinearModel {
    pub dim: u32,
    pub abar: [f64; 4],
    pub bbar: [f64; 2],
    pub cbar: [f64; 2],
    pub sbar: f64,
    pub min_eigenvalue: f64,
}

/// On-demand nonlinear cell solver for fixed coefficients.
pub struct HomogCellEvaluator(CellEvaluator);

/// Nodal values of a solution of the oscillating problem.
pub struct HomogSolution(MacroFunction);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HomogStatus {
    match exit_code(e) {
        EXIT_CONFIG => HomogStatus::Config,
        EXIT_HYPOTHESIS => HomogStatus::Hypothesis,
        EXIT_SOLVER => HomogStatus::Solver,
        _ => HomogStatus::Internal,
    }
}

enum Fail {
    Arg(String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HomogStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HomogStatus::Ok,
        Ok(Err(Fail::Arg(m))) => {
            set_error(m);
            HomogStatus::InvalidArgument
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            HomogStatus::Internal
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Arg(format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Arg(format!("{what} is not UTF-8")))
}

fn dim_of(dim: u32) -> Result<usize, Fail> {
    match dim {
        1 | 2 => Ok(dim as usize),
        _ => Err(Fail::Arg(format!("dimension must be 1 or 2, got {dim}"))),
    }
}

unsafe fn fields(dim: usize, a: *const c_char, v: *const c_char) -> Result<(PeriodicField, PotentialField), Fail> {
    let a = PeriodicField::from_preset(dim, text(a, "coefficient")?)?;
    let v = PotentialField::new(
        PeriodicField::from_preset(dim, text(v, "potential")?)?,
        DEFAULT_MEAN_TOL,
    )?;
    Ok((a, v))
}

unsafe fn out_ptr<'a, T>(p: *mut T) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail::Arg("output pointer is null".into()))
}

/// Version string of the library; static, never freed.
#[no_mangle]
pub extern "C" fn homog_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn homog_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Linear effective model for coefficient `a` and potential `v` given as
/// presets or expressions, on a cell grid with `m` elements per axis.
///
/// # Safety
/// `a` and `v` must be nul-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn homog_linear_effective(
    dim: u32,
    a: *const c_char,
    v: *const c_char,
    m: u32,
    out: *mut HomogLinearModel,
) -> HomogStatus {
    guard(|| {
        let dim = dim_of(dim)?;
        let (a, v) = fields(dim, a, v)?;
        let out = out_ptr(out)?;
        let grid = CellGrid::new(dim, m as usize)?;
        let coef = LinearCoefficient::Scalar(a);
        let corr = solve_linear_correctors(&coef, &v, grid, SolverConfig::default().lin_tol)?;
        let model = build_linear_effective(&corr, &coef, &v)?;
        *out = HomogLinearModel {
            dim: dim as u32,
            abar: [model.abar[0][0], model.abar[0][1], model.abar[1][0], model.abar[1][1]],
            bbar: model.bbar,
            cbar: model.cbar,
            sbar: model.sbar,
            min_eigenvalue: model.min_eigenvalue(),
        };
        Ok(())
    })
}

/// Creates a cell evaluator for exponent `p >= 2` on `m` cell elements per axis.
///
/// # Safety
/// `a` and `v` must be nul-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn homog_cell_evaluator_new(
    dim: u32,
    a: *const c_char,
    v: *const c_char,
    p: f64,
    m: u32,
    out: *mut *mut HomogCellEvaluator,
) -> HomogStatus {
    guard(|| {
        let dim = dim_of(dim)?;
        let (a, v) = fields(dim, a, v)?;
        let out = out_ptr(out)?;
        let data = CellData::new(&a, &v, p, CellGrid::new(dim, m as usize)?)?;
        let eval = CellEvaluator::new(data, SolverConfig::default(), None)?;
        *out = Box::into_raw(Box::new(HomogCellEvaluator(eval)));
        Ok(())
    })
}

/// Effective flux q (two entries, the second zero in 1D) and coupling v at (θ, ξ).
///
/// # Safety
/// `eval` must come from [`homog_cell_evaluator_new`]; `xi` must point to two
/// values; `q` to two writable values and `v` to one.
#[no_mangle]
pub unsafe extern "C" fn homog_cell_evaluate(
    eval: *const HomogCellEvaluator,
    theta: f64,
    xi: *const f64,
    q: *mut f64,
    v: *mut f64,
) -> HomogStatus {
    guard(|| {
        let eval = eval.as_ref().ok_or_else(|| Fail::Arg("evaluator is null".into()))?;
        if xi.is_null() || q.is_null() || v.is_null() {
            return Err(Fail::Arg("xi, q and v must not be null".into()));
        }
        let xi = [*xi, *xi.add(1)];
        let r = eval.0.evaluate(theta, xi, None)?;
        *q = r.q[0];
        *q.add(1) = r.q[1];
        *v = r.v;
        Ok(())
    })
}

/// # Safety
/// `eval` must be null or come from [`homog_cell_evaluator_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn homog_cell_evaluator_free(eval: *mut HomogCellEvaluator) {
    if !eval.is_null() {
        drop(Box::from_raw(eval));
    }
}

/// Solves the oscillating problem on the unit interval or square with
/// ε = 1/`eps_inv`, load expression `f` and `elements_per_period` elements per period.
///
/// # Safety
/// String arguments must be nul-terminated; `out` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn homog_solve_epsilon(
    dim: u32,
    a: *const c_char,
    v: *const c_char,
    f: *const c_char,
    p: f64,
    eps_inv: u32,
    elements_per_period: u32,
    out: *mut *mut HomogSolution,
) -> HomogStatus {
    guard(|| {
        let dim = dim_of(dim)?;
        let (a, v) = fields(dim, a, v)?;
        let f = Expr::parse(text(f, "load")?)?;
        let out = out_ptr(out)?;
        if eps_inv == 0 || elements_per_period == 0 {
            return Err(Fail::Arg("eps_inv and elements_per_period must be positive".into()));
        }
        let mut t = EpsilonTemplate::unit_box(a, v, f, p);
        t.elements_per_period = elements_per_period as usize;
        let prob = t.instantiate(1.0 / eps_inv as f64)?;
        let (u, _) = solve_epsilon(&prob, &SolverConfig::default())?;
        *out = Box::into_raw(Box::new(HomogSolution(u)));
        Ok(())
    })
}

/// Number of nodal values, boundary nodes included.
///
/// # Safety
/// `sol` must be null or a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn homog_solution_len(sol: *const HomogSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.0.values().len())
}

/// Copies up to `len` nodal values into `buf` (row-major in 2D); returns the number copied.
///
/// # Safety
/// `sol` must be a live solution handle and `buf` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn homog_solution_values(sol: *const HomogSolution, buf: *mut f64, len: usize) -> usize {
    match (sol.as_ref(), buf.is_null()) {
        (Some(s), false) => {
            let vals = s.0.values();
            let n = vals.len().min(len);
            ptr::copy_nonoverlapping(vals.as_ptr(), buf, n);
            n
        }
        _ => 0,
    }
}

/// # Safety
/// `sol` must be null or come from [`homog_solve_epsilon`], freed once.
#[no_mangle]
pub unsafe extern "C" fn homog_solution_free(sol: *mut HomogSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}
