//! C ABI over the matchopt solvers.
//!
//! Every fallible function returns an `MoStatus`; on failure a message is
//! available from `mo_last_error` on the same thread. Handles are opaque,
//! created by `*_new`/solve functions and released with the matching `*_free`.
//! Matrices are dense, row-major, `n * n` doubles.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use matchopt::assignment::hungarian_solve;
use matchopt::bvn::{bvn_decompose, sample_assignment, PermutationMixture};
use matchopt::ot::{CostMatrix, SquareMatrix};
use matchopt::plan::{solve_plan, PlanSolution};
use matchopt::regret::theorem_bound;
use matchopt::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MoStatus {
    Ok = 0,
    InvalidInput = 1,
    Numerical = 2,
    Degenerate = 3,
    Refused = 4,
    /// The solve ran out of iterations; the handle is still returned.
    NotConverged = 5,
    NullPointer = 6,
    Panic = 7,
    Internal = 8,
}

/// Validated cost matrix with its bound.
pub struct MoCost {
    inner: CostMatrix,
}

/// Solved transport plan (exact assignment when `1/eta = 0`).
pub struct MoPlan {
    inner: PlanSolution,
}

/// Convex combination of permutations.
pub struct MoMixture {
    inner: PermutationMixture,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: MoStatus, msg: impl Into<String>) -> MoStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> MoStatus {
    let status = match e {
        Error::InvalidInput(_) | Error::Config { .. } => MoStatus::InvalidInput,
        Error::Numerical(_) => MoStatus::Numerical,
        Error::Degenerate(_) => MoStatus::Degenerate,
        Error::Refused(_) => MoStatus::Refused,
        _ => MoStatus::Internal,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> MoStatus) -> MoStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(MoStatus::Panic, "panic inside matchopt"))
}

macro_rules! try_mo {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return from_error(e),
        }
    };
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(MoStatus::NullPointer, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

/// Message for the last failure on this thread, or null. Valid until the next call into the library.
#[no_mangle]
pub extern "C" fn mo_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `n * n` row-major costs. `c_bar <= 0` uses the largest entry as the bound.
#[no_mangle]
pub unsafe extern "C" fn mo_cost_new(data: *const f64, n: usize, c_bar: f64, out: *mut *mut MoCost) -> MoStatus {
    guard(|| {
        non_null!(data, out);
        let Some(len) = n.checked_mul(n) else {
            return fail(MoStatus::InvalidInput, "n * n overflows");
        };
        let values = std::slice::from_raw_parts(data, len).to_vec();
        let m = try_mo!(SquareMatrix::new(n, values));
        let inner = try_mo!(if c_bar > 0.0 { CostMatrix::new(m, c_bar) } else { CostMatrix::with_tight_bound(m) });
        *out = Box::into_raw(Box::new(MoCost { inner }));
        MoStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn mo_cost_free(cost: *mut MoCost) {
    if !cost.is_null() {
        drop(Box::from_raw(cost));
    }
}

#[no_mangle]
pub unsafe extern "C" fn mo_cost_n(cost: *const MoCost) -> usize {
    cost.as_ref().map_or(0, |c| c.inner.n())
}

/// Solves the plan at regularization `inv_eta = 1/eta`. Returns `NOT_CONVERGED`
/// with a valid handle in `*out` when the iteration budget runs out.
#[no_mangle]
pub unsafe extern "C" fn mo_solve(
    cost: *const MoCost,
    inv_eta: f64,
    tol: f64,
    max_iter: usize,
    out: *mut *mut MoPlan,
) -> MoStatus {
    guard(|| {
        non_null!(cost, out);
        let inner = try_mo!(solve_plan(&(*cost).inner, inv_eta, tol, max_iter));
        let converged = inner.converged();
        *out = Box::into_raw(Box::new(MoPlan { inner }));
        if converged {
            MoStatus::Ok
        } else {
            fail(MoStatus::NotConverged, "iteration budget exhausted before the tolerance was met")
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn mo_plan_free(plan: *mut MoPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

#[no_mangle]
pub unsafe extern "C" fn mo_plan_n(plan: *const MoPlan) -> usize {
    plan.as_ref().map_or(0, |p| p.inner.coupling.n())
}

#[no_mangle]
pub unsafe extern "C" fn mo_plan_converged(plan: *const MoPlan) -> bool {
    plan.as_ref().is_some_and(|p| p.inner.converged())
}

#[no_mangle]
pub unsafe extern "C" fn mo_plan_iterations(plan: *const MoPlan) -> usize {
    plan.as_ref().map_or(0, |p| p.inner.iterations())
}

/// Writes the `n * n` coupling, row-major, into `out` of length `len`.
#[no_mangle]
pub unsafe extern "C" fn mo_plan_coupling(plan: *const MoPlan, out: *mut f64, len: usize) -> MoStatus {
    guard(|| {
        non_null!(plan, out);
        let mass = (*plan).inner.coupling.mass().as_slice();
        if len < mass.len() {
            return fail(MoStatus::InvalidInput, format!("buffer holds {len} values, need {}", mass.len()));
        }
        ptr::copy_nonoverlapping(mass.as_ptr(), out, mass.len());
        MoStatus::Ok
    })
}

/// Writes the dual potentials into `f` and `g`, each of length `n`. Fails for unregularized plans.
#[no_mangle]
pub unsafe extern "C" fn mo_plan_potentials(plan: *const MoPlan, f: *mut f64, g: *mut f64, n: usize) -> MoStatus {
    guard(|| {
        non_null!(plan, f, g);
        let Some(pot) = (*plan).inner.potentials.as_ref() else {
            return fail(MoStatus::InvalidInput, "unregularized plans carry no potentials");
        };
        if n < pot.n() {
            return fail(MoStatus::InvalidInput, format!("buffers hold {n} values, need {}", pot.n()));
        }
        ptr::copy_nonoverlapping(pot.f.as_ptr(), f, pot.n());
        ptr::copy_nonoverlapping(pot.g.as_ptr(), g, pot.n());
        MoStatus::Ok
    })
}

/// `sum_ij c_ij pi_ij` for the plan under `cost`.
#[no_mangle]
pub unsafe extern "C" fn mo_plan_expected_cost(plan: *const MoPlan, cost: *const MoCost, out: *mut f64) -> MoStatus {
    guard(|| {
        non_null!(plan, cost, out);
        *out = try_mo!((*plan).inner.coupling.expected_cost(&(*cost).inner));
        MoStatus::Ok
    })
}

/// Exact assignment: `sigma` receives `n` column indices, `total` the average matched cost.
#[no_mangle]
pub unsafe extern "C" fn mo_assignment(cost: *const MoCost, sigma: *mut usize, total: *mut f64) -> MoStatus {
    guard(|| {
        non_null!(cost, sigma, total);
        let a = try_mo!(hungarian_solve(&(*cost).inner));
        ptr::copy_nonoverlapping(a.sigma.as_ptr(), sigma, a.sigma.len());
        *total = a.total_cost;
        MoStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn mo_bvn_decompose(plan: *const MoPlan, out: *mut *mut MoMixture) -> MoStatus {
    guard(|| {
        non_null!(plan, out);
        let inner = try_mo!(bvn_decompose(&(*plan).inner.coupling));
        *out = Box::into_raw(Box::new(MoMixture { inner }));
        MoStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn mo_mixture_free(mix: *mut MoMixture) {
    if !mix.is_null() {
        drop(Box::from_raw(mix));
    }
}

#[no_mangle]
pub unsafe extern "C" fn mo_mixture_len(mix: *const MoMixture) -> usize {
    mix.as_ref().map_or(0, |m| m.inner.len())
}

/// Weight and permutation of component `k`; `sigma` must hold `n` entries.
#[no_mangle]
pub unsafe extern "C" fn mo_mixture_component(
    mix: *const MoMixture,
    k: usize,
    weight: *mut f64,
    sigma: *mut usize,
) -> MoStatus {
    guard(|| {
        non_null!(mix, weight, sigma);
        let mix = &*mix;
        let Some((w, s)) = mix.inner.components.get(k) else {
            return fail(MoStatus::InvalidInput, format!("component {k} out of range"));
        };
        *weight = *w;
        ptr::copy_nonoverlapping(s.as_ptr(), sigma, s.len());
        MoStatus::Ok
    })
}

/// Draws one permutation with probability equal to its weight; deterministic in `seed`.
#[no_mangle]
pub unsafe extern "C" fn mo_mixture_sample(mix: *const MoMixture, seed: u64, sigma: *mut usize) -> MoStatus {
    guard(|| {
        non_null!(mix, sigma);
        let s = sample_assignment(&(*mix).inner, seed);
        ptr::copy_nonoverlapping(s.as_ptr(), sigma, s.len());
        MoStatus::Ok
    })
}

/// `e^{2 eta c_bar} (l1 + l2^2) + log(n)/eta`. `*vacuous` is set when the bound overflows to `+inf`.
#[no_mangle]
pub unsafe extern "C" fn mo_regret_bound(
    l1: f64,
    l2: f64,
    eta: f64,
    c_bar: f64,
    n: usize,
    total: *mut f64,
    vacuous: *mut bool,
) -> MoStatus {
    guard(|| {
        non_null!(total, vacuous);
        let b = try_mo!(theorem_bound(l1, l2, eta, c_bar, n));
        *total = b.total_bound;
        *vacuous = b.vacuous;
        MoStatus::Ok
    })
}
