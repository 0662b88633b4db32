//! Realized regret of a matching plan and the finite-sample bounds that
//! control it: the variance term driven by cost-estimation error and the
//! regularization bias `log(n) / eta`.

use serde::{Deserialize, Serialize};

use crate::assignment::{average_cost, Assignment};
use crate::error::{Error, Result};
use crate::ot::{check_dims, dual_objective, kl_divergence, CostMatrix, Coupling, DualPotentials, TAU_GAP, TAU_NORM};

/// Exponents above this make `exp` overflow in double precision.
pub const MAX_EXPONENT: f64 = 700.0;
/// Bounds above this are reported as `+inf`.
pub const VACUOUS_LIMIT: f64 = 1e300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretRecord {
    /// `pi_hat(c)`
    pub feasible_welfare: f64,
    /// `pi_rot(c)`
    pub oracle_rot_welfare: f64,
    /// `pi_star(c)`
    pub oracle_opt_welfare: f64,
    /// `pi_hat(c) - pi_star(c)`
    pub regret: f64,
    /// Regret in the regularized objective, `pi_hat(c) - pi_rot(c) + (KL_hat - KL_rot) / eta`.
    pub rot_regret: f64,
    /// `pi_rot(c) + KL_rot / eta - pi_star(c)`
    pub regularization_bias: f64,
    pub kl_feasible: f64,
    pub kl_oracle: f64,
    pub inv_eta: f64,
}

impl RegretRecord {
    /// `regret <= rot_regret + regularization_bias`, which holds because the KL term is nonnegative.
    pub fn decomposition_holds(&self) -> bool {
        self.regret <= self.rot_regret + self.regularization_bias + TAU_GAP
    }
}

/// Welfare comparison of a feasible plan against the oracle plans, all
/// evaluated under the true cost. `inv_eta = 0` is the unregularized problem.
pub fn compute_regret(
    c_true: &CostMatrix,
    feasible: &Coupling,
    oracle_rot: &Coupling,
    oracle_opt: &Assignment,
    inv_eta: f64,
) -> Result<RegretRecord> {
    let n = c_true.n();
    check_dims(n, feasible.n())?;
    check_dims(n, oracle_rot.n())?;
    check_dims(n, oracle_opt.n())?;
    if !(inv_eta.is_finite() && inv_eta >= 0.0) {
        return Err(Error::invalid(format!("1/eta must be finite and nonnegative, got {inv_eta}")));
    }
    let feasible_welfare = feasible.expected_cost(c_true)?;
    let oracle_rot_welfare = oracle_rot.expected_cost(c_true)?;
    let oracle_opt_welfare = average_cost(c_true.values(), &oracle_opt.sigma);
    let kl_feasible = kl_divergence(feasible)?;
    let kl_oracle = kl_divergence(oracle_rot)?;
    Ok(RegretRecord {
        feasible_welfare,
        oracle_rot_welfare,
        oracle_opt_welfare,
        regret: feasible_welfare - oracle_opt_welfare,
        rot_regret: feasible_welfare - oracle_rot_welfare + inv_eta * (kl_feasible - kl_oracle),
        regularization_bias: oracle_rot_welfare + inv_eta * kl_oracle - oracle_opt_welfare,
        kl_feasible,
        kl_oracle,
        inv_eta,
    })
}

/// `log(n) / eta`, the largest possible welfare cost of regularizing.
pub fn regularization_bias_bound(n: usize, eta: f64) -> f64 {
    (n as f64).ln() / eta
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub l1_term: f64,
    pub l2_sq_term: f64,
    /// `e^{2 eta c_bar} (L1 + L2^2)`
    pub variance_bound: f64,
    /// `log(n) / eta`
    pub bias_bound: f64,
    pub total_bound: f64,
    /// Set when the exponential factor overflows and the bound is `+inf`.
    pub vacuous: bool,
    /// Filled in by [`BoundReport::check`].
    pub holds: Option<bool>,
}

impl BoundReport {
    pub fn check(&mut self, regret: f64) -> bool {
        let ok = regret <= self.total_bound + TAU_GAP;
        self.holds = Some(ok);
        ok
    }
}

/// Assembles the regret bound. The exponential factor is formed in log
/// space; zero estimation error gives a zero variance term at any `eta`.
pub fn theorem_bound(l1: f64, l2: f64, eta: f64, c_bar: f64, n: usize) -> Result<BoundReport> {
    if !(l1 >= 0.0 && l2 >= 0.0 && l1.is_finite() && l2.is_finite()) {
        return Err(Error::invalid("error norms must be finite and nonnegative"));
    }
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::invalid(format!("eta must be finite and positive, got {eta}")));
    }
    let l2_sq_term = l2 * l2;
    let bias_bound = regularization_bias_bound(n, eta);
    let (variance_bound, vacuous) = scaled_by_exp(2.0 * eta * c_bar, l1 + l2_sq_term);
    Ok(BoundReport {
        l1_term: l1,
        l2_sq_term,
        variance_bound,
        bias_bound,
        total_bound: variance_bound + bias_bound,
        vacuous,
        holds: None,
    })
}

/// `e^{exponent} * factor` for `factor >= 0`, or `(+inf, true)` when it overflows.
fn scaled_by_exp(exponent: f64, factor: f64) -> (f64, bool) {
    if factor == 0.0 {
        return (0.0, false);
    }
    let log_value = exponent + factor.ln();
    if exponent > MAX_EXPONENT || log_value > VACUOUS_LIMIT.ln() {
        (f64::INFINITY, true)
    } else {
        (log_value.exp(), false)
    }
}

/// Grid averages `(mean |c_hat - c|, sqrt(mean (c_hat - c)^2))` over the market.
pub fn empirical_errors(c_true: &CostMatrix, c_hat: &CostMatrix) -> Result<(f64, f64)> {
    check_dims(c_true.n(), c_hat.n())?;
    let m = (c_true.n() * c_true.n()) as f64;
    let (mut l1, mut l2) = (0.0, 0.0);
    for (a, b) in c_true.values().as_slice().iter().zip(c_hat.values().as_slice()) {
        let d = (a - b).abs();
        l1 += d;
        l2 += d * d;
    }
    Ok((l1 / m, (l2 / m).sqrt()))
}

/// The two plug-in inequalities for a plan solved under `c_hat`.
///
/// The dual difference is first order in `c_hat - c`, so besides the stated
/// squared-error form it is also checked against `e^{2 eta c_bar} L1`, the
/// bound that the mean value expansion actually delivers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop1Report {
    /// `|pi_hat(c) - pi_hat(c_hat)|`
    pub cost_gap: f64,
    /// `e^{2 eta c_bar} mean |c_hat - c|`
    pub cost_gap_bound: f64,
    /// `|Phi(c_hat, f, g) - Phi(c, f, g)|`
    pub dual_gap: f64,
    /// `e^{2 eta c_bar} mean (c_hat - c)^2`
    pub dual_gap_bound: f64,
    /// `e^{2 eta c_bar} mean |c_hat - c|`
    pub dual_gap_first_order_bound: f64,
    pub cost_gap_holds: bool,
    pub dual_gap_holds: bool,
    pub dual_gap_first_order_holds: bool,
}

impl Prop1Report {
    pub fn cost_gap_slack(&self) -> f64 {
        self.cost_gap_bound - self.cost_gap
    }

    pub fn dual_gap_slack(&self) -> f64 {
        self.dual_gap_bound - self.dual_gap
    }
}

pub fn prop1_bounds_check(
    c_true: &CostMatrix,
    c_hat: &CostMatrix,
    pot: &DualPotentials,
    pi_hat: &Coupling,
) -> Result<Prop1Report> {
    check_dims(c_true.n(), c_hat.n())?;
    check_dims(c_true.n(), pi_hat.n())?;
    let c_bar = c_true.c_bar().max(c_hat.c_bar());
    let exponent = 2.0 * pot.eta * c_bar;
    let (l1, l2) = empirical_errors(c_true, c_hat)?;
    let cost_gap = (pi_hat.expected_cost(c_true)? - pi_hat.expected_cost(c_hat)?).abs();
    let dual_gap = (dual_objective(c_hat, pot)? - dual_objective(c_true, pot)?).abs();
    let cost_gap_bound = scaled_by_exp(exponent, l1).0;
    let dual_gap_bound = scaled_by_exp(exponent, l2 * l2).0;
    Ok(Prop1Report {
        cost_gap,
        cost_gap_bound,
        dual_gap,
        dual_gap_bound,
        dual_gap_first_order_bound: cost_gap_bound,
        cost_gap_holds: cost_gap <= cost_gap_bound + TAU_GAP,
        dual_gap_holds: dual_gap <= dual_gap_bound + TAU_GAP,
        dual_gap_first_order_holds: dual_gap <= cost_gap_bound + TAU_GAP,
    })
}

/// Worst-case positions of the potentials and plan densities against
/// `|f|, |g| <= c_bar` and `e^{-3 eta c_bar} <= n^2 pi <= e^{2 eta c_bar}`.
///
/// Densities are evaluated as `eta (f_i + g_j - c_ij)` in log space, which
/// stays meaningful where the materialized plan underflows to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub c_bar: f64,
    pub eta: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub g_min: f64,
    pub g_max: f64,
    pub log_density_min: f64,
    pub log_density_max: f64,
    /// `c_bar - max |f|` and `c_bar - max |g|`.
    pub f_slack: f64,
    pub g_slack: f64,
    /// `log_density_min + 3 eta c_bar` and `2 eta c_bar - log_density_max`.
    pub density_lower_slack: f64,
    pub density_upper_slack: f64,
    pub holds: bool,
}

pub fn lemma1_audit(pot: &DualPotentials, c: &CostMatrix) -> Result<Lemma1Report> {
    let n = c.n();
    check_dims(n, pot.n())?;
    let (c_bar, eta) = (c.c_bar(), pot.eta);
    let range = |v: &[f64]| v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let (f_min, f_max) = range(&pot.f);
    let (g_min, g_max) = range(&pot.g);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, row) in c.values().rows().enumerate() {
        for (cij, gj) in row.iter().zip(&pot.g) {
            let v = eta * (pot.f[i] + gj - cij);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let f_slack = c_bar - f_min.abs().max(f_max.abs());
    let g_slack = c_bar - g_min.abs().max(g_max.abs());
    let density_lower_slack = lo + 3.0 * eta * c_bar;
    let density_upper_slack = 2.0 * eta * c_bar - hi;
    let holds = f_slack >= -TAU_NORM
        && g_slack >= -TAU_NORM
        && density_lower_slack >= (1.0 - TAU_GAP).ln()
        && density_upper_slack >= -(1.0 + TAU_GAP).ln();
    Ok(Lemma1Report {
        c_bar,
        eta,
        f_min,
        f_max,
        g_min,
        g_max,
        log_density_min: lo,
        log_density_max: hi,
        f_slack,
        g_slack,
        density_lower_slack,
        density_upper_slack,
        holds,
    })
}
