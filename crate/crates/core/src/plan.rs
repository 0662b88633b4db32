//! One entry point for both kinds of plan: `1/eta = 0` is the exact
//! assignment, anything positive is the regularized coupling.

use serde::{Deserialize, Serialize};

use crate::assignment::{hungarian_solve, hungarian_with_duals, Assignment};
use crate::bvn::{bvn_decompose, PermutationMixture};
use crate::error::{Error, Result};
use crate::ot::{dual_objective, kl_divergence, sinkhorn_solve, CostMatrix, Coupling, DualPotentials, SinkhornReport};
use crate::regret::{lemma1_audit, Lemma1Report};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanSolution {
    pub inv_eta: f64,
    pub coupling: Coupling,
    /// Present for regularized plans.
    pub potentials: Option<DualPotentials>,
    pub report: Option<SinkhornReport>,
    /// Present for unregularized plans.
    pub assignment: Option<Assignment>,
}

impl PlanSolution {
    pub fn eta(&self) -> Option<f64> {
        (self.inv_eta > 0.0).then(|| 1.0 / self.inv_eta)
    }

    pub fn converged(&self) -> bool {
        self.report.as_ref().is_none_or(|r| r.converged)
    }

    pub fn iterations(&self) -> usize {
        self.report.as_ref().map_or(0, |r| r.iterations)
    }
}

pub fn solve_plan(c: &CostMatrix, inv_eta: f64, tol: f64, max_iter: usize) -> Result<PlanSolution> {
    if !(inv_eta.is_finite() && inv_eta >= 0.0) {
        return Err(Error::invalid(format!("1/eta must be finite and nonnegative, got {inv_eta}")));
    }
    if inv_eta == 0.0 {
        let a = hungarian_solve(c)?;
        return Ok(PlanSolution {
            inv_eta,
            coupling: Coupling::from_permutation(&a.sigma)?,
            potentials: None,
            report: None,
            assignment: Some(a),
        });
    }
    let s = sinkhorn_solve(c, 1.0 / inv_eta, tol, max_iter)?;
    Ok(PlanSolution {
        inv_eta,
        coupling: s.coupling,
        potentials: Some(s.potentials),
        report: Some(s.report),
        assignment: None,
    })
}

/// Diagnostics for a one-off solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub n: usize,
    pub inv_eta: f64,
    pub c_bar: f64,
    pub converged: bool,
    pub iterations: usize,
    pub newton_steps: usize,
    pub marginal_residual: f64,
    /// `pi(c)`.
    pub welfare: f64,
    pub kl: f64,
    /// `pi(c) + KL / eta`; equals the welfare when unregularized.
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub duality_gap: f64,
    pub lemma1: Option<Lemma1Report>,
    pub bvn_components: Option<usize>,
    pub bvn_reconstruction_error: Option<f64>,
    pub bvn_error: Option<String>,
}

pub struct SolveArtifacts {
    pub plan: PlanSolution,
    /// Sinkhorn potentials, or the assignment LP duals when unregularized.
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub mixture: Option<PermutationMixture>,
    pub summary: SolveSummary,
}

/// Solves, audits and decomposes the plan. A failed decomposition is recorded, not raised.
pub fn solve_with_summary(c: &CostMatrix, inv_eta: f64, tol: f64, max_iter: usize) -> Result<SolveArtifacts> {
    let plan = solve_plan(c, inv_eta, tol, max_iter)?;
    let welfare = plan.coupling.expected_cost(c)?;
    let kl = kl_divergence(&plan.coupling)?;
    let (f, g, primal, dual, lemma1) = match (&plan.potentials, plan.eta()) {
        (Some(pot), Some(eta)) => {
            let dual = dual_objective(c, pot)?;
            (pot.f.clone(), pot.g.clone(), welfare + kl / eta, dual, Some(lemma1_audit(pot, c)?))
        }
        _ => {
            let (_, d) = hungarian_with_duals(c)?;
            let nf = c.n() as f64;
            let dual = (d.u.iter().sum::<f64>() + d.v.iter().sum::<f64>()) / nf;
            (d.u, d.v, welfare, dual, None)
        }
    };
    let (mixture, bvn_error) = match bvn_decompose(&plan.coupling) {
        Ok(m) => (Some(m), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let bvn_reconstruction_error = mixture.as_ref().map(|m| m.reconstruction_error(&plan.coupling)).transpose()?;
    let summary = SolveSummary {
        n: c.n(),
        inv_eta,
        c_bar: c.c_bar(),
        converged: plan.converged(),
        iterations: plan.iterations(),
        newton_steps: plan.report.as_ref().map_or(0, |r| r.newton_steps),
        marginal_residual: plan.coupling.marginal_residual(),
        welfare,
        kl,
        primal_objective: primal,
        dual_objective: dual,
        duality_gap: primal - dual,
        lemma1,
        bvn_components: mixture.as_ref().map(PermutationMixture::len),
        bvn_reconstruction_error,
        bvn_error,
    };
    Ok(SolveArtifacts { plan, f, g, mixture, summary })
}
