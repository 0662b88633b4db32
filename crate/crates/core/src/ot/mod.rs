//! Couplings, costs and dual potentials, and the log-domain Sinkhorn solver for
//! the entropy-regularized empirical transport problem.

mod objective;
mod sinkhorn;
mod types;

pub use objective::{
    coupling_from_potentials, dual_objective, kl_divergence, logsumexp, marginal_residual, primal_objective,
};
pub use sinkhorn::{sinkhorn_solve, Sinkhorn, SinkhornSolution, DEFAULT_MAX_ITER, DEFAULT_TOL};
pub use types::{
    is_permutation, CostMatrix, Coupling, DualPotentials, MarketProfiles, SinkhornReport, SquareMatrix, TAU_GAP,
    TAU_MARG, TAU_NORM,
};

pub(crate) use types::check_dims;
