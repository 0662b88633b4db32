//! Log-domain Sinkhorn iteration for the entropy-regularized assignment problem.
//!
//! The solver works on scaled potentials `F = eta * f`, `G = eta * g` and the
//! kernel exponent `-eta * c`, so no quantity of magnitude `exp(eta * c_bar)` is
//! ever formed. Each half-step is an exact block-coordinate maximization of the
//! dual objective:
//!
//! ```text
//! F_i <- log n - logsumexp_j(G_j - eta c_ij)
//! G_j <- log n - logsumexp_i(F_i - eta c_ij)
//! ```

use super::objective::{coupling_from_potentials, dual_objective, logsumexp};
use super::types::{check_eta, CostMatrix, Coupling, DualPotentials, SinkhornReport};
use crate::error::{Error, Result};

/// Solves `(a + ridge * diag(d)) x = b` for symmetric positive (semi)definite `a`
/// by Cholesky, growing the ridge until the factorization succeeds.
fn solve_spd_with_ridge(a: &[f64], d: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut ridge = 0.0;
    for _ in 0..8 {
        let mut l = a.to_vec();
        if ridge > 0.0 {
            for j in 0..n {
                l[j * n + j] += ridge * d[j];
            }
        }
        if cholesky_in_place(&mut l, n) {
            let mut x = b.to_vec();
            // L y = b
            for i in 0..n {
                let s: f64 = (0..i).map(|k| l[i * n + k] * x[k]).sum();
                x[i] = (x[i] - s) / l[i * n + i];
            }
            // L^T x = y
            for i in (0..n).rev() {
                let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
                x[i] = (x[i] - s) / l[i * n + i];
            }
            if x.iter().all(|v| v.is_finite()) {
                return Some(x);
            }
        }
        ridge = if ridge == 0.0 { 1e-12 } else { ridge * 100.0 };
    }
    None
}

/// Lower-triangular Cholesky factor in place (row-major); false if not positive definite.
fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let diag = a[j * n + j] - a[j * n..j * n + j].iter().map(|v| v * v).sum::<f64>();
        if !(diag > 0.0 && diag.is_finite()) {
            return false;
        }
        let ljj = diag.sqrt();
        a[j * n + j] = ljj;
        let (upper, lower) = a.split_at_mut((j + 1) * n);
        let row_j = &upper[j * n..j * n + j];
        for row_i in lower.chunks_exact_mut(n) {
            let s: f64 = row_i[..j].iter().zip(row_j).map(|(x, y)| x * y).sum();
            row_i[j] = (row_i[j] - s) / ljj;
        }
    }
    true
}

/// Default stopping tolerance on the marginal residual (probability-mass units).
pub const DEFAULT_TOL: f64 = 1e-9;
/// Default iteration budget.
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Output of [`sinkhorn_solve`]: normalized potentials, the recovered coupling and diagnostics.
#[derive(Clone, Debug)]
pub struct SinkhornSolution {
    pub potentials: DualPotentials,
    pub coupling: Coupling,
    pub report: SinkhornReport,
}

/// Sweeps between Newton attempts.
const SWEEPS_PER_BLOCK: usize = 10;

/// Solves `min_pi pi(c) + KL(pi | mu_n x nu_n) / eta` over couplings with uniform marginals.
///
/// Starts from `f = g = 0` and alternates exact half-steps. When a block of
/// sweeps leaves the residual above `tol`, a damped Newton step on the dual is
/// attempted; it is kept only if it increases the dual (or, at round-off level,
/// reduces the residual). Large `eta` makes the kernel nearly block-diagonal and
/// plain sweeps stall there, while the Newton step does not.
///
/// `max_iter` bounds the number of sweeps. A run that exhausts it is not an
/// error: the report has `converged == false` and the caller decides.
pub fn sinkhorn_solve(c: &CostMatrix, eta: f64, tol: f64, max_iter: usize) -> Result<SinkhornSolution> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::invalid(format!("tol must be positive, got {tol}")));
    }
    let mut state = Sinkhorn::new(c, eta)?;
    let mut iterations = 0;
    let mut newton_steps = 0;
    loop {
        // Columns are exact after every G-update, so the row residual is the full residual.
        let residual = state.row_residual();
        if iterations > 0 && residual <= tol {
            break;
        }
        if iterations >= max_iter {
            break;
        }
        if iterations > 0 && iterations % SWEEPS_PER_BLOCK == 0 && state.newton_step() {
            newton_steps += 1;
            state.row_residual();
        }
        state.update_f();
        state.update_g();
        iterations += 1;
    }
    state.finish(iterations, newton_steps, tol)
}

/// Sinkhorn iteration state. Exposed so callers can observe the dual objective after each half-step.
pub struct Sinkhorn<'a> {
    cost: &'a CostMatrix,
    eta: f64,
    log_n: f64,
    /// `-eta * c`, row-major.
    kernel: Vec<f64>,
    /// `-eta * c`, column-major.
    kernel_t: Vec<f64>,
    big_f: Vec<f64>,
    big_g: Vec<f64>,
    scratch: Vec<f64>,
    row_lse: Vec<f64>,
}

impl<'a> Sinkhorn<'a> {
    pub fn new(cost: &'a CostMatrix, eta: f64) -> Result<Self> {
        check_eta(eta)?;
        let n = cost.n();
        let kernel: Vec<f64> = cost.values().as_slice().iter().map(|c| -eta * c).collect();
        let kernel_t: Vec<f64> = cost.values().transpose().as_slice().iter().map(|c| -eta * c).collect();
        Ok(Self {
            cost,
            eta,
            log_n: (n as f64).ln(),
            kernel,
            kernel_t,
            big_f: vec![0.0; n],
            big_g: vec![0.0; n],
            scratch: vec![0.0; n],
            row_lse: vec![0.0; n],
        })
    }

    /// Starts from unscaled potentials `(f, g)`, e.g. a solution at a smaller `eta`.
    pub fn warm_start(&mut self, f: &[f64], g: &[f64]) {
        let eta = self.eta;
        self.big_f.iter_mut().zip(f).for_each(|(a, b)| *a = eta * b);
        self.big_g.iter_mut().zip(g).for_each(|(a, b)| *a = eta * b);
    }

    fn n(&self) -> usize {
        self.big_f.len()
    }

    /// Refreshes the cached row log-sums and returns `max_i |row_i - 1/n|`.
    pub fn row_residual(&mut self) -> f64 {
        let n = self.n();
        let inv_n = 1.0 / n as f64;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let row = &self.kernel[i * n..(i + 1) * n];
            for ((s, k), g) in self.scratch.iter_mut().zip(row).zip(&self.big_g) {
                *s = k + g;
            }
            let lse = logsumexp(&self.scratch);
            self.row_lse[i] = lse;
            // row_i = exp(F_i + lse_i) / n^2
            let dev = (self.big_f[i] + lse - self.log_n).exp_m1() * inv_n;
            worst = worst.max(dev.abs());
        }
        worst
    }

    /// Exact maximization over `f`. Requires a preceding [`Sinkhorn::row_residual`] call.
    pub fn update_f(&mut self) {
        for (f, lse) in self.big_f.iter_mut().zip(&self.row_lse) {
            *f = self.log_n - lse;
        }
    }

    /// Exact maximization over `g`.
    pub fn update_g(&mut self) {
        let n = self.n();
        for j in 0..n {
            let col = &self.kernel_t[j * n..(j + 1) * n];
            for ((s, k), f) in self.scratch.iter_mut().zip(col).zip(&self.big_f) {
                *s = k + f;
            }
            self.big_g[j] = self.log_n - logsumexp(&self.scratch);
        }
    }

    /// Refreshes the row cache and applies the `f` update in one call.
    pub fn step_f(&mut self) {
        self.row_residual();
        self.update_f();
    }

    /// Current coupling in scaled coordinates, with row and column sums.
    fn plan_at(&self, big_f: &[f64], big_g: &[f64], plan: &mut [f64], rows: &mut [f64], cols: &mut [f64]) -> bool {
        let n = self.n();
        let log_n2 = 2.0 * self.log_n;
        cols.fill(0.0);
        for i in 0..n {
            let k = &self.kernel[i * n..(i + 1) * n];
            let out = &mut plan[i * n..(i + 1) * n];
            let mut r = 0.0;
            for j in 0..n {
                let v = (big_f[i] + big_g[j] + k[j] - log_n2).exp();
                out[j] = v;
                r += v;
                cols[j] += v;
            }
            rows[i] = r;
        }
        rows.iter().all(|r| r.is_finite())
    }

    /// Scaled dual `eta * Phi = mean(F) + mean(G) - (sum(pi) - 1)`.
    fn scaled_dual(big_f: &[f64], big_g: &[f64], rows: &[f64]) -> f64 {
        let n = big_f.len() as f64;
        big_f.iter().sum::<f64>() / n + big_g.iter().sum::<f64>() / n - (rows.iter().sum::<f64>() - 1.0)
    }

    /// One damped Newton step on the dual. Returns whether a step was taken.
    ///
    /// The Hessian is `-[[diag(r), P], [P^T, diag(s)]]`; eliminating `dF` leaves the
    /// Laplacian-like system `(diag(s) - P^T diag(r)^-1 P) dG = rhs`, singular along
    /// the constant vector (the `(f + a, g - a)` invariance). Adding `11^T / n^2`
    /// pins that direction without changing the solution, because `rhs` sums to zero.
    pub fn newton_step(&mut self) -> bool {
        let n = self.n();
        let inv_n = 1.0 / n as f64;
        let mut plan = vec![0.0; n * n];
        let mut rows = vec![0.0; n];
        let mut cols = vec![0.0; n];
        if !self.plan_at(&self.big_f, &self.big_g, &mut plan, &mut rows, &mut cols) {
            return false;
        }
        let grad_f: Vec<f64> = rows.iter().map(|r| inv_n - r).collect();
        let grad_g: Vec<f64> = cols.iter().map(|s| inv_n - s).collect();
        let phi0 = Self::scaled_dual(&self.big_f, &self.big_g, &rows);
        let res0 = grad_f.iter().chain(&grad_g).fold(0.0_f64, |m, v| m.max(v.abs()));

        // schur = diag(s) - P^T diag(1/r) P + 11^T / n^2
        let mut schur = vec![inv_n * inv_n; n * n];
        for j in 0..n {
            schur[j * n + j] += cols[j];
        }
        for i in 0..n {
            let p = &plan[i * n..(i + 1) * n];
            let inv_r = 1.0 / rows[i];
            for j in 0..n {
                let a = p[j] * inv_r;
                if a == 0.0 {
                    continue;
                }
                let out = &mut schur[j * n..(j + 1) * n];
                for (o, pk) in out.iter_mut().zip(p) {
                    *o -= a * pk;
                }
            }
        }
        let mut rhs = grad_g.clone();
        for i in 0..n {
            let p = &plan[i * n..(i + 1) * n];
            let scale = grad_f[i] / rows[i];
            for (r, pj) in rhs.iter_mut().zip(p) {
                *r -= pj * scale;
            }
        }
        let Some(dg) = solve_spd_with_ridge(&schur, &cols, &rhs) else {
            return false;
        };
        let df: Vec<f64> = (0..n)
            .map(|i| {
                let p = &plan[i * n..(i + 1) * n];
                let coupled: f64 = p.iter().zip(&dg).map(|(a, b)| a * b).sum();
                (grad_f[i] - coupled) / rows[i]
            })
            .collect();
        let slope: f64 = grad_f.iter().zip(&df).chain(grad_g.iter().zip(&dg)).map(|(a, b)| a * b).sum();
        if slope.is_nan() || slope <= 0.0 {
            return false;
        }

        let mut trial_f = vec![0.0; n];
        let mut trial_g = vec![0.0; n];
        let mut step = 1.0;
        for _ in 0..30 {
            for (t, (f, d)) in trial_f.iter_mut().zip(self.big_f.iter().zip(&df)) {
                *t = f + step * d;
            }
            for (t, (g, d)) in trial_g.iter_mut().zip(self.big_g.iter().zip(&dg)) {
                *t = g + step * d;
            }
            if self.plan_at(&trial_f, &trial_g, &mut plan, &mut rows, &mut cols) {
                let phi = Self::scaled_dual(&trial_f, &trial_g, &rows);
                let armijo = phi >= phi0 + 1e-4 * step * slope;
                let res = rows.iter().chain(&cols).fold(0.0_f64, |m, v| m.max((inv_n - v).abs()));
                let flat = phi >= phi0 - 8.0 * f64::EPSILON * (phi0.abs() + 1.0);
                if armijo || (flat && res < res0) {
                    self.big_f.copy_from_slice(&trial_f);
                    self.big_g.copy_from_slice(&trial_g);
                    return true;
                }
            }
            step *= 0.5;
        }
        false
    }

    fn unscaled(&self) -> (Vec<f64>, Vec<f64>) {
        let eta = self.eta;
        (self.big_f.iter().map(|v| v / eta).collect(), self.big_g.iter().map(|v| v / eta).collect())
    }

    /// Current potentials, unnormalized.
    pub fn potentials(&self) -> DualPotentials {
        let (f, g) = self.unscaled();
        DualPotentials { f, g, eta: self.eta }
    }

    /// Current dual objective value.
    pub fn dual_value(&self) -> Result<f64> {
        dual_objective(self.cost, &self.potentials())
    }

    fn finish(self, iterations: usize, newton_steps: usize, tol: f64) -> Result<SinkhornSolution> {
        let mut potentials = self.potentials();
        if potentials.f.iter().chain(&potentials.g).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("Sinkhorn potentials became non-finite".into()));
        }
        potentials.normalize();
        let coupling = coupling_from_potentials(self.cost, &potentials)?;
        let final_marginal_residual = coupling.marginal_residual();
        let dual_value = dual_objective(self.cost, &potentials)?;
        Ok(SinkhornSolution {
            report: SinkhornReport {
                iterations,
                newton_steps,
                final_marginal_residual,
                converged: final_marginal_residual <= tol,
                dual_value,
            },
            potentials,
            coupling,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::objective::{kl_divergence, primal_objective};
    use crate::ot::types::{SquareMatrix, TAU_NORM};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_cost(n: usize, seed: u64) -> CostMatrix {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        CostMatrix::new(SquareMatrix::from_fn(n, |_, _| rng.random::<f64>()).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn single_cell_market() {
        let c = CostMatrix::new(SquareMatrix::filled(1, 0.4).unwrap(), 1.0).unwrap();
        let sol = sinkhorn_solve(&c, 3.0, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(sol.report.converged);
        assert_abs_diff_eq!(sol.coupling.get(0, 0), 1.0, epsilon = 1e-15);
        assert_eq!(sol.potentials.g[0], 0.0);
        assert_abs_diff_eq!(sol.potentials.f[0], 0.4, epsilon = 1e-15);
    }

    #[test]
    fn constant_cost_gives_independent_coupling() {
        let kappa = 0.35;
        let n = 9;
        let c = CostMatrix::new(SquareMatrix::filled(n, kappa).unwrap(), 1.0).unwrap();
        let sol = sinkhorn_solve(&c, 7.0, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(sol.report.converged);
        for &p in sol.coupling.mass().as_slice() {
            assert_abs_diff_eq!(p, 1.0 / 81.0, epsilon = 1e-15);
        }
        for (&f, &g) in sol.potentials.f.iter().zip(&sol.potentials.g) {
            assert_abs_diff_eq!(f, kappa, epsilon = 1e-14);
            assert_abs_diff_eq!(g, 0.0, epsilon = 1e-14);
        }
    }

    /// Diagonal mass `p` of the symmetric 2x2 solution solves `p / (1/2 - p) = e^eta`.
    fn two_by_two_oracle(eta: f64) -> f64 {
        let (mut lo, mut hi) = (0.0_f64, 0.5_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid / (0.5 - mid) < eta.exp() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn two_by_two_matches_bisection_oracle() {
        let c = CostMatrix::new(SquareMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(), 1.0).unwrap();
        let sol = sinkhorn_solve(&c, 1.0, 1e-14, DEFAULT_MAX_ITER).unwrap();
        let p = two_by_two_oracle(1.0);
        assert_abs_diff_eq!(p, std::f64::consts::E / (2.0 * (1.0 + std::f64::consts::E)), epsilon = 1e-14);
        assert_abs_diff_eq!(sol.coupling.get(0, 0), p, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.coupling.get(1, 1), p, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.coupling.get(0, 1), 0.5 - p, epsilon = 1e-12);
        assert!(sol.coupling.get(0, 0) > sol.coupling.get(0, 1));
    }

    #[test]
    fn rejects_bad_eta_and_tol() {
        let c = random_cost(3, 1);
        assert!(matches!(sinkhorn_solve(&c, 0.0, 1e-9, 10), Err(Error::InvalidInput(_))));
        assert!(matches!(sinkhorn_solve(&c, -1.0, 1e-9, 10), Err(Error::InvalidInput(_))));
        assert!(matches!(sinkhorn_solve(&c, 1.0, 0.0, 10), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn exhausted_budget_is_reported_not_thrown() {
        let c = random_cost(30, 2);
        let sol = sinkhorn_solve(&c, 200.0, 1e-15, 3).unwrap();
        assert!(!sol.report.converged);
        assert_eq!(sol.report.iterations, 3);
    }

    #[test]
    fn converged_solution_properties() {
        for (seed, eta) in [(3, 1.0), (4, 10.0), (5, 60.0)] {
            let c = random_cost(25, seed);
            let sol = sinkhorn_solve(&c, eta, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
            assert!(sol.report.converged, "eta {eta}");
            assert!(sol.report.final_marginal_residual <= DEFAULT_TOL);
            assert!(sol.potentials.g_sum().abs() <= TAU_NORM);
            let primal = primal_objective(&sol.coupling, &c, eta).unwrap();
            let gap = (primal - sol.report.dual_value).abs();
            assert!(gap <= 1e-6 * primal.abs().max(1.0), "gap {gap}");
            let uniform = primal_objective(&Coupling::uniform(25).unwrap(), &c, eta).unwrap();
            assert!(primal <= uniform);
            for v in sol.potentials.f.iter().chain(&sol.potentials.g) {
                assert!(v.abs() <= 1.0 + TAU_NORM);
            }
        }
    }

    #[test]
    fn dual_ascent_is_monotone() {
        let c = random_cost(12, 6);
        let mut state = Sinkhorn::new(&c, 15.0).unwrap();
        let mut last = state.dual_value().unwrap();
        for _ in 0..200 {
            state.step_f();
            let after_f = state.dual_value().unwrap();
            state.update_g();
            let after_g = state.dual_value().unwrap();
            assert!(after_f >= last - 1e-12 * last.abs().max(1.0));
            assert!(after_g >= after_f - 1e-12 * after_f.abs().max(1.0));
            last = after_g;
        }
    }

    #[test]
    fn small_eta_approaches_independent_coupling() {
        let c = random_cost(10, 8);
        let sol = sinkhorn_solve(&c, 1e-4, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        let uniform = 1.0 / 100.0;
        let worst = sol.coupling.mass().as_slice().iter().map(|p| (p - uniform).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-5, "max-norm distance {worst}");
        assert!(kl_divergence(&sol.coupling).unwrap() < 1e-6);
    }
}
