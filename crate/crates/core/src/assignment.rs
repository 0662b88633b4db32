//! Exact solution of the unregularized problem: over couplings with uniform
//! marginals the optimum sits at a permutation, so it is a linear assignment
//! problem.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ot::{is_permutation, SquareMatrix};

/// Largest market [`brute_force_solve`] will enumerate.
pub const BRUTE_FORCE_MAX_N: usize = 10;

/// A one-to-one matching `i -> sigma[i]` and its average cost per match.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub sigma: Vec<usize>,
    pub total_cost: f64,
}

impl Assignment {
    pub fn from_sigma(c: impl AsRef<SquareMatrix>, sigma: Vec<usize>) -> Result<Self> {
        let c = c.as_ref();
        if sigma.len() != c.n() || !is_permutation(&sigma) {
            return Err(Error::invalid("sigma is not a permutation of the market"));
        }
        let total_cost = average_cost(c, &sigma);
        Ok(Self { sigma, total_cost })
    }

    pub fn n(&self) -> usize {
        self.sigma.len()
    }
}

/// Dual variables of the assignment LP in per-match units: `u_i + v_j <= c_ij`,
/// with equality on the optimal matching and `sum(v) = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignmentDuals {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// `sum_i c[i][sigma[i]] / n`, summed in index order.
pub fn average_cost(c: &SquareMatrix, sigma: &[usize]) -> f64 {
    let sum: f64 = sigma.iter().enumerate().map(|(i, &j)| c.get(i, j)).sum();
    sum / sigma.len() as f64
}

/// Minimum-average-cost assignment by shortest augmenting paths, `O(n^3)`.
pub fn hungarian_solve(c: impl AsRef<SquareMatrix>) -> Result<Assignment> {
    hungarian_with_duals(c).map(|(a, _)| a)
}

/// [`hungarian_solve`] together with the optimal LP duals.
pub fn hungarian_with_duals(c: impl AsRef<SquareMatrix>) -> Result<(Assignment, AssignmentDuals)> {
    let c = c.as_ref();
    let n = c.n();
    // SquareMatrix already guarantees finite entries; potentials are 1-indexed with a sentinel at 0.
    let mut u = vec![0.0_f64; n + 1];
    let mut v = vec![0.0_f64; n + 1];
    let mut owner = vec![0_usize; n + 1];
    let mut way = vec![0_usize; n + 1];
    let mut min_slack = vec![0.0_f64; n + 1];
    let mut used = vec![false; n + 1];

    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        min_slack.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            let cost_row = c.row(i0 - 1);
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost_row[j - 1] - u[i0] - v[j];
                if cur < min_slack[j] {
                    min_slack[j] = cur;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut sigma = vec![0; n];
    for j in 1..=n {
        sigma[owner[j] - 1] = j - 1;
    }
    let total_cost = average_cost(c, &sigma);

    // Per-match units: the LP with marginals 1/n has value mean(u) + mean(v).
    let mut du: Vec<f64> = u[1..].to_vec();
    let mut dv: Vec<f64> = v[1..].to_vec();
    let shift = dv.iter().sum::<f64>() / n as f64;
    dv.iter_mut().for_each(|x| *x -= shift);
    du.iter_mut().for_each(|x| *x += shift);

    Ok((Assignment { sigma, total_cost }, AssignmentDuals { u: du, v: dv }))
}

/// Exhaustive search over all `n!` permutations in lexicographic order; ties go
/// to the lexicographically smallest permutation.
pub fn brute_force_solve(c: impl AsRef<SquareMatrix>) -> Result<Assignment> {
    let c = c.as_ref();
    let n = c.n();
    if n > BRUTE_FORCE_MAX_N {
        return Err(Error::Refused(format!("brute force enumeration is limited to n <= {BRUTE_FORCE_MAX_N}, got {n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = average_cost(c, &perm);
    while next_permutation(&mut perm) {
        let cost = average_cost(c, &perm);
        if cost < best_cost {
            best_cost = cost;
            best.copy_from_slice(&perm);
        }
    }
    Ok(Assignment { sigma: best, total_cost: best_cost })
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let Some(i) = (0..p.len() - 1).rev().find(|&i| p[i] < p[i + 1]) else {
        return false;
    };
    let j = (i + 1..p.len()).rev().find(|&j| p[j] > p[i]).expect("successor exists");
    p.swap(i, j);
    p[i + 1..].reverse();
    true
}

/// Pads a rectangular cost table to a square one with zero-cost dummy agents.
pub fn pad_with_dummies(rows: &[Vec<f64>]) -> Result<SquareMatrix> {
    let r = rows.len();
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != cols) {
        return Err(Error::invalid("cost table rows have unequal lengths"));
    }
    let n = r.max(cols);
    SquareMatrix::from_fn(n, |i, j| if i < r && j < cols { rows[i][j] } else { 0.0 })
}
