use super::types::{check_dims, check_eta, CostMatrix, Coupling, DualPotentials, SquareMatrix};
use crate::error::{Error, Result};

/// `log(sum(exp(v)))` with max subtraction; `-inf` for an empty or all `-inf` slice.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// KL divergence of `pi` from the product of its uniform marginals, `sum pi log(n^2 pi)`.
pub fn kl_divergence(pi: &Coupling) -> Result<f64> {
    let n = pi.n() as f64;
    let log_n2 = 2.0 * n.ln();
    let mut kl = 0.0;
    for &p in pi.mass().as_slice() {
        if !p.is_finite() {
            return Err(Error::invalid("coupling has non-finite mass"));
        }
        if p > 0.0 {
            kl += p * (p.ln() + log_n2);
        }
    }
    // Rounding can leave tiny negatives around the independent coupling.
    Ok(kl.max(0.0))
}

/// `pi(c) + KL(pi)/eta`.
pub fn primal_objective(pi: &Coupling, c: &CostMatrix, eta: f64) -> Result<f64> {
    check_eta(eta)?;
    let cost = pi.expected_cost(c)?;
    Ok(cost + kl_divergence(pi)? / eta)
}

/// `mean(f) + mean(g) - (1/eta) * (mean_ij exp(-eta (c_ij - f_i - g_j)) - 1)`.
pub fn dual_objective(c: &CostMatrix, pot: &DualPotentials) -> Result<f64> {
    dual_objective_raw(c.values(), pot)
}

pub(crate) fn dual_objective_raw(c: &SquareMatrix, pot: &DualPotentials) -> Result<f64> {
    let n = c.n();
    check_dims(n, pot.n())?;
    let eta = pot.eta;
    let nf = n as f64;
    let mut exps = Vec::with_capacity(n * n);
    for (i, row) in c.rows().enumerate() {
        let fi = pot.f[i];
        exps.extend(row.iter().zip(&pot.g).map(|(cij, gj)| eta * (fi + gj - cij)));
    }
    let mean_exp = (logsumexp(&exps) - 2.0 * nf.ln()).exp();
    let mean_f = pot.f.iter().sum::<f64>() / nf;
    let mean_g = pot.g.iter().sum::<f64>() / nf;
    Ok(mean_f + mean_g - (mean_exp - 1.0) / eta)
}

/// Materializes `pi_ij = exp(-eta (c_ij - f_i - g_j)) / n^2`.
pub fn coupling_from_potentials(c: &CostMatrix, pot: &DualPotentials) -> Result<Coupling> {
    let n = c.n();
    check_dims(n, pot.n())?;
    let log_n2 = 2.0 * (n as f64).ln();
    let eta = pot.eta;
    let mut data = Vec::with_capacity(n * n);
    for (i, row) in c.values().rows().enumerate() {
        let fi = pot.f[i];
        for (cij, gj) in row.iter().zip(&pot.g) {
            let v = (eta * (fi + gj - cij) - log_n2).exp();
            if !v.is_finite() {
                return Err(Error::Numerical(format!("coupling entry overflowed at eta = {eta}")));
            }
            data.push(v);
        }
    }
    Ok(Coupling::from_raw(SquareMatrix::from_raw(n, data)))
}

/// Largest deviation of any row or column sum from `1/n`.
pub fn marginal_residual(pi: &Coupling) -> f64 {
    let n = pi.n();
    let target = 1.0 / n as f64;
    let mut cols = vec![0.0; n];
    let mut worst: f64 = 0.0;
    for row in pi.mass().rows() {
        let mut s = 0.0;
        for (acc, &p) in cols.iter_mut().zip(row) {
            s += p;
            *acc += p;
        }
        worst = worst.max((s - target).abs());
    }
    cols.iter().fold(worst, |w, s| w.max((s - target).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn coupling(rows: &[Vec<f64>]) -> Coupling {
        Coupling::new(SquareMatrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn logsumexp_handles_large_magnitudes() {
        assert_abs_diff_eq!(logsumexp(&[-1000.0, -1000.0]), -1000.0 + 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(logsumexp(&[700.0, 0.0]), 700.0, epsilon = 1e-12);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn kl_of_uniform_is_zero() {
        let pi = Coupling::uniform(7).unwrap();
        assert_abs_diff_eq!(kl_divergence(&pi).unwrap(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn kl_of_permutation_is_log_n() {
        let sigma: Vec<usize> = (0..100).map(|i| (i * 37 + 11) % 100).collect();
        let pi = Coupling::from_permutation(&sigma).unwrap();
        assert_abs_diff_eq!(kl_divergence(&pi).unwrap(), 100f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(kl_divergence(&pi).unwrap(), 4.605_170_185_988_091, epsilon = 1e-12);
    }

    #[test]
    fn kl_two_by_two_by_hand() {
        let pi = coupling(&[vec![0.3, 0.2], vec![0.2, 0.3]]);
        // 2*0.3*ln(1.2) + 2*0.2*ln(0.8)
        let by_hand = 0.6 * 1.2f64.ln() + 0.4 * 0.8f64.ln();
        assert_abs_diff_eq!(kl_divergence(&pi).unwrap(), by_hand, epsilon = 1e-15);
        assert_abs_diff_eq!(by_hand, 0.020_136, epsilon = 1e-6);
    }

    #[test]
    fn kl_rejects_non_finite() {
        let pi = Coupling::from_raw(SquareMatrix::from_raw(1, vec![f64::NAN]));
        assert!(kl_divergence(&pi).is_err());
    }

    #[test]
    fn primal_of_uniform_is_mean_cost() {
        let c = CostMatrix::new(
            SquareMatrix::from_rows(&[vec![0.1, 0.5, 0.9], vec![0.2, 0.0, 0.3], vec![1.0, 0.4, 0.6]]).unwrap(),
            1.0,
        )
        .unwrap();
        let pi = Coupling::uniform(3).unwrap();
        let value = primal_objective(&pi, &c, 3.0).unwrap();
        assert_abs_diff_eq!(value, c.values().mean(), epsilon = 1e-15);
    }

    #[test]
    fn primal_of_identity_permutation() {
        let c = CostMatrix::new(SquareMatrix::from_fn(4, |i, j| if i == j { 0.0 } else { 1.0 }).unwrap(), 1.0).unwrap();
        let pi = Coupling::from_permutation(&[0, 1, 2, 3]).unwrap();
        let value = primal_objective(&pi, &c, 2.0).unwrap();
        assert_abs_diff_eq!(value, 4f64.ln() / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(value, std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn primal_dimension_mismatch() {
        let c = CostMatrix::new(SquareMatrix::filled(3, 0.5).unwrap(), 1.0).unwrap();
        let pi = Coupling::uniform(2).unwrap();
        assert!(matches!(primal_objective(&pi, &c, 1.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn dual_closed_forms() {
        let zero = CostMatrix::new(SquareMatrix::filled(5, 0.0).unwrap(), 1.0).unwrap();
        let pot = DualPotentials::zeros(5, 1.0).unwrap();
        assert_abs_diff_eq!(dual_objective(&zero, &pot).unwrap(), 0.0, epsilon = 1e-15);

        let c_bar = 0.7;
        let constant = CostMatrix::new(SquareMatrix::filled(5, c_bar).unwrap(), 1.0).unwrap();
        let expected = 1.0 - (-c_bar).exp();
        assert_abs_diff_eq!(dual_objective(&constant, &pot).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn dual_is_translation_invariant() {
        let c = CostMatrix::new(SquareMatrix::from_fn(4, |i, j| ((i * 3 + j) % 5) as f64 / 5.0).unwrap(), 1.0).unwrap();
        let pot = DualPotentials::new(vec![0.1, -0.2, 0.3, 0.0], vec![0.05, 0.1, -0.1, -0.05], 3.0).unwrap();
        let scalar = DualPotentials::new(
            pot.f.iter().map(|f| f + 0.37).collect(),
            pot.g.iter().map(|g| g - 0.37).collect(),
            3.0,
        )
        .unwrap();
        let base = dual_objective(&c, &pot).unwrap();
        assert_abs_diff_eq!(dual_objective(&c, &scalar).unwrap(), base, epsilon = 1e-14);
    }

    #[test]
    fn coupling_from_zero_potentials_is_uniform() {
        let c = CostMatrix::new(SquareMatrix::filled(6, 0.0).unwrap(), 1.0).unwrap();
        let pot = DualPotentials::zeros(6, 4.0).unwrap();
        let pi = coupling_from_potentials(&c, &pot).unwrap();
        for &p in pi.mass().as_slice() {
            assert_abs_diff_eq!(p, 1.0 / 36.0, epsilon = 1e-16);
        }
    }

    #[test]
    fn coupling_from_potentials_reports_overflow() {
        let c = CostMatrix::new(SquareMatrix::filled(2, 0.0).unwrap(), 1.0).unwrap();
        let pot = DualPotentials::new(vec![1.0, 1.0], vec![1.0, 1.0], 1000.0).unwrap();
        assert!(matches!(coupling_from_potentials(&c, &pot), Err(Error::Numerical(_))));
    }

    #[test]
    fn marginal_residual_cases() {
        assert_eq!(marginal_residual(&Coupling::uniform(4).unwrap()), 0.0);
        assert_eq!(marginal_residual(&Coupling::from_permutation(&[2, 0, 1]).unwrap()), 0.0);
        let delta = 1e-3;
        let mut data = vec![1.0 / 16.0; 16];
        data[5] += delta;
        let pi = Coupling::from_mass(SquareMatrix::new(4, data).unwrap()).unwrap();
        assert_abs_diff_eq!(marginal_residual(&pi), delta, epsilon = 1e-15);
    }
}
