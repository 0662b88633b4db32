use matchopt::assignment::{brute_force_solve, hungarian_solve};
use matchopt::bvn::bvn_decompose;
use matchopt::cost_model::{CostEstimator, Dgp};
use matchopt::experiments::{build_market, run_oracle_sweep, ExperimentConfig};
use matchopt::ot::{
    dual_objective, is_permutation, primal_objective, sinkhorn_solve, CostMatrix, SquareMatrix, DEFAULT_MAX_ITER,
};
use matchopt::regret::{lemma1_audit, prop1_bounds_check, regularization_bias_bound};
use matchopt::rng::rng_from_seed;
use proptest::prelude::*;
use rand::Rng;

fn cost_strategy(max_n: usize) -> impl Strategy<Value = CostMatrix> {
    (1..=max_n).prop_flat_map(|n| {
        prop::collection::vec(0.0..=1.0f64, n * n)
            .prop_map(move |v| CostMatrix::new(SquareMatrix::new(n, v).unwrap(), 1.0).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn sinkhorn_is_feasible_and_dual_tight(c in cost_strategy(12), eta in 0.5..60.0f64) {
        let s = sinkhorn_solve(&c, eta, 1e-10, DEFAULT_MAX_ITER).unwrap();
        prop_assert!(s.report.converged);
        prop_assert!(s.coupling.marginal_residual() <= 1e-10);
        let p = primal_objective(&s.coupling, &c, eta).unwrap();
        let d = dual_objective(&c, &s.potentials).unwrap();
        prop_assert!(d <= p + 1e-9);
        prop_assert!((p - d).abs() <= 1e-7 * p.abs().max(1e-3));
        prop_assert!(lemma1_audit(&s.potentials, &c).unwrap().holds);
    }

    #[test]
    fn hungarian_matches_enumeration(c in cost_strategy(7)) {
        let h = hungarian_solve(&c).unwrap();
        prop_assert!(is_permutation(&h.sigma));
        prop_assert_eq!(h.total_cost, brute_force_solve(&c).unwrap().total_cost);
    }

    #[test]
    fn bvn_rebuilds_sinkhorn_plans(c in cost_strategy(10), eta in 0.5..40.0f64) {
        let s = sinkhorn_solve(&c, eta, 1e-12, DEFAULT_MAX_ITER).unwrap();
        let mix = bvn_decompose(&s.coupling).unwrap();
        let n = c.n();
        prop_assert!(mix.len() <= (n - 1) * (n - 1) + 1);
        prop_assert!(mix.components.iter().all(|(w, sigma)| *w > 0.0 && is_permutation(sigma)));
        let total: f64 = mix.components.iter().map(|(w, _)| w).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(mix.reconstruction_error(&s.coupling).unwrap() <= 1e-8);
    }
}

/// `c_hat = clip(c + noise)` on 100 seeded instances.
#[test]
fn prop1_under_random_perturbation() {
    let mut first_order_only = 0;
    for seed in 0..100u64 {
        let mut rng = rng_from_seed(seed);
        let n = rng.random_range(2..=15);
        let eta = [1.0, 5.0, 20.0, 100.0][seed as usize % 4];
        let scale = [0.01, 0.1, 0.3][seed as usize % 3];
        let c = SquareMatrix::from_fn(n, |_, _| rng.random::<f64>()).unwrap();
        let c_hat =
            SquareMatrix::from_fn(n, |i, j| (c.get(i, j) + scale * (2.0 * rng.random::<f64>() - 1.0)).clamp(0.0, 1.0))
                .unwrap();
        let (c, c_hat) = (CostMatrix::new(c, 1.0).unwrap(), CostMatrix::new(c_hat, 1.0).unwrap());
        let s = sinkhorn_solve(&c_hat, eta, 1e-11, DEFAULT_MAX_ITER).unwrap();
        assert!(s.report.converged);
        let r = prop1_bounds_check(&c, &c_hat, &s.potentials, &s.coupling).unwrap();
        assert!(r.cost_gap_holds, "seed {seed}: {r:?}");
        assert!(r.dual_gap_first_order_holds, "seed {seed}: {r:?}");
        if eta >= 20.0 {
            assert!(r.dual_gap_holds, "seed {seed}: {r:?}");
        } else if !r.dual_gap_holds {
            first_order_only += 1;
        }
    }
    // The squared-error form of the dual-gap bound is not implied by its
    // derivation; at small eta it can fail while the first-order form holds.
    println!("squared-error dual-gap form failed on {first_order_only} small-eta instances");
}

#[test]
fn oracle_rot_welfare_is_monotone_and_within_bias_bound() {
    let cfg = ExperimentConfig {
        market_size: Some(60),
        eta_inverse_grid: vec![0.0, 1e-4, 0.002, 0.01, 0.05, 0.2],
        ..ExperimentConfig::pam()
    };
    let s = run_oracle_sweep(&cfg).unwrap();
    let p = &s.panels[0];
    for w in p.oracle.windows(2) {
        assert!(w[1].welfare >= w[0].welfare - 1e-12, "{:?}", w);
    }
    for row in &p.oracle[1..] {
        assert!(row.regularization_loss <= regularization_bias_bound(p.n, 1.0 / row.inv_eta) + 1e-9);
        assert!(row.converged);
    }
}

#[test]
fn lemma1_on_the_pam_grid() {
    let market = build_market(&Dgp::Pam, 100).unwrap();
    let c = CostEstimator::oracle(&Dgp::Pam).cost_matrix(&market).unwrap();
    let s = sinkhorn_solve(&c, 50.0, 1e-9, DEFAULT_MAX_ITER).unwrap();
    assert!(lemma1_audit(&s.potentials, &c).unwrap().holds);
}
