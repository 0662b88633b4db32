//! One line per acceptance criterion. Runs as a plain binary so the lines
//! come out in order; exits nonzero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use matchopt::assignment::{average_cost, brute_force_solve, hungarian_solve};
use matchopt::bvn::{bvn_decompose, MixtureSampler};
use matchopt::cost_model::{
    calibrate_logistic, estimator_error, fit_cost_estimator, generate_training_sample, Dgp, EstimatorConfig,
};
use matchopt::experiments::{run_feasible_sweep, run_oracle_sweep, ExperimentConfig, RunRecord};
use matchopt::ot::{dual_objective, primal_objective, sinkhorn_solve, CostMatrix, SquareMatrix, DEFAULT_MAX_ITER};
use matchopt::regret::lemma1_audit;
use matchopt::rng::{derive_seed, rng_from_seed, stage};
use rand::Rng;
use rayon::prelude::*;

const BASE_SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
}

fn random_cost(n: usize, seed: u64) -> CostMatrix {
    let mut rng = rng_from_seed(seed);
    let m = SquareMatrix::from_fn(n, |_, _| rng.random::<f64>()).unwrap();
    CostMatrix::new(m, 1.0).unwrap()
}

/// Row and column sums against `1/n`, worst absolute deviation.
fn marginal_error(mass: &SquareMatrix) -> f64 {
    let n = mass.n();
    let t = 1.0 / n as f64;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let r: f64 = (0..n).map(|j| mass.get(i, j)).sum();
        let c: f64 = (0..n).map(|j| mass.get(j, i)).sum();
        worst = worst.max((r - t).abs()).max((c - t).abs());
    }
    worst
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed < Duration::from_secs(limit_s)
}

fn c1_c2() -> (Outcome, Outcome) {
    let start = Instant::now();
    let etas = [1.0, 10.0, 100.0, 500.0];
    let cases: Vec<(usize, f64)> = (0..100).flat_map(|k| etas.map(|e| (k, e))).collect();
    let results: Vec<_> = cases
        .par_iter()
        .map(|&(k, eta)| {
            let c = random_cost(100, derive_seed(BASE_SEED, &[1, k as u64]));
            let s = sinkhorn_solve(&c, eta, 1e-9, DEFAULT_MAX_ITER).unwrap();
            let p = primal_objective(&s.coupling, &c, eta).unwrap();
            let d = dual_objective(&c, &s.potentials).unwrap();
            let audit = lemma1_audit(&s.potentials, &c).unwrap();
            (s.report.converged, marginal_error(s.coupling.mass()), (p - d).abs() / p.abs(), audit)
        })
        .collect();
    let elapsed = start.elapsed();
    let converged: Vec<_> = results.iter().filter(|r| r.0).collect();
    let worst_res = converged.iter().map(|r| r.1).fold(0.0, f64::max);
    let worst_gap = converged.iter().map(|r| r.2).fold(0.0, f64::max);
    let c1 = Outcome {
        pass: converged.len() == results.len() && worst_res <= 1e-9 && worst_gap <= 1e-6 && within(elapsed, 60),
        detail: format!(
            "{}/{} converged, max residual {worst_res:.2e} (<= 1e-9), max rel gap {worst_gap:.2e} (<= 1e-6), {:.1}s (< 60s)",
            converged.len(),
            results.len(),
            elapsed.as_secs_f64()
        ),
    };
    let violations = converged.iter().filter(|r| !r.3.holds).count();
    let f_max = converged.iter().map(|r| r.3.f_max.abs().max(r.3.f_min.abs())).fold(0.0, f64::max);
    let g_max = converged.iter().map(|r| r.3.g_max.abs().max(r.3.g_min.abs())).fold(0.0, f64::max);
    let c2 = Outcome {
        pass: violations == 0 && !converged.is_empty(),
        detail: format!(
            "{violations} violations over {} solves, max |f| {f_max:.4}, max |g| {g_max:.4}",
            converged.len()
        ),
    };
    (c1, c2)
}

fn c3() -> Outcome {
    let start = Instant::now();
    let mismatches = (0..500u64)
        .into_par_iter()
        .filter(|&k| {
            let n = 1 + (k % 8) as usize;
            let c = random_cost(n, derive_seed(BASE_SEED, &[3, k]));
            let h = hungarian_solve(&c).unwrap();
            let b = brute_force_solve(&c).unwrap();
            h.total_cost != b.total_cost || average_cost(c.values(), &h.sigma) != b.total_cost
        })
        .count();
    let elapsed = start.elapsed();
    Outcome {
        pass: mismatches == 0 && within(elapsed, 30),
        detail: format!("{mismatches} mismatches on 500 instances (n = 1..8), {:.2}s (< 30s)", elapsed.as_secs_f64()),
    }
}

fn c4() -> Outcome {
    let etas = [1.0, 10.0, 50.0, 100.0];
    let results: Vec<(f64, f64, f64, f64)> = (0..100u64)
        .into_par_iter()
        .map(|k| {
            let c = random_cost(30, derive_seed(BASE_SEED, &[4, k]));
            let s = sinkhorn_solve(&c, etas[k as usize % 4], 1e-12, DEFAULT_MAX_ITER).unwrap();
            let mix = bvn_decompose(&s.coupling).unwrap();
            let err = mix.reconstruction_error(&s.coupling).unwrap();
            let target = s.coupling.expected_cost(&c).unwrap();
            let mut sampler = MixtureSampler::new(&mix, derive_seed(BASE_SEED, &[4, k, stage::BVN_SAMPLING]));
            let draws = 100_000;
            let (mut sum, mut sq) = (0.0, 0.0);
            for _ in 0..draws {
                let v = average_cost(c.values(), sampler.draw());
                sum += v;
                sq += v * v;
            }
            let mean = sum / draws as f64;
            let var = (sq / draws as f64 - mean * mean) * draws as f64 / (draws - 1) as f64;
            (err, mean, target, (var / draws as f64).sqrt())
        })
        .collect();
    let worst_err = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let z: Vec<f64> = results.iter().map(|r| (r.1 - r.2).abs() / r.3).collect();
    let over = z.iter().filter(|&&z| z > 3.0).count();
    let worst_z = z.iter().copied().fold(0.0, f64::max);
    Outcome {
        pass: worst_err <= 1e-8 && over == 0,
        detail: format!(
            "max entry error {worst_err:.2e} (<= 1e-8), sampled cost outside 3 SE on {over}/100 (max {worst_z:.2} SE)"
        ),
    }
}

fn c5() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig { eta_inverse_grid: vec![0.0, 1e-4], ..ExperimentConfig::pam() };
    let s = run_oracle_sweep(&cfg).unwrap();
    let p = &s.panels[0];
    let identity = p.oracle_sigma.iter().enumerate().all(|(i, &j)| i == j);
    let gain = p.oracle[1].relative_gain;
    let elapsed = start.elapsed();
    Outcome {
        pass: identity && p.n == 100 && gain > 0.99 && p.oracle[1].converged && within(elapsed, 10),
        detail: format!(
            "identity permutation: {identity}, relative gain at 1/eta=1e-4: {gain:.5} (> 0.99), {:.2}s (< 10s)",
            elapsed.as_secs_f64()
        ),
    }
}

fn c6() -> Outcome {
    // E[X^2] = E[W^2] = 1/3 and E[XW] = 1/4 for independent uniforms.
    let analytic = 1.0 - (1.0 / 3.0 + 1.0 / 3.0 + 0.25) / 3.0;
    let s = run_oracle_sweep(&ExperimentConfig { eta_inverse_grid: vec![0.0], ..ExperimentConfig::pam() }).unwrap();
    let grid = s.panels[0].random_welfare;
    Outcome {
        pass: (grid - analytic).abs() <= 0.005,
        detail: format!("grid {grid:.6} vs analytic {analytic:.6}, diff {:.2e} (<= 0.005)", (grid - analytic).abs()),
    }
}

fn c7() -> Outcome {
    let worst =
        [0.02, 0.06, 0.10].iter().map(|&g| calibrate_logistic(g).unwrap().max_anchor_residual()).fold(0.0, f64::max);
    Outcome { pass: worst <= 1e-10, detail: format!("max anchor residual {worst:.2e} (<= 1e-10)") }
}

fn c8() -> Outcome {
    let start = Instant::now();
    let s =
        run_oracle_sweep(&ExperimentConfig { eta_inverse_grid: vec![0.0], ..ExperimentConfig::logistic() }).unwrap();
    let gains: Vec<f64> = s.panels.iter().map(|p| p.oracle[0].abs_gain_pp).collect();
    let increasing = gains.windows(2).all(|w| w[1] > w[0]);
    let elapsed = start.elapsed();
    Outcome {
        pass: (0.5..=1.5).contains(&gains[0]) && increasing && within(elapsed, 60),
        detail: format!(
            "gains {:.3} / {:.3} / {:.3} pp for gamma 0.02 / 0.06 / 0.10 (first in [0.5, 1.5], increasing), {:.1}s (< 60s)",
            gains[0],
            gains[1],
            gains[2],
            elapsed.as_secs_f64()
        ),
    }
}

fn c9_c10() -> (Outcome, Outcome) {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        gammas: vec![0.06],
        training_sizes: vec![500, 50_000],
        eta_inverse_grid: vec![0.002, 0.01, 0.05],
        repetitions: Some(10),
        ..ExperimentConfig::logistic()
    };
    let s = run_feasible_sweep(&cfg).unwrap();
    let elapsed = start.elapsed();
    let ok: Vec<&RunRecord> = s.runs.iter().filter(|r| r.converged).collect();
    let held = ok.iter().filter(|r| r.bound_holds == Some(true)).count();
    let vacuous = ok.iter().filter(|r| r.bound_vacuous == Some(true)).count();
    let tightest = ok
        .iter()
        .filter_map(|r| r.bound_total.filter(|b| b.is_finite()).map(|b| b - r.regret))
        .fold(f64::INFINITY, f64::min);
    let c9 = Outcome {
        pass: !ok.is_empty() && held == ok.len() && within(elapsed, 900),
        detail: format!(
            "bound holds on {held}/{} converged runs ({} not converged), {vacuous} vacuous, smallest finite slack {tightest:.3e}, {:.1}s (< 900s)",
            ok.len(),
            s.runs.len() - ok.len(),
            elapsed.as_secs_f64()
        ),
    };
    let both =
        ok.iter().filter(|r| r.prop1_cost_gap_holds == Some(true) && r.prop1_dual_gap_holds == Some(true)).count();
    let first_order = ok.iter().filter(|r| r.prop1_dual_gap_first_order_holds == Some(true)).count();
    let c10 = Outcome {
        pass: !ok.is_empty() && both == ok.len(),
        detail: format!(
            "both inequalities hold on {both}/{} converged solves; first-order dual-gap form holds on {first_order}/{}",
            ok.len(),
            ok.len()
        ),
    };
    (c9, c10)
}

fn c11() -> Outcome {
    let dgp = Dgp::logistic(0.06).unwrap();
    let sizes = [500usize, 5_000, 50_000, 500_000];
    let tasks: Vec<(usize, u64)> = sizes.iter().flat_map(|&n| (0..5u64).map(move |s| (n, s))).collect();
    let l1: Vec<f64> = tasks
        .par_iter()
        .map(|&(n, s)| {
            let sample =
                generate_training_sample(&dgp, n, derive_seed(BASE_SEED, &[11, n as u64, s, stage::TRAINING_SAMPLE]))
                    .unwrap();
            let est = fit_cost_estimator(&sample, &EstimatorConfig::for_dgp(&dgp)).unwrap();
            estimator_error(&est, &dgp, 100_000, derive_seed(BASE_SEED, &[11, n as u64, s, stage::ESTIMATOR_ERROR]))
                .unwrap()
                .l1
        })
        .collect();
    let medians: Vec<f64> = l1
        .chunks(5)
        .map(|c| {
            let mut v = c.to_vec();
            v.sort_by(f64::total_cmp);
            v[2]
        })
        .collect();
    Outcome {
        pass: medians.windows(2).all(|w| w[1] < w[0]),
        detail: format!(
            "median L1 {} for N = 500 / 5e3 / 5e4 / 5e5 (strictly decreasing)",
            medians.iter().map(|m| format!("{m:.5}")).collect::<Vec<_>>().join(" / ")
        ),
    }
}

fn c12() -> Outcome {
    let cfg = ExperimentConfig {
        gammas: vec![0.06],
        training_sizes: vec![500, 500_000],
        repetitions: Some(10),
        ..ExperimentConfig::logistic()
    };
    let s = run_feasible_sweep(&cfg).unwrap();
    let cells = &s.panels[0].cells;
    let mut pass = true;
    let mut parts = Vec::new();
    for &v in &cfg.eta_inverse_grid {
        let small = cells.iter().find(|c| c.n_train == 500 && c.inv_eta == v).unwrap();
        let large = cells.iter().find(|c| c.n_train == 500_000 && c.inv_eta == v).unwrap();
        pass &= large.mean_relative_gain > small.mean_relative_gain && large.converged_runs >= 10;
        parts.push(format!("1/eta={v}: {:.4} -> {:.4}", small.mean_relative_gain, large.mean_relative_gain));
    }
    Outcome { pass, detail: format!("mean relative gain N=500 -> 5e5: {}", parts.join(", ")) }
}

fn c13() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    std::fs::write(
        &config,
        "dgp = \"logistic\"\nmarket_size = 40\ntraining_sizes = [500, 5000]\nrepetitions = 3\n\
         eta_inverse_grid = [0.0, 0.01, 0.05]\nmc_draws = 2000\n",
    )
    .unwrap();
    let run = |out: &Path, workers: &str| {
        Command::new(env!("CARGO_BIN_EXE_matchopt"))
            .args(["--workers", workers, "experiment"])
            .arg(&config)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap()
            .status
            .success()
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ran = run(&a, "1") && run(&b, "4");
    let mut compared = 0;
    let mut differing = Vec::new();
    if ran {
        for f in matchopt::experiments::OUTPUT_FILES.iter().filter(|f| f.ends_with(".csv")) {
            compared += 1;
            if std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap() {
                differing.push(*f);
            }
        }
    }
    Outcome {
        pass: ran && compared > 0 && differing.is_empty(),
        detail: format!("{compared} CSVs compared across two runs (1 and 4 workers), differing: {differing:?}"),
    }
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |id: u32, name: &'static str, o: Outcome| {
        println!("[{}] criterion {id:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };
    let (o1, o2) = c1_c2();
    report(1, "sinkhorn feasibility and duality", o1);
    report(2, "potential and density bounds", o2);
    report(3, "hungarian vs brute force", c3());
    report(4, "bvn reconstruction and sampling", c4());
    report(5, "pam oracle", c5());
    report(6, "pam random-matching welfare", c6());
    report(7, "logistic calibration", c7());
    report(8, "logistic oracle gains", c8());
    let (o9, o10) = c9_c10();
    report(9, "regret bound dominance", o9);
    report(10, "cost-gap and dual-gap inequalities", o10);
    report(11, "estimator consistency", c11());
    report(12, "feasible-policy trend", c12());
    report(13, "determinism", c13());
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
