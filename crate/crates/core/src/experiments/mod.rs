//! The two simulation studies: oracle plans built from the true cost, and
//! feasible plans built from a cost surface learned on simulated training
//! data, swept over training sizes and regularization levels.

mod config;
mod output;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{DgpKind, EstimatorSettings, ExperimentConfig};
pub(crate) use output::{num, write_table};
pub use output::{write_outputs, CellDiagnostics, RunManifest, OUTPUT_FILES};

use crate::assignment::{hungarian_solve, Assignment};
use crate::cost_model::{
    estimator_error, fit_cost_estimator, generate_training_sample, CostEstimator, Dgp, EstimatorConfig, FeatureSet,
    C_BAR,
};
use crate::error::{Error, Result};
use crate::ot::{CostMatrix, Coupling, MarketProfiles};
use crate::plan::{solve_plan, PlanSolution};
use crate::regret::{
    compute_regret, empirical_errors, lemma1_audit, prop1_bounds_check, regularization_bias_bound, theorem_bound,
};
use crate::rng::{derive_seed, stage};

/// Mid-quantile market: `x_i = F_X^{-1}((i - 1/2)/n)` and likewise for `w`.
/// For the PAM design this is the equally spaced grid on `[0, 1]`.
pub fn build_market(dgp: &Dgp, n: usize) -> Result<MarketProfiles> {
    if n < 2 {
        return Err(Error::invalid(format!("market size must be at least 2, got {n}")));
    }
    let level = |i: usize| (i as f64 + 0.5) / n as f64;
    let x = (0..n).map(|i| dgp.x_quantile(level(i))).collect::<Result<Vec<_>>>()?;
    let w = (0..n).map(|i| dgp.w_quantile(level(i))).collect();
    MarketProfiles::new(x, w)
}

/// Average cost when every pair is equally likely, `(1/n^2) sum_ij c_ij`.
pub fn random_matching_welfare(c: &CostMatrix) -> f64 {
    c.values().mean()
}

/// `(random - welfare) / (random - optimum)`: 1 for the optimal plan, 0 for random matching.
pub fn relative_gain(random: f64, optimum: f64, welfare: f64) -> f64 {
    let gap = random - optimum;
    if gap > 0.0 {
        (random - welfare) / gap
    } else {
        f64::NAN
    }
}

/// Gain over random matching in percentage points of the cost probability.
pub fn absolute_gain_pp(random: f64, welfare: f64) -> f64 {
    100.0 * (random - welfare)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub inv_eta: f64,
    pub welfare: f64,
    pub abs_gain_pp: f64,
    pub relative_gain: f64,
    /// `pi_rot(c) - pi_star(c)`.
    pub regularization_loss: f64,
    /// `log(n) / eta`, absent for the unregularized plan.
    pub bias_bound: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// One `(N, 1/eta)` cell aggregated over the converged repetitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n_train: usize,
    pub inv_eta: f64,
    pub runs: usize,
    pub converged_runs: usize,
    pub mean_welfare: f64,
    pub std_welfare: f64,
    pub mean_abs_gain_pp: f64,
    pub std_abs_gain_pp: f64,
    pub mean_relative_gain: f64,
    pub std_relative_gain: f64,
    pub mean_regret: f64,
    pub std_regret: f64,
    pub mean_l1_grid: f64,
    pub mean_l1_mc: f64,
    pub mean_l2_mc: f64,
    /// Mean of the finite regret bounds, if any.
    pub mean_bound: Option<f64>,
    pub bounds_checked: usize,
    pub bound_holds_rate: Option<f64>,
    pub vacuous_bounds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelSummary {
    pub dgp: Dgp,
    pub gamma: Option<f64>,
    pub n: usize,
    pub random_welfare: f64,
    pub oracle_opt_welfare: f64,
    pub oracle_sigma: Vec<usize>,
    pub oracle: Vec<OracleRow>,
    pub cells: Vec<CellSummary>,
    /// Oracle plans in grid order, kept for heatmap output.
    #[serde(skip)]
    pub oracle_couplings: Vec<Coupling>,
}

/// Everything measured for one repetition at one regularization level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub gamma: Option<f64>,
    pub n_train: usize,
    pub inv_eta: f64,
    pub repetition: usize,
    pub sample_seed: u64,
    pub converged: bool,
    pub iterations: usize,
    pub feasible_welfare: f64,
    pub abs_gain_pp: f64,
    pub relative_gain: f64,
    pub regret: f64,
    pub rot_regret: f64,
    pub regularization_bias: f64,
    pub kl_feasible: f64,
    pub kl_oracle: f64,
    pub l1_grid: f64,
    pub l2_grid: f64,
    pub l1_mc: f64,
    pub l2_mc: f64,
    pub l1_mc_se: f64,
    pub l2_mc_se: f64,
    /// Grid-norm regret bound; absent for the unregularized plan.
    pub bound_total: Option<f64>,
    pub bound_vacuous: Option<bool>,
    pub bound_holds: Option<bool>,
    /// Same bound with Monte Carlo norms inflated by two standard errors; reported only.
    pub bound_total_mc: Option<f64>,
    pub prop1_cost_gap: Option<f64>,
    pub prop1_cost_gap_bound: Option<f64>,
    pub prop1_cost_gap_holds: Option<bool>,
    pub prop1_dual_gap: Option<f64>,
    pub prop1_dual_gap_bound: Option<f64>,
    pub prop1_dual_gap_holds: Option<bool>,
    pub prop1_dual_gap_first_order_holds: Option<bool>,
    pub lemma1_holds: Option<bool>,
    pub decomposition_holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelfareSummary {
    pub panels: Vec<PanelSummary>,
    pub runs: Vec<RunRecord>,
}

struct Panel {
    dgp: Dgp,
    gamma: Option<f64>,
    market: MarketProfiles,
    cost: CostMatrix,
    random: f64,
    opt: Assignment,
    oracle: Vec<PlanSolution>,
}

impl Panel {
    fn build(cfg: &ExperimentConfig, gamma: Option<f64>) -> Result<Self> {
        let dgp = match gamma {
            Some(g) => Dgp::logistic(g)?,
            None => Dgp::Pam,
        };
        let market = build_market(&dgp, cfg.n())?;
        let cost = CostEstimator::oracle(&dgp).cost_matrix(&market)?;
        let random = random_matching_welfare(&cost);
        let opt = hungarian_solve(&cost)?;
        let oracle = cfg
            .eta_inverse_grid
            .par_iter()
            .map(|&v| solve_plan(&cost, v, cfg.sinkhorn_tol, cfg.sinkhorn_max_iter))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dgp, gamma, market, cost, random, opt, oracle })
    }

    fn tag(&self) -> u64 {
        self.gamma.map_or(u64::MAX, f64::to_bits)
    }

    fn summary(&self) -> Result<PanelSummary> {
        let n = self.cost.n();
        let oracle = self
            .oracle
            .iter()
            .map(|p| {
                let welfare = p.coupling.expected_cost(&self.cost)?;
                Ok(OracleRow {
                    inv_eta: p.inv_eta,
                    welfare,
                    abs_gain_pp: absolute_gain_pp(self.random, welfare),
                    relative_gain: relative_gain(self.random, self.opt.total_cost, welfare),
                    regularization_loss: welfare - self.opt.total_cost,
                    bias_bound: p.eta().map(|eta| regularization_bias_bound(n, eta)),
                    converged: p.converged(),
                    iterations: p.iterations(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PanelSummary {
            dgp: self.dgp.clone(),
            gamma: self.gamma,
            n,
            random_welfare: self.random,
            oracle_opt_welfare: self.opt.total_cost,
            oracle_sigma: self.opt.sigma.clone(),
            oracle,
            cells: Vec::new(),
            oracle_couplings: self.oracle.iter().map(|p| p.coupling.clone()).collect(),
        })
    }
}

fn with_workers<T: Send>(workers: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(job()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::invalid(format!("cannot start {k} workers: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// Oracle plans for every panel and regularization level; deterministic, no repetitions.
pub fn run_oracle_sweep(cfg: &ExperimentConfig) -> Result<WelfareSummary> {
    cfg.validate()?;
    with_workers(cfg.workers, || {
        let panels =
            cfg.panel_gammas().into_iter().map(|g| Panel::build(cfg, g)?.summary()).collect::<Result<Vec<_>>>()?;
        Ok(WelfareSummary { panels, runs: Vec::new() })
    })?
}

/// Full pipeline per repetition: sample, fit, plan under the fitted cost,
/// evaluate under the true cost. Tasks run in parallel and are merged in
/// `(panel, N, repetition, 1/eta)` order, so output does not depend on scheduling.
pub fn run_feasible_sweep(cfg: &ExperimentConfig) -> Result<WelfareSummary> {
    cfg.validate()?;
    with_workers(cfg.workers, || {
        let panels = cfg.panel_gammas().into_iter().map(|g| Panel::build(cfg, g)).collect::<Result<Vec<_>>>()?;
        let tasks: Vec<(usize, usize, usize)> = (0..panels.len())
            .flat_map(|p| {
                cfg.training_sizes.iter().flat_map(move |&n_train| (0..cfg.reps()).map(move |rep| (p, n_train, rep)))
            })
            .collect();
        let per_task = tasks
            .par_iter()
            .map(|&(p, n_train, rep)| run_repetition(cfg, &panels[p], n_train, rep))
            .collect::<Result<Vec<_>>>()?;
        let runs: Vec<RunRecord> = per_task.into_iter().flatten().collect();

        let mut summaries = Vec::with_capacity(panels.len());
        for panel in &panels {
            let mut s = panel.summary()?;
            for &n_train in &cfg.training_sizes {
                for &inv_eta in &cfg.eta_inverse_grid {
                    let cell: Vec<&RunRecord> = runs
                        .iter()
                        .filter(|r| r.gamma == panel.gamma && r.n_train == n_train && r.inv_eta == inv_eta)
                        .collect();
                    s.cells.push(summarize_cell(n_train, inv_eta, &cell));
                }
            }
            summaries.push(s);
        }
        Ok(WelfareSummary { panels: summaries, runs })
    })?
}

fn run_repetition(cfg: &ExperimentConfig, panel: &Panel, n_train: usize, rep: usize) -> Result<Vec<RunRecord>> {
    let key = [panel.tag(), n_train as u64, rep as u64];
    let seed_for = |tag: u64| derive_seed(cfg.base_seed, &[key[0], key[1], key[2], tag]);
    let sample_seed = seed_for(stage::TRAINING_SAMPLE);

    let estimator = if cfg.oracle_injection {
        CostEstimator::oracle(&panel.dgp)
    } else {
        let sample = generate_training_sample(&panel.dgp, n_train, sample_seed)?;
        let est_cfg = EstimatorConfig {
            kind: cfg.estimator.kind,
            features: FeatureSet::for_dgp(&panel.dgp),
            gbdt: cfg.estimator.gbdt_params(),
            bins: cfg.estimator.bins,
            c_bar: C_BAR,
        };
        let mut est = fit_cost_estimator(&sample, &est_cfg)?;
        if let Some(meta) = est.meta.as_mut() {
            meta.seed = Some(sample_seed);
        }
        est
    };
    let c_hat = estimator.cost_matrix(&panel.market)?;
    let (l1_grid, l2_grid) = empirical_errors(&panel.cost, &c_hat)?;
    let mc = estimator_error(&estimator, &panel.dgp, cfg.mc_draws, seed_for(stage::ESTIMATOR_ERROR))?;
    let n = panel.cost.n();

    let mut records = Vec::with_capacity(cfg.eta_inverse_grid.len());
    for (k, &inv_eta) in cfg.eta_inverse_grid.iter().enumerate() {
        let plan = solve_plan(&c_hat, inv_eta, cfg.sinkhorn_tol, cfg.sinkhorn_max_iter)?;
        let welfare = plan.coupling.expected_cost(&panel.cost)?;
        let regret = compute_regret(&panel.cost, &plan.coupling, &panel.oracle[k].coupling, &panel.opt, inv_eta)?;

        let mut rec = RunRecord {
            gamma: panel.gamma,
            n_train,
            inv_eta,
            repetition: rep,
            sample_seed,
            converged: plan.converged() && panel.oracle[k].converged(),
            iterations: plan.iterations(),
            feasible_welfare: welfare,
            abs_gain_pp: absolute_gain_pp(panel.random, welfare),
            relative_gain: relative_gain(panel.random, panel.opt.total_cost, welfare),
            regret: regret.regret,
            rot_regret: regret.rot_regret,
            regularization_bias: regret.regularization_bias,
            kl_feasible: regret.kl_feasible,
            kl_oracle: regret.kl_oracle,
            l1_grid,
            l2_grid,
            l1_mc: mc.l1,
            l2_mc: mc.l2,
            l1_mc_se: mc.l1_se,
            l2_mc_se: mc.l2_se,
            bound_total: None,
            bound_vacuous: None,
            bound_holds: None,
            bound_total_mc: None,
            prop1_cost_gap: None,
            prop1_cost_gap_bound: None,
            prop1_cost_gap_holds: None,
            prop1_dual_gap: None,
            prop1_dual_gap_bound: None,
            prop1_dual_gap_holds: None,
            prop1_dual_gap_first_order_holds: None,
            lemma1_holds: None,
            decomposition_holds: regret.decomposition_holds(),
        };
        if let (Some(eta), Some(pot)) = (plan.eta(), plan.potentials.as_ref()) {
            let mut bound = theorem_bound(l1_grid, l2_grid, eta, C_BAR, n)?;
            rec.bound_holds = Some(bound.check(regret.regret));
            rec.bound_total = Some(bound.total_bound);
            rec.bound_vacuous = Some(bound.vacuous);
            let mc_bound = theorem_bound(mc.l1 + 2.0 * mc.l1_se, mc.l2 + 2.0 * mc.l2_se, eta, C_BAR, n)?;
            rec.bound_total_mc = Some(mc_bound.total_bound);
            let p1 = prop1_bounds_check(&panel.cost, &c_hat, pot, &plan.coupling)?;
            rec.prop1_cost_gap = Some(p1.cost_gap);
            rec.prop1_cost_gap_bound = Some(p1.cost_gap_bound);
            rec.prop1_cost_gap_holds = Some(p1.cost_gap_holds);
            rec.prop1_dual_gap = Some(p1.dual_gap);
            rec.prop1_dual_gap_bound = Some(p1.dual_gap_bound);
            rec.prop1_dual_gap_holds = Some(p1.dual_gap_holds);
            rec.prop1_dual_gap_first_order_holds = Some(p1.dual_gap_first_order_holds);
            rec.lemma1_holds = Some(lemma1_audit(pot, &c_hat)?.holds);
        }
        records.push(rec);
    }
    Ok(records)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let m = values.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    if m == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64;
    (mean, var.sqrt())
}

fn summarize_cell(n_train: usize, inv_eta: f64, runs: &[&RunRecord]) -> CellSummary {
    let ok: Vec<&RunRecord> = runs.iter().copied().filter(|r| r.converged).collect();
    let col = |f: fn(&RunRecord) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let (mean_welfare, std_welfare) = mean_std(&col(|r| r.feasible_welfare));
    let (mean_abs_gain_pp, std_abs_gain_pp) = mean_std(&col(|r| r.abs_gain_pp));
    let (mean_relative_gain, std_relative_gain) = mean_std(&col(|r| r.relative_gain));
    let (mean_regret, std_regret) = mean_std(&col(|r| r.regret));
    let checked: Vec<&RunRecord> = ok.iter().copied().filter(|r| r.bound_holds.is_some()).collect();
    let finite: Vec<f64> = checked.iter().filter_map(|r| r.bound_total).filter(|b| b.is_finite()).collect();
    let holding = checked.iter().filter(|r| r.bound_holds == Some(true)).count();
    CellSummary {
        n_train,
        inv_eta,
        runs: runs.len(),
        converged_runs: ok.len(),
        mean_welfare,
        std_welfare,
        mean_abs_gain_pp,
        std_abs_gain_pp,
        mean_relative_gain,
        std_relative_gain,
        mean_regret,
        std_regret,
        mean_l1_grid: mean_std(&col(|r| r.l1_grid)).0,
        mean_l1_mc: mean_std(&col(|r| r.l1_mc)).0,
        mean_l2_mc: mean_std(&col(|r| r.l2_mc)).0,
        mean_bound: (!finite.is_empty()).then(|| mean_std(&finite).0),
        bounds_checked: checked.len(),
        bound_holds_rate: (!checked.is_empty()).then(|| holding as f64 / checked.len() as f64),
        vacuous_bounds: checked.iter().filter(|r| r.bound_vacuous == Some(true)).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pam_market_is_the_midpoint_grid() {
        let m = build_market(&Dgp::Pam, 2).unwrap();
        assert_eq!(m.x(), &[0.25, 0.75]);
        assert_eq!(m.w(), &[0.25, 0.75]);
        assert!(build_market(&Dgp::Pam, 1).is_err());
    }

    #[test]
    fn logistic_market_quantiles() {
        let m = build_market(&Dgp::logistic(0.06).unwrap(), 200).unwrap();
        let median = 0.5 * (m.x()[99] + m.x()[100]);
        assert!((median - 0.288).abs() < 0.002);
        for i in 0..100 {
            assert!((m.w()[i] + m.w()[199 - i]).abs() < 1e-12);
        }
    }

    #[test]
    fn random_welfare_simple_cases() {
        use crate::ot::SquareMatrix;
        let c = CostMatrix::new(SquareMatrix::filled(4, 0.3).unwrap(), 1.0).unwrap();
        assert!((random_matching_welfare(&c) - 0.3).abs() < 1e-15);
        let c = CostMatrix::new(SquareMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(), 1.0).unwrap();
        assert_eq!(random_matching_welfare(&c), 0.5);
    }

    #[test]
    fn gains_are_normalized() {
        assert_eq!(relative_gain(0.7, 0.6, 0.6), 1.0);
        assert_eq!(relative_gain(0.7, 0.6, 0.7), 0.0);
        assert!(relative_gain(0.7, 0.6, 0.75) < 0.0);
        assert!(relative_gain(0.5, 0.5, 0.5).is_nan());
        assert!((absolute_gain_pp(0.70, 0.69) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_feasible_sweep_is_deterministic_and_complete() {
        let cfg = ExperimentConfig {
            market_size: Some(12),
            training_sizes: vec![300, 600],
            repetitions: Some(2),
            eta_inverse_grid: vec![0.0, 0.05],
            mc_draws: 500,
            ..ExperimentConfig::logistic()
        };
        let a = run_feasible_sweep(&cfg).unwrap();
        let b = run_feasible_sweep(&ExperimentConfig { workers: Some(1), ..cfg.clone() }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.runs.len(), 3 * 2 * 2 * 2);
        assert_eq!(a.panels.len(), 3);
        assert!(a.panels.iter().all(|p| p.cells.len() == 4 && p.oracle.len() == 2));
        assert!(a.runs.iter().all(|r| r.decomposition_holds));
    }

    #[test]
    fn oracle_injection_reproduces_the_oracle_sweep() {
        let cfg = ExperimentConfig {
            market_size: Some(20),
            training_sizes: vec![100],
            repetitions: Some(1),
            eta_inverse_grid: vec![0.0, 0.01, 0.05],
            mc_draws: 100,
            oracle_injection: true,
            ..ExperimentConfig::pam()
        };
        let oracle = run_oracle_sweep(&cfg).unwrap();
        let feasible = run_feasible_sweep(&cfg).unwrap();
        for (row, run) in oracle.panels[0].oracle.iter().zip(&feasible.runs) {
            assert_eq!(row.welfare, run.feasible_welfare);
            assert_eq!(row.relative_gain, run.relative_gain);
            assert_eq!(run.l1_grid, 0.0);
        }
        assert_eq!(oracle.panels[0].oracle[0].relative_gain, 1.0);
    }
}
