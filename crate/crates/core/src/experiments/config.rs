use serde::{Deserialize, Serialize};

use crate::cost_model::{calibrate_logistic, EstimatorKind, GbdtParams};
use crate::error::{Error, Result};
use crate::ot::{DEFAULT_MAX_ITER, DEFAULT_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpKind {
    Pam,
    Logistic,
}

/// Settings for the learned cost surface; features follow the design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSettings {
    pub kind: EstimatorKind,
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: Option<usize>,
    pub max_bins: usize,
    pub bins: usize,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        let g = GbdtParams::default();
        Self {
            kind: EstimatorKind::Gbdt,
            rounds: g.rounds,
            learning_rate: g.learning_rate,
            max_depth: g.max_depth,
            min_leaf: g.min_leaf,
            max_bins: g.max_bins,
            bins: 10,
        }
    }
}

impl EstimatorSettings {
    pub fn gbdt_params(&self) -> GbdtParams {
        GbdtParams {
            rounds: self.rounds,
            learning_rate: self.learning_rate,
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
            max_bins: self.max_bins,
        }
    }
}

/// A sweep over training sizes and regularization levels, repeated over
/// seeds. Unset sizes fall back to the per-design defaults: market of 100
/// and 30 repetitions for `pam`, 200 and 20 for `logistic`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dgp: DgpKind,
    /// Complementarity gaps, one panel each (logistic only).
    pub gammas: Vec<f64>,
    pub market_size: Option<usize>,
    /// `0` is the unregularized plan.
    pub eta_inverse_grid: Vec<f64>,
    pub training_sizes: Vec<usize>,
    pub repetitions: Option<usize>,
    pub base_seed: u64,
    pub mc_draws: usize,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iter: usize,
    /// Replace the fitted surface by the true cost.
    pub oracle_injection: bool,
    pub workers: Option<usize>,
    pub estimator: EstimatorSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dgp: DgpKind::Pam,
            gammas: vec![0.02, 0.06, 0.10],
            market_size: None,
            eta_inverse_grid: vec![0.0, 0.0001, 0.002, 0.01, 0.05],
            training_sizes: vec![500, 5_000, 50_000, 500_000],
            repetitions: None,
            base_seed: 20_240_601,
            mc_draws: 20_000,
            sinkhorn_tol: DEFAULT_TOL,
            sinkhorn_max_iter: DEFAULT_MAX_ITER,
            oracle_injection: false,
            workers: None,
            estimator: EstimatorSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn pam() -> Self {
        Self::default()
    }

    pub fn logistic() -> Self {
        Self { dgp: DgpKind::Logistic, eta_inverse_grid: vec![0.0, 0.002, 0.01, 0.05], ..Self::default() }
    }

    pub fn n(&self) -> usize {
        self.market_size.unwrap_or(match self.dgp {
            DgpKind::Pam => 100,
            DgpKind::Logistic => 200,
        })
    }

    pub fn reps(&self) -> usize {
        self.repetitions.unwrap_or(match self.dgp {
            DgpKind::Pam => 30,
            DgpKind::Logistic => 20,
        })
    }

    /// Parses TOML; syntax, type and range errors carry the offending line.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map(|s| line_of_offset(text, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.validate().map_err(|e| match e {
            Error::Config { line: None, message } => {
                let key = message.split('`').nth(1).unwrap_or_default();
                Error::Config { line: line_of_key(text, key), message }
            }
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config { line: None, message: e.to_string() })
    }

    /// Range checks. Messages name the offending key in backticks.
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: String| Err(Error::Config { line: None, message: format!("`{key}` {why}") });
        if self.n() < 2 {
            return bad("market_size", format!("must be at least 2, got {}", self.n()));
        }
        if self.reps() < 1 {
            return bad("repetitions", "must be at least 1".into());
        }
        if self.eta_inverse_grid.is_empty() {
            return bad("eta_inverse_grid", "must not be empty".into());
        }
        if let Some(v) = self.eta_inverse_grid.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return bad("eta_inverse_grid", format!("entries must be finite and nonnegative, got {v}"));
        }
        if self.training_sizes.is_empty() || self.training_sizes.contains(&0) {
            return bad("training_sizes", "must be a non-empty list of positive sizes".into());
        }
        if self.dgp == DgpKind::Logistic {
            if self.gammas.is_empty() {
                return bad("gammas", "must not be empty for the logistic design".into());
            }
            for &g in &self.gammas {
                if let Err(e) = calibrate_logistic(g) {
                    return bad("gammas", e.to_string());
                }
            }
        }
        if self.mc_draws == 0 {
            return bad("mc_draws", "must be at least 1".into());
        }
        if !(self.sinkhorn_tol.is_finite() && self.sinkhorn_tol > 0.0) {
            return bad("sinkhorn_tol", format!("must be positive, got {}", self.sinkhorn_tol));
        }
        if self.sinkhorn_max_iter == 0 {
            return bad("sinkhorn_max_iter", "must be at least 1".into());
        }
        if self.workers == Some(0) {
            return bad("workers", "must be at least 1".into());
        }
        if let Err(e) = self.estimator.gbdt_params().validate() {
            return bad("estimator", e.to_string());
        }
        if self.estimator.bins == 0 {
            return bad("bins", "must be at least 1".into());
        }
        Ok(())
    }

    /// Gammas that define panels; a single placeholder for the PAM design.
    pub fn panel_gammas(&self) -> Vec<Option<f64>> {
        match self.dgp {
            DgpKind::Pam => vec![None],
            DgpKind::Logistic => self.gammas.iter().map(|&g| Some(g)).collect(),
        }
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// First line assigning `key`, ignoring comments.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    if key.is_empty() {
        return None;
    }
    text.lines()
        .position(|l| {
            let l = l.trim_start();
            l.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
        })
        .map(|i| i + 1)
}
