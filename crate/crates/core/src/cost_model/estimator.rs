use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{Dgp, C_BAR};
use super::gbdt::{fit_gbdt, quantile_cuts, GbdtModel, GbdtParams};
use super::sample::{open_unit, TrainingSample};
use crate::error::{Error, Result};
use crate::ot::{CostMatrix, MarketProfiles, SquareMatrix};
use crate::rng::rng_from_seed;

/// Bumped whenever the serialized layout of [`CostEstimator`] changes.
pub const ESTIMATOR_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    /// `(x, w)`
    Plain,
    /// `(x, w, x * w)`
    WithInteraction,
}

impl FeatureSet {
    pub fn for_dgp(dgp: &Dgp) -> Self {
        if dgp.uses_interaction_feature() {
            FeatureSet::WithInteraction
        } else {
            FeatureSet::Plain
        }
    }

    fn len(self) -> usize {
        match self {
            FeatureSet::Plain => 2,
            FeatureSet::WithInteraction => 3,
        }
    }

    #[inline]
    fn row(self, x: f64, w: f64) -> [f64; 3] {
        [x, w, x * w]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Gbdt,
    BinnedMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    pub features: FeatureSet,
    pub gbdt: GbdtParams,
    /// Quantile bins per axis for the binned-mean estimator.
    pub bins: usize,
    pub c_bar: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            kind: EstimatorKind::Gbdt,
            features: FeatureSet::Plain,
            gbdt: GbdtParams::default(),
            bins: 10,
            c_bar: C_BAR,
        }
    }
}

impl EstimatorConfig {
    pub fn for_dgp(dgp: &Dgp) -> Self {
        Self { features: FeatureSet::for_dgp(dgp), ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedMean {
    pub x_cuts: Vec<f64>,
    pub w_cuts: Vec<f64>,
    /// Row-major over `(x_bin, w_bin)`.
    pub means: Vec<f64>,
}

impl BinnedMean {
    fn fit(sample: &TrainingSample, bins: usize) -> Self {
        let x_cuts = quantile_cuts(&sample.x, bins);
        let w_cuts = quantile_cuts(&sample.w, bins);
        let (nx, nw) = (x_cuts.len() + 1, w_cuts.len() + 1);
        let mut acc = vec![(0.0, 0usize); nx * nw];
        for ((&x, &w), &y) in sample.x.iter().zip(&sample.w).zip(&sample.y) {
            let cell = &mut acc[Self::bin(&x_cuts, x) * nw + Self::bin(&w_cuts, w)];
            cell.0 += y as f64;
            cell.1 += 1;
        }
        let fallback = sample.mean_y();
        let means = acc.iter().map(|&(s, c)| if c > 0 { s / c as f64 } else { fallback }).collect();
        Self { x_cuts, w_cuts, means }
    }

    fn bin(cuts: &[f64], v: f64) -> usize {
        cuts.partition_point(|&c| c < v)
    }

    fn predict(&self, x: f64, w: f64) -> f64 {
        self.means[Self::bin(&self.x_cuts, x) * (self.w_cuts.len() + 1) + Self::bin(&self.w_cuts, w)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Surface {
    Gbdt {
        features: FeatureSet,
        model: GbdtModel,
    },
    BinnedMean(BinnedMean),
    Constant {
        value: f64,
    },
    /// The true cost of a design plus a constant offset (zero for the oracle).
    Oracle {
        dgp: Dgp,
        offset: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub n_train: usize,
    pub config: EstimatorConfig,
    pub seed: Option<u64>,
}

/// A cost surface `c_hat(x, w)` with predictions clipped to `[0, c_bar]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostEstimator {
    pub format_version: u32,
    pub surface: Surface,
    pub c_bar: f64,
    pub meta: Option<FitMetadata>,
}

impl CostEstimator {
    pub fn new(surface: Surface, c_bar: f64) -> Result<Self> {
        if !(c_bar.is_finite() && c_bar >= 0.0) {
            return Err(Error::invalid(format!("c_bar must be finite and nonnegative, got {c_bar}")));
        }
        Ok(Self { format_version: ESTIMATOR_FORMAT_VERSION, surface, c_bar, meta: None })
    }

    /// The true cost of `dgp`, for oracle policies.
    pub fn oracle(dgp: &Dgp) -> Self {
        Self::new(Surface::Oracle { dgp: dgp.clone(), offset: 0.0 }, C_BAR).expect("unit bound is valid")
    }

    pub fn constant(value: f64, c_bar: f64) -> Result<Self> {
        Self::new(Surface::Constant { value }, c_bar)
    }

    pub fn predict(&self, x: f64, w: f64) -> f64 {
        let raw = match &self.surface {
            Surface::Gbdt { features, model } => model.predict(&features.row(x, w)[..features.len()]),
            Surface::BinnedMean(b) => b.predict(x, w),
            Surface::Constant { value } => *value,
            Surface::Oracle { dgp, offset } => dgp.cost(x, w) + offset,
        };
        raw.clamp(0.0, self.c_bar)
    }

    /// Predicted costs on every pair of a market.
    pub fn cost_matrix(&self, market: &MarketProfiles) -> Result<CostMatrix> {
        let (x, w) = (market.x(), market.w());
        let n = market.n();
        let rows: Vec<Vec<f64>> = x.par_iter().map(|&xi| w.iter().map(|&wj| self.predict(xi, wj)).collect()).collect();
        CostMatrix::new(SquareMatrix::new(n, rows.concat())?, self.c_bar)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let est: Self = serde_json::from_str(text)?;
        if est.format_version != ESTIMATOR_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "estimator format version {} is not supported (expected {ESTIMATOR_FORMAT_VERSION})",
                est.format_version
            )));
        }
        Ok(est)
    }
}

/// Least-squares fit of `y` on the configured features. A sample whose
/// covariates are all identical yields the constant `mean(y)`.
pub fn fit_cost_estimator(sample: &TrainingSample, config: &EstimatorConfig) -> Result<CostEstimator> {
    let degenerate = sample.x.iter().all(|&v| v == sample.x[0]) && sample.w.iter().all(|&v| v == sample.w[0]);
    let surface = if degenerate {
        Surface::Constant { value: sample.mean_y() }
    } else {
        match config.kind {
            EstimatorKind::Gbdt => {
                let mut cols = vec![sample.x.clone(), sample.w.clone()];
                if config.features == FeatureSet::WithInteraction {
                    cols.push(sample.x.iter().zip(&sample.w).map(|(x, w)| x * w).collect());
                }
                let y: Vec<f64> = sample.y.iter().map(|&v| v as f64).collect();
                Surface::Gbdt { features: config.features, model: fit_gbdt(&cols, &y, &config.gbdt)? }
            }
            EstimatorKind::BinnedMean => {
                if config.bins < 1 {
                    return Err(Error::invalid("bins must be at least 1"));
                }
                Surface::BinnedMean(BinnedMean::fit(sample, config.bins))
            }
        }
    };
    let mut est = CostEstimator::new(surface, config.c_bar)?;
    est.meta = Some(FitMetadata { n_train: sample.len(), config: config.clone(), seed: None });
    Ok(est)
}

/// Monte Carlo `L1` and `L2` distances between an estimator and the true cost
/// under the product of the covariate distributions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorError {
    pub l1: f64,
    pub l2: f64,
    pub l1_se: f64,
    /// Delta-method standard error of `l2`.
    pub l2_se: f64,
    pub draws: usize,
}

pub fn estimator_error(est: &CostEstimator, dgp: &Dgp, mc_draws: usize, seed: u64) -> Result<EstimatorError> {
    if mc_draws == 0 {
        return Err(Error::invalid("mc_draws must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    let levels: Vec<(f64, f64)> = (0..mc_draws).map(|_| (open_unit(&mut rng), open_unit(&mut rng))).collect();
    let gaps: Vec<f64> = levels
        .par_iter()
        .map(|&(ux, uw)| {
            let (x, w) = (dgp.x_quantile(ux)?, dgp.w_quantile(uw));
            Ok(est.predict(x, w) - dgp.cost(x, w))
        })
        .collect::<Result<_>>()?;
    let m = mc_draws as f64;
    let (mean_abs, sd_abs) = mean_sd(gaps.iter().map(|g| g.abs()), m);
    let (mean_sq, sd_sq) = mean_sd(gaps.iter().map(|g| g * g), m);
    let l2 = mean_sq.sqrt();
    let se_sq = sd_sq / m.sqrt();
    Ok(EstimatorError {
        l1: mean_abs,
        l2,
        l1_se: sd_abs / m.sqrt(),
        l2_se: if l2 > 0.0 { se_sq / (2.0 * l2) } else { 0.0 },
        draws: mc_draws,
    })
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone, m: f64) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / m;
    if m < 2.0 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
    (mean, var.sqrt())
}
