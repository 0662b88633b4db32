use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::{beta_reg, ln_beta};

use crate::error::{Error, Result};

pub const BETA_ALPHA: f64 = 3.7939;
pub const BETA_BETA: f64 = 8.8634;
/// Every simulated cost is a probability, so costs are bounded by one.
pub const C_BAR: f64 = 1.0;

const QUANTILE_TOL: f64 = 1e-12;

/// `1 - (x^2 + w^2 + xw) / 3` on the unit square.
pub fn pam_cost(x: f64, w: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&w) {
        return Err(Error::invalid(format!("pam_cost needs x, w in [0, 1], got ({x}, {w})")));
    }
    Ok(pam_cost_unchecked(x, w))
}

#[inline]
fn pam_cost_unchecked(x: f64, w: f64) -> f64 {
    1.0 - (x * x + w * w + x * w) / 3.0
}

#[inline]
pub fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Job finding probability `logistic(a + b x + c w + d x w)`; the cost is one minus it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticDgp {
    pub a: f64,
    pub b: f64,
    pub c_coef: f64,
    pub d: f64,
    pub gamma: f64,
    pub beta_alpha: f64,
    pub beta_beta: f64,
}

impl LogisticDgp {
    #[inline]
    pub fn p(&self, x: f64, w: f64) -> f64 {
        logistic(self.a + self.b * x + self.c_coef * w + self.d * x * w)
    }

    /// The four calibration targets as `(achieved, target)` pairs.
    pub fn anchors(&self) -> [(f64, f64); 4] {
        [
            (self.p(0.20, 0.0), 0.20),
            (self.p(0.40, 0.0), 0.40),
            (self.p(0.20, 1.0) - self.p(0.20, 0.0), 0.02),
            (self.p(0.40, 1.0) - self.p(0.40, 0.0) - 0.02, self.gamma),
        ]
    }

    pub fn max_anchor_residual(&self) -> f64 {
        self.anchors().iter().map(|(got, want)| (got - want).abs()).fold(0.0, f64::max)
    }
}

/// Solves the logit-linear system pinning `p(.2,0)=.2`, `p(.4,0)=.4`,
/// `p(.2,1)=.22` and `p(.4,1)=.42+gamma`.
pub fn calibrate_logistic(gamma: f64) -> Result<LogisticDgp> {
    let top = 0.42 + gamma;
    if !(gamma.is_finite() && top > 0.0 && top < 1.0) {
        return Err(Error::invalid(format!("gamma = {gamma} puts the anchor p(0.4, 1) = {top} outside (0, 1)")));
    }
    let (l20, l40) = (logit(0.20), logit(0.40));
    let b = (l40 - l20) / 0.2;
    let a = l20 - 0.2 * b;
    let low = logit(0.22) - l20;
    let high = logit(top) - l40;
    let d = (high - low) / 0.2;
    let c_coef = low - 0.2 * d;
    Ok(LogisticDgp { a, b, c_coef, d, gamma, beta_alpha: BETA_ALPHA, beta_beta: BETA_BETA })
}

/// Inverse of the regularized incomplete beta function, by Newton steps kept
/// inside a shrinking bisection bracket.
pub fn beta_quantile(p: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) || !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::invalid(format!("beta_quantile({p}, {alpha}, {beta}) is undefined")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    let ln_b = ln_beta(alpha, beta);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut x = alpha / (alpha + beta);
    for _ in 0..200 {
        let f = beta_reg(alpha, beta, x) - p;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let log_pdf = (alpha - 1.0) * x.ln() + (beta - 1.0) * (-x).ln_1p() - ln_b;
        let mut next = x - f / log_pdf.exp();
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() < QUANTILE_TOL || hi - lo < QUANTILE_TOL {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// One of the two simulated designs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dgp {
    /// `X, W ~ U[0,1]`, cost `1 - (x^2 + w^2 + xw)/3`.
    Pam,
    /// `X ~ Beta`, `W ~ N(0,1)`, cost `1 - logistic(...)`.
    Logistic(LogisticDgp),
}

impl Dgp {
    pub fn logistic(gamma: f64) -> Result<Self> {
        calibrate_logistic(gamma).map(Dgp::Logistic)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Dgp::Pam => "pam",
            Dgp::Logistic(_) => "logistic",
        }
    }

    /// True cost `c(x, w)`, the probability of the cost event.
    #[inline]
    pub fn cost(&self, x: f64, w: f64) -> f64 {
        match self {
            Dgp::Pam => pam_cost_unchecked(x, w),
            Dgp::Logistic(l) => 1.0 - l.p(x, w),
        }
    }

    /// Quantile function of the X side.
    pub fn x_quantile(&self, u: f64) -> Result<f64> {
        match self {
            Dgp::Pam => Ok(u),
            Dgp::Logistic(l) => beta_quantile(u, l.beta_alpha, l.beta_beta),
        }
    }

    /// Quantile function of the W side.
    pub fn w_quantile(&self, u: f64) -> f64 {
        match self {
            Dgp::Pam => u,
            Dgp::Logistic(_) => normal_quantile(u),
        }
    }

    /// Whether the regression uses the product `x * w` as a third feature.
    pub fn uses_interaction_feature(&self) -> bool {
        matches!(self, Dgp::Logistic(_))
    }
}
