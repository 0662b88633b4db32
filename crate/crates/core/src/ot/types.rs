use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on coupling marginals (probability-mass units).
pub const TAU_MARG: f64 = 1e-8;
/// Tolerance on the mean-zero normalization of `g`.
pub const TAU_NORM: f64 = 1e-10;
/// Relative tolerance on the duality gap at convergence.
pub const TAU_GAP: f64 = 1e-6;

/// Dense row-major `n x n` matrix of finite reals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("matrix dimension must be at least 1"));
        }
        if data.len() != n * n {
            return Err(Error::invalid(format!("expected {} entries for a {n}x{n} matrix, got {}", n * n, data.len())));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite entry at ({}, {})", pos / n, pos % n)));
        }
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("matrix is not square"));
        }
        Self::new(n, rows.concat())
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self::new(n, data)
    }

    pub fn filled(n: usize, value: f64) -> Result<Self> {
        Self::new(n, vec![value; n * n])
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> SquareMatrix {
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[j * n + i] = self.data[i * n + j];
            }
        }
        SquareMatrix { n, data }
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn from_raw(n: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n * n);
        Self { n, data }
    }
}

impl AsRef<SquareMatrix> for SquareMatrix {
    fn as_ref(&self) -> &SquareMatrix {
        self
    }
}

/// Scalar characteristics of the two sides of a market of size `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketProfiles {
    x_values: Vec<f64>,
    w_values: Vec<f64>,
}

impl MarketProfiles {
    pub fn new(x_values: Vec<f64>, w_values: Vec<f64>) -> Result<Self> {
        if x_values.is_empty() || x_values.len() != w_values.len() {
            return Err(Error::invalid(format!(
                "market sides must be non-empty and of equal size (got {} and {})",
                x_values.len(),
                w_values.len()
            )));
        }
        if x_values.iter().chain(&w_values).any(|v| !v.is_finite()) {
            return Err(Error::invalid("market profiles contain non-finite values"));
        }
        Ok(Self { x_values, w_values })
    }

    pub fn n(&self) -> usize {
        self.x_values.len()
    }

    pub fn x(&self) -> &[f64] {
        &self.x_values
    }

    pub fn w(&self) -> &[f64] {
        &self.w_values
    }

    /// Evaluates `cost(x_i, w_j)` on every pair of the market.
    pub fn cost_matrix(&self, c_bar: f64, mut cost: impl FnMut(f64, f64) -> f64) -> Result<CostMatrix> {
        let n = self.n();
        let values = SquareMatrix::from_fn(n, |i, j| cost(self.x_values[i], self.w_values[j]))?;
        CostMatrix::new(values, c_bar)
    }
}

/// Average match costs on an `n x n` market, bounded in `[0, c_bar]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    values: SquareMatrix,
    c_bar: f64,
}

impl CostMatrix {
    pub fn new(values: SquareMatrix, c_bar: f64) -> Result<Self> {
        if !c_bar.is_finite() || c_bar < 0.0 {
            return Err(Error::invalid(format!("c_bar must be finite and nonnegative, got {c_bar}")));
        }
        let (lo, hi) = (values.min(), values.max());
        if lo < 0.0 || hi > c_bar {
            return Err(Error::invalid(format!("costs must lie in [0, {c_bar}], found range [{lo}, {hi}]")));
        }
        Ok(Self { values, c_bar })
    }

    /// Uses the largest entry as the bound.
    pub fn with_tight_bound(values: SquareMatrix) -> Result<Self> {
        let c_bar = values.max().max(0.0);
        Self::new(values, c_bar)
    }

    pub fn n(&self) -> usize {
        self.values.n()
    }

    pub fn c_bar(&self) -> f64 {
        self.c_bar
    }

    pub fn values(&self) -> &SquareMatrix {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }
}

impl AsRef<SquareMatrix> for CostMatrix {
    fn as_ref(&self) -> &SquareMatrix {
        &self.values
    }
}

/// Probability mass over the `n x n` grid with (approximately) uniform marginals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    mass: SquareMatrix,
}

impl Coupling {
    /// Builds a coupling, checking nonnegativity and that every marginal is `1/n` within [`TAU_MARG`].
    pub fn new(mass: SquareMatrix) -> Result<Self> {
        let coupling = Self::from_mass(mass)?;
        let residual = coupling.marginal_residual();
        if residual > TAU_MARG {
            return Err(Error::invalid(format!("coupling marginals deviate from 1/n by {residual:e}")));
        }
        Ok(coupling)
    }

    /// Builds a possibly infeasible coupling; only nonnegativity is checked.
    pub fn from_mass(mass: SquareMatrix) -> Result<Self> {
        if mass.as_slice().iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("coupling has negative mass"));
        }
        Ok(Self { mass })
    }

    /// The independent coupling `1/n^2` everywhere.
    pub fn uniform(n: usize) -> Result<Self> {
        let nf = n as f64;
        Ok(Self { mass: SquareMatrix::filled(n, 1.0 / (nf * nf))? })
    }

    /// Mass `1/n` on cells `(i, sigma[i])`.
    pub fn from_permutation(sigma: &[usize]) -> Result<Self> {
        let n = sigma.len();
        if !is_permutation(sigma) {
            return Err(Error::invalid("sigma is not a permutation"));
        }
        let mut data = vec![0.0; n * n];
        for (i, &j) in sigma.iter().enumerate() {
            data[i * n + j] = 1.0 / n as f64;
        }
        Ok(Self { mass: SquareMatrix::new(n, data)? })
    }

    pub(crate) fn from_raw(mass: SquareMatrix) -> Self {
        Self { mass }
    }

    pub fn n(&self) -> usize {
        self.mass.n()
    }

    pub fn mass(&self) -> &SquareMatrix {
        &self.mass
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mass.get(i, j)
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.as_slice().iter().sum()
    }

    pub fn marginal_residual(&self) -> f64 {
        super::marginal_residual(self)
    }

    /// Cost of the coupling, `sum_ij c_ij pi_ij`.
    pub fn expected_cost(&self, c: impl AsRef<SquareMatrix>) -> Result<f64> {
        let c = c.as_ref();
        check_dims(self.n(), c.n())?;
        Ok(self.mass.as_slice().iter().zip(c.as_slice()).map(|(p, c)| p * c).sum())
    }
}

/// Dual potentials of the regularized problem at inverse regularization `eta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualPotentials {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub eta: f64,
}

impl DualPotentials {
    pub fn new(f: Vec<f64>, g: Vec<f64>, eta: f64) -> Result<Self> {
        if f.len() != g.len() || f.is_empty() {
            return Err(Error::invalid("potentials must be non-empty and of equal length"));
        }
        check_eta(eta)?;
        if f.iter().chain(&g).any(|v| !v.is_finite()) {
            return Err(Error::invalid("potentials must be finite"));
        }
        Ok(Self { f, g, eta })
    }

    pub fn zeros(n: usize, eta: f64) -> Result<Self> {
        Self::new(vec![0.0; n], vec![0.0; n], eta)
    }

    pub fn n(&self) -> usize {
        self.f.len()
    }

    /// Applies the shift `(f + a, g - a)` with `a = mean(g)` so that `g` sums to zero.
    pub fn normalize(&mut self) {
        let shift = self.g.iter().sum::<f64>() / self.g.len() as f64;
        self.g.iter_mut().for_each(|g| *g -= shift);
        self.f.iter_mut().for_each(|f| *f += shift);
    }

    pub fn g_sum(&self) -> f64 {
        self.g.iter().sum()
    }
}

/// Diagnostics from a Sinkhorn run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornReport {
    /// Full Sinkhorn sweeps (an `f` update followed by a `g` update).
    pub iterations: usize,
    /// Accepted Newton steps interleaved with the sweeps.
    pub newton_steps: usize,
    pub final_marginal_residual: f64,
    pub converged: bool,
    pub dual_value: f64,
}

pub(crate) fn check_dims(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("dimension mismatch: {a} vs {b}")));
    }
    Ok(())
}

pub(crate) fn check_eta(eta: f64) -> Result<()> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::invalid(format!("eta must be finite and positive, got {eta}")));
    }
    Ok(())
}

pub fn is_permutation(sigma: &[usize]) -> bool {
    let mut seen = vec![false; sigma.len()];
    for &j in sigma {
        if j >= sigma.len() || std::mem::replace(&mut seen[j], true) {
            return false;
        }
    }
    true
}
