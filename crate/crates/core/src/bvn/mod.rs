//! Birkhoff-von Neumann decomposition of a coupling into a lottery over
//! permutations, and sampling of assignments from that lottery.

mod matching;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::average_cost;
use crate::error::{Error, Result};
use crate::ot::{check_dims, is_permutation, Coupling, SquareMatrix, TAU_MARG};
use crate::rng::rng_from_seed;
use matching::HopcroftKarp;

/// Entries at or below this are not part of the support graph.
pub const EPS_SUPPORT: f64 = 1e-12;
/// Residual mass at which peeling stops.
pub const TAU_BVN: f64 = 1e-8;

const BALANCE_SWEEPS: usize = 50;

/// Convex combination `sum_k weight_k P(sigma_k)` of permutation matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationMixture {
    pub components: Vec<(f64, Vec<usize>)>,
    pub source_n: usize,
}

impl PermutationMixture {
    pub fn new(components: Vec<(f64, Vec<usize>)>, source_n: usize) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("mixture has no components"));
        }
        for (w, sigma) in &components {
            if !(w.is_finite() && *w > 0.0) {
                return Err(Error::invalid(format!("mixture weight {w} is not positive")));
            }
            if sigma.len() != source_n || !is_permutation(sigma) {
                return Err(Error::invalid("mixture component is not a permutation of the market"));
            }
        }
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > TAU_MARG {
            return Err(Error::invalid(format!("mixture weights sum to {total}")));
        }
        Ok(Self { components, source_n })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// `sum_k w_k P(sigma_k)`, a doubly stochastic matrix.
    pub fn reconstruct(&self) -> SquareMatrix {
        let n = self.source_n;
        let mut data = vec![0.0; n * n];
        for (w, sigma) in &self.components {
            for (i, &j) in sigma.iter().enumerate() {
                data[i * n + j] += w;
            }
        }
        SquareMatrix::from_raw(n, data)
    }

    /// Largest entrywise gap between `n * pi` and the reconstruction.
    pub fn reconstruction_error(&self, pi: &Coupling) -> Result<f64> {
        check_dims(self.source_n, pi.n())?;
        let nf = self.source_n as f64;
        let rec = self.reconstruct();
        Ok(rec.as_slice().iter().zip(pi.mass().as_slice()).map(|(r, p)| (r - nf * p).abs()).fold(0.0, f64::max))
    }

    /// Expected average cost of a drawn assignment.
    pub fn expected_cost(&self, c: impl AsRef<SquareMatrix>) -> Result<f64> {
        let c = c.as_ref();
        check_dims(self.source_n, c.n())?;
        Ok(self.components.iter().map(|(w, sigma)| w * average_cost(c, sigma)).sum())
    }

    fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.components
            .iter()
            .map(|(w, _)| {
                acc += w;
                acc
            })
            .collect()
    }
}

/// Greedy peeling on the support graph of `n * pi`.
///
/// The input is first rebalanced by a few primal row/column scalings so that
/// rounding in the marginals does not leave the residual without a perfect
/// matching; the correction is of the order of the input's marginal residual.
pub fn bvn_decompose(pi: &Coupling) -> Result<PermutationMixture> {
    let n = pi.n();
    let nf = n as f64;
    let mut m: Vec<f64> = pi.mass().as_slice().iter().map(|p| p * nf).collect();
    if m.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("coupling must be finite and nonnegative"));
    }
    balance(&mut m, n);

    let mut hk = HopcroftKarp::new(n);
    let mut components = Vec::new();
    let mut peeled = 0.0;
    let max_components = n * n;

    while 1.0 - peeled > TAU_BVN {
        if components.len() >= max_components {
            return Err(Error::Degenerate(format!(
                "decomposition did not terminate after {max_components} components"
            )));
        }
        let support = |i: usize, j: usize| m[i * n + j] > EPS_SUPPORT;
        if hk.augment(&support) < n {
            return Err(Error::Degenerate(format!(
                "no perfect matching on the residual support with mass {:e} left",
                1.0 - peeled
            )));
        }
        let sigma = hk.row_to_col.clone();
        let (argmin, weight) = sigma
            .iter()
            .enumerate()
            .map(|(i, &j)| (i, m[i * n + j]))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        for (i, &j) in sigma.iter().enumerate() {
            let cell = &mut m[i * n + j];
            *cell = if i == argmin { 0.0 } else { (*cell - weight).max(0.0) };
            if *cell <= EPS_SUPPORT {
                hk.unmatch_row(i);
            }
        }
        peeled += weight;
        components.push((weight, sigma));
    }

    let total: f64 = components.iter().map(|(w, _)| w).sum();
    components.iter_mut().for_each(|(w, _)| *w /= total);
    Ok(PermutationMixture { components, source_n: n })
}

fn balance(m: &mut [f64], n: usize) {
    let mut cols = vec![0.0; n];
    for _ in 0..BALANCE_SWEEPS {
        let mut worst: f64 = 0.0;
        for row in m.chunks_exact_mut(n) {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                worst = worst.max((s - 1.0).abs());
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
        cols.fill(0.0);
        for row in m.chunks_exact(n) {
            cols.iter_mut().zip(row).for_each(|(c, v)| *c += v);
        }
        for row in m.chunks_exact_mut(n) {
            for (v, &c) in row.iter_mut().zip(&cols) {
                if c > 0.0 {
                    *v /= c;
                }
            }
        }
        if worst <= f64::EPSILON * n as f64 {
            break;
        }
    }
}

/// Draws one permutation with probability equal to its weight, using the
/// first uniform of the stream seeded by `seed`.
pub fn sample_assignment(mix: &PermutationMixture, seed: u64) -> Vec<usize> {
    MixtureSampler::new(mix, seed).draw().to_vec()
}

/// Repeated inverse-CDF draws from a mixture on a single seeded stream.
pub struct MixtureSampler<'a> {
    mix: &'a PermutationMixture,
    cdf: Vec<f64>,
    rng: ChaCha20Rng,
}

impl<'a> MixtureSampler<'a> {
    pub fn new(mix: &'a PermutationMixture, seed: u64) -> Self {
        Self { mix, cdf: mix.cumulative(), rng: rng_from_seed(seed) }
    }

    /// Index of the next drawn component.
    pub fn draw_index(&mut self) -> usize {
        let total = *self.cdf.last().expect("mixture is non-empty");
        let u = self.rng.random::<f64>() * total;
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }

    pub fn draw(&mut self) -> &'a [usize] {
        let k = self.draw_index();
        &self.mix.components[k].1
    }
}
