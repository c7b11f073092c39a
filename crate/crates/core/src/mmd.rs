//! Gaussian-kernel maximum mean discrepancy between score samples, with
//! permutation p-values and Bonferroni-adjusted pairwise testing.
//!
//! Permutation statistics never touch the full cross-kernel sum. With
//! `R = K·1`, `T = 1ᵀK1` and a split `S` of size `m` against its complement of
//! size `n`,
//!
//! ```text
//! Σ_{S,S} K = s2,   Σ_{S,Sᶜ} K = s1 − s2,   Σ_{Sᶜ,Sᶜ} K = T − 2·s1 + s2
//! ```
//!
//! where `s1 = Σ_{i∈S} R_i`. Only `s2` depends on pairs inside `S`; it comes
//! from a precomputed Gram matrix for small pools or from a pivoted-Cholesky
//! factor `K ≈ LLᵀ` (`s2 = ‖Σ_{i∈S} L_i‖²`) when that factor is small.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::GroupLabel;
use crate::seed::{derive_indexed, rng_from_seed};

/// Residual kernel diagonal at which the low-rank factorization stops.
pub const LOW_RANK_TOL: f64 = 1e-12;
const LOW_RANK_MAX: usize = 256;
/// Pools up to this size may use a dense Gram matrix.
const GRAM_MAX: usize = 4096;
/// Permutation statistics within this distance of the observed one count as ties.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MmdError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("all pooled points coincide; bandwidth undefined")]
    DegenerateSample,
    #[error("bandwidth must be positive and finite, got {0}")]
    BadBandwidth(f64),
    #[error("non-finite score")]
    NonFinite,
    #[error("at least one permutation is required")]
    NoIterations,
    #[error("need at least two groups")]
    TooFewGroups,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    /// Biased V-statistic; never negative.
    #[default]
    V,
    /// Unbiased U-statistic (drops kernel diagonals).
    U,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmdResult {
    pub group_a: GroupLabel,
    pub group_b: GroupLabel,
    pub mmd2: f64,
    pub p_value: f64,
    pub significant: bool,
    pub sigma: f64,
    /// The median heuristic failed and σ fell back to 1.
    pub sigma_fallback: bool,
}

fn check_finite(xs: &[f64]) -> Result<(), MmdError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(MmdError::NonFinite)
    }
}

/// Median of the `N(N−1)/2` pairwise absolute differences, computed exactly
/// without enumerating pairs: sorted data plus a binary search over the bit
/// patterns of non-negative doubles, counting pairs `≤ t` with two pointers.
pub fn median_heuristic(pooled: &[f64]) -> Result<f64, MmdError> {
    if pooled.len() < 2 {
        return Err(MmdError::TooFewPoints {
            needed: 2,
            got: pooled.len(),
        });
    }
    check_finite(pooled)?;
    let mut x = pooled.to_vec();
    crate::stats::sort_floats(&mut x);
    let n = x.len() as u64;
    let pairs = n * (n - 1) / 2;
    let median = if pairs % 2 == 1 {
        kth_distance(&x, pairs / 2 + 1)
    } else {
        0.5 * (kth_distance(&x, pairs / 2) + kth_distance(&x, pairs / 2 + 1))
    };
    if median > 0.0 {
        Ok(median)
    } else {
        Err(MmdError::DegenerateSample)
    }
}

fn pairs_within(sorted: &[f64], t: f64) -> u64 {
    let mut count = 0u64;
    let mut start = 0;
    for j in 0..sorted.len() {
        while sorted[j] - sorted[start] > t {
            start += 1;
        }
        count += (j - start) as u64;
    }
    count
}

/// `k`-th smallest (1-based) pairwise difference of sorted data.
fn kth_distance(sorted: &[f64], k: u64) -> f64 {
    let span = sorted[sorted.len() - 1] - sorted[0];
    let (mut lo, mut hi) = (0u64, span.to_bits());
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if pairs_within(sorted, f64::from_bits(mid)) >= k {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    f64::from_bits(lo)
}

/// σ from the median heuristic, or 1 when the sample is degenerate. The flag
/// reports the fallback.
pub fn bandwidth_or_fallback(pooled: &[f64]) -> Result<(f64, bool), MmdError> {
    match median_heuristic(pooled) {
        Ok(s) => Ok((s, false)),
        Err(MmdError::DegenerateSample) => Ok((1.0, true)),
        Err(e) => Err(e),
    }
}

#[inline]
fn gaussian(a: f64, b: f64, inv_two_sigma2: f64) -> f64 {
    let d = a - b;
    libm::exp(-d * d * inv_two_sigma2)
}

fn kernel_sum(a: &[f64], b: &[f64], inv: f64) -> f64 {
    a.iter()
        .map(|&x| b.iter().map(|&y| gaussian(x, y, inv)).sum::<f64>())
        .sum()
}

fn check_bandwidth(sigma: f64) -> Result<f64, MmdError> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(1.0 / (2.0 * sigma * sigma))
    } else {
        Err(MmdError::BadBandwidth(sigma))
    }
}

/// Sorts both samples and orders the pair canonically so equal multisets give
/// exactly zero and swapping the arguments gives exactly the same value.
fn canonical(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    crate::stats::sort_floats(&mut a);
    crate::stats::sort_floats(&mut b);
    let order = a.len().cmp(&b.len()).then_with(|| {
        a.iter()
            .zip(&b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    if order.is_gt() {
        (b, a)
    } else {
        (a, b)
    }
}

/// Biased (V-statistic) MMD², floored at zero.
pub fn mmd2(a: &[f64], b: &[f64], sigma: f64) -> Result<f64, MmdError> {
    mmd2_with(a, b, sigma, Estimator::V)
}

pub fn mmd2_with(a: &[f64], b: &[f64], sigma: f64, estimator: Estimator) -> Result<f64, MmdError> {
    let needed = match estimator {
        Estimator::V => 1,
        Estimator::U => 2,
    };
    for s in [a, b] {
        if s.len() < needed {
            return Err(MmdError::TooFewPoints {
                needed,
                got: s.len(),
            });
        }
        check_finite(s)?;
    }
    let inv = check_bandwidth(sigma)?;
    let (a, b) = canonical(a, b);
    let (m, n) = (a.len() as f64, b.len() as f64);
    let kaa = kernel_sum(&a, &a, inv);
    let kbb = kernel_sum(&b, &b, inv);
    let kab = kernel_sum(&a, &b, inv);
    Ok(match estimator {
        Estimator::V => (kaa / (m * m) + kbb / (n * n) - 2.0 * kab / (m * n)).max(0.0),
        Estimator::U => {
            (kaa - m) / (m * (m - 1.0)) + (kbb - n) / (n * (n - 1.0)) - 2.0 * kab / (m * n)
        }
    })
}

enum Backend {
    /// Row-major `N × N` kernel matrix.
    Gram(Vec<f64>),
    /// Row-major `N × r` factor.
    LowRank { factor: Vec<f64>, rank: usize },
    /// Kernel values recomputed on demand.
    Direct,
}

/// Evaluates MMD² for arbitrary splits of one pooled sample at a fixed σ.
pub struct PermutationEngine {
    pooled: Vec<f64>,
    inv: f64,
    backend: Backend,
    row_sums: Vec<f64>,
    diag: Vec<f64>,
    total: f64,
    estimator: Estimator,
}

impl PermutationEngine {
    /// `subset_size` is the size of the side whose indices will be passed to
    /// [`Self::statistic`]; it guides the choice of backend.
    pub fn new(
        pooled: &[f64],
        sigma: f64,
        subset_size: usize,
        estimator: Estimator,
    ) -> Result<Self, MmdError> {
        check_finite(pooled)?;
        let inv = check_bandwidth(sigma)?;
        let n = pooled.len();
        let low_rank = pivoted_cholesky(pooled, inv, LOW_RANK_MAX.min(subset_size.max(1)));
        let (backend, row_sums, diag, total) = match low_rank {
            Some((factor, rank)) => {
                let mut col_total = vec![0.0; rank];
                for i in 0..n {
                    for (c, v) in col_total.iter_mut().zip(&factor[i * rank..(i + 1) * rank]) {
                        *c += v;
                    }
                }
                let row = |i: usize| &factor[i * rank..(i + 1) * rank];
                let row_sums = (0..n).map(|i| dot(row(i), &col_total)).collect();
                let diag = (0..n).map(|i| dot(row(i), row(i))).collect();
                let total = dot(&col_total, &col_total);
                (Backend::LowRank { factor, rank }, row_sums, diag, total)
            }
            None if n <= GRAM_MAX => {
                let mut gram = vec![0.0; n * n];
                for i in 0..n {
                    gram[i * n + i] = 1.0;
                    for j in 0..i {
                        let k = gaussian(pooled[i], pooled[j], inv);
                        gram[i * n + j] = k;
                        gram[j * n + i] = k;
                    }
                }
                let row_sums: Vec<f64> = (0..n)
                    .map(|i| gram[i * n..(i + 1) * n].iter().sum())
                    .collect();
                let total = row_sums.iter().sum();
                (Backend::Gram(gram), row_sums, vec![1.0; n], total)
            }
            None => {
                let row_sums: Vec<f64> = pooled
                    .iter()
                    .map(|&x| pooled.iter().map(|&y| gaussian(x, y, inv)).sum())
                    .collect();
                let total = row_sums.iter().sum();
                (Backend::Direct, row_sums, vec![1.0; n], total)
            }
        };
        Ok(Self {
            pooled: pooled.to_vec(),
            inv,
            backend,
            row_sums,
            diag,
            total,
            estimator,
        })
    }

    pub fn len(&self) -> usize {
        self.pooled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pooled.is_empty()
    }

    /// Rank of the low-rank factor, if that backend is in use.
    pub fn rank(&self) -> Option<usize> {
        match self.backend {
            Backend::LowRank { rank, .. } => Some(rank),
            _ => None,
        }
    }

    fn within_sum(&self, subset: &[usize]) -> f64 {
        match &self.backend {
            Backend::LowRank { factor, rank } => {
                let mut v = vec![0.0; *rank];
                for &i in subset {
                    for (acc, x) in v.iter_mut().zip(&factor[i * rank..(i + 1) * rank]) {
                        *acc += x;
                    }
                }
                dot(&v, &v)
            }
            Backend::Gram(gram) => {
                let n = self.pooled.len();
                subset
                    .iter()
                    .map(|&i| subset.iter().map(|&j| gram[i * n + j]).sum::<f64>())
                    .sum()
            }
            Backend::Direct => subset
                .iter()
                .map(|&i| {
                    subset
                        .iter()
                        .map(|&j| gaussian(self.pooled[i], self.pooled[j], self.inv))
                        .sum::<f64>()
                })
                .sum(),
        }
    }

    /// MMD² between the points at `subset` and all other pooled points.
    pub fn statistic(&self, subset: &[usize]) -> f64 {
        let m = subset.len() as f64;
        let n = self.pooled.len() as f64 - m;
        let s2 = self.within_sum(subset);
        let s1: f64 = subset.iter().map(|&i| self.row_sums[i]).sum();
        let cross = s1 - s2;
        let rest = self.total - 2.0 * s1 + s2;
        match self.estimator {
            Estimator::V => s2 / (m * m) + rest / (n * n) - 2.0 * cross / (m * n),
            Estimator::U => {
                let sd: f64 = subset.iter().map(|&i| self.diag[i]).sum();
                let rest_diag = self.diag.iter().sum::<f64>() - sd;
                (s2 - sd) / (m * (m - 1.0)) + (rest - rest_diag) / (n * (n - 1.0))
                    - 2.0 * cross / (m * n)
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pivoted Cholesky of the Gaussian kernel matrix. Returns the `N × r` factor
/// once every residual diagonal is below [`LOW_RANK_TOL`], or `None` if that
/// needs more than `max_rank` columns.
fn pivoted_cholesky(x: &[f64], inv: f64, max_rank: usize) -> Option<(Vec<f64>, usize)> {
    let n = x.len();
    let mut residual: Vec<f64> = vec![1.0; n];
    let mut cols: Vec<Vec<f64>> = Vec::new();
    loop {
        let (pivot, &worst) = residual
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))?;
        if worst <= LOW_RANK_TOL {
            break;
        }
        if cols.len() == max_rank {
            return None;
        }
        let scale = libm::sqrt(worst);
        let col: Vec<f64> = (0..n)
            .map(|i| {
                let k = gaussian(x[i], x[pivot], inv);
                let prior: f64 = cols.iter().map(|c| c[i] * c[pivot]).sum();
                (k - prior) / scale
            })
            .collect();
        for (r, c) in residual.iter_mut().zip(&col) {
            *r -= c * c;
        }
        residual[pivot] = 0.0;
        cols.push(col);
    }
    let rank = cols.len();
    let mut factor = vec![0.0; n * rank];
    for (c, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            factor[i * rank + c] = *v;
        }
    }
    Some((factor, rank))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationSettings {
    pub iters: usize,
    pub estimator: Estimator,
}

impl Default for PermutationSettings {
    fn default() -> Self {
        Self {
            iters: 1000,
            estimator: Estimator::V,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PermutationOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub exceedances: usize,
}

/// Permutation p-value `(1 + #{perm ≥ observed}) / (iters + 1)` with `σ` held
/// fixed. Iteration `t` re-splits the pool with seed `derive_indexed(seed, t)`.
pub fn permutation_test(
    a: &[f64],
    b: &[f64],
    sigma: f64,
    settings: &PermutationSettings,
    seed: u64,
) -> Result<PermutationOutcome, MmdError> {
    if settings.iters == 0 {
        return Err(MmdError::NoIterations);
    }
    let statistic = mmd2_with(a, b, sigma, settings.estimator)?;
    let (small, large) = if b.len() < a.len() { (b, a) } else { (a, b) };
    let mut pooled = small.to_vec();
    pooled.extend_from_slice(large);
    let m = small.len();
    let engine = PermutationEngine::new(&pooled, sigma, m, settings.estimator)?;
    let observed_idx: Vec<usize> = (0..m).collect();
    let observed = engine.statistic(&observed_idx);

    let n = pooled.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut exceedances = 0;
    for t in 0..settings.iters {
        let mut rng = rng_from_seed(derive_indexed(seed, t as u64));
        for i in 0..m {
            let j = rng.random_range(i..n);
            perm.swap(i, j);
        }
        if engine.statistic(&perm[..m]) >= observed - TIE_TOL {
            exceedances += 1;
        }
    }
    Ok(PermutationOutcome {
        statistic,
        p_value: (1 + exceedances) as f64 / (settings.iters + 1) as f64,
        exceedances,
    })
}

/// Every unordered pair of groups, in group order. Each pair uses the median
/// heuristic on its own pooled sample and seed `derive_indexed(seed, pair)`;
/// significance is `p < α / C(G, 2)`.
pub fn pairwise_tests(
    groups: &[(GroupLabel, Vec<f64>)],
    alpha: f64,
    settings: &PermutationSettings,
    seed: u64,
) -> Result<Vec<MmdResult>, MmdError> {
    if groups.len() < 2 {
        return Err(MmdError::TooFewGroups);
    }
    let pairs = groups.len() * (groups.len() - 1) / 2;
    let threshold = alpha / pairs as f64;
    let mut out = Vec::with_capacity(pairs);
    let mut index = 0u64;
    for i in 0..groups.len() {
        for j in (i + 1)..groups.len() {
            let (a, b) = (&groups[i].1, &groups[j].1);
            let mut pooled = a.clone();
            pooled.extend_from_slice(b);
            let (sigma, sigma_fallback) = bandwidth_or_fallback(&pooled)?;
            let outcome = permutation_test(a, b, sigma, settings, derive_indexed(seed, index))?;
            out.push(MmdResult {
                group_a: groups[i].0.clone(),
                group_b: groups[j].0.clone(),
                mmd2: outcome.statistic,
                p_value: outcome.p_value,
                significant: outcome.p_value < threshold,
                sigma,
                sigma_fallback,
            });
            index += 1;
        }
    }
    Ok(out)
}
