//! Group-conditional split-conformal intervals for efficiency scores.
//!
//! The point predictor is a per-group constant (ridge-shrunk group mean) and
//! the conformity score is the absolute residual, so calibration decouples by
//! group. The randomized rule includes a new score `s` when its smoothed
//! p-value
//!
//! ```text
//! p(s) = (#{S_j > s} + u · (#{S_j = s} + 1)) / (m + 1)
//! ```
//!
//! exceeds `α`. For exchangeable scores `p` is exactly uniform, which gives
//! coverage exactly `1 − α` within each group.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::GroupLabel;
use crate::folds::stratified_folds;
use crate::seed::{derive_seed, rng_from_seed};

/// Slack when taking `⌈(1 − α)(m + 1)⌉`, so exact products are not pushed up
/// by rounding.
const CEIL_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConformalError {
    #[error("alpha must lie in (0, 1), got {0}")]
    AlphaOutOfRange(f64),
    #[error("randomization draw must lie in [0, 1), got {0}")]
    BadUniform(f64),
    #[error("no calibration scores")]
    EmptyCalibration,
    #[error("group {0} has no training scores")]
    EmptyGroup(GroupLabel),
    #[error("group {group} has {size} members; cross-fitting with {folds} folds needs at least {needed}")]
    GroupTooSmall {
        group: GroupLabel,
        size: usize,
        folds: usize,
        needed: usize,
    },
    #[error("cross-fitting needs at least 3 folds, got {0}")]
    TooFewFolds(usize),
    #[error("ridge lambda must be finite and non-negative, got {0}")]
    BadRidge(f64),
    #[error("{thetas} scores but {groups} group indices")]
    LengthMismatch { thetas: usize, groups: usize },
    #[error("group index {0} has no label")]
    UnknownGroup(usize),
}

/// Per-group coefficients of the indicator-class predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMeanModel {
    pub groups: Vec<GroupLabel>,
    pub beta: Vec<f64>,
    pub ridge_lambda: f64,
}

impl GroupMeanModel {
    pub fn predict(&self, group: usize) -> f64 {
        self.beta[group]
    }

    pub fn beta_of(&self, group: &GroupLabel) -> Option<f64> {
        self.groups
            .iter()
            .position(|g| g == group)
            .map(|i| self.beta[i])
    }
}

fn check_lengths(
    thetas: &[f64],
    groups: &[usize],
    labels: &[GroupLabel],
) -> Result<(), ConformalError> {
    if thetas.len() != groups.len() {
        return Err(ConformalError::LengthMismatch {
            thetas: thetas.len(),
            groups: groups.len(),
        });
    }
    match groups.iter().find(|&&g| g >= labels.len()) {
        Some(&g) => Err(ConformalError::UnknownGroup(g)),
        None => Ok(()),
    }
}

/// `β_g = Σ_{i∈g} θ_i / (|g| + λ·n)` with `n` the number of training scores:
/// the ridge solution over group indicators with the penalty scaled by the
/// sample size. `λ = 0` gives plain group means.
pub fn fit_group_means(
    thetas: &[f64],
    groups: &[usize],
    labels: &[GroupLabel],
    ridge_lambda: f64,
) -> Result<GroupMeanModel, ConformalError> {
    check_lengths(thetas, groups, labels)?;
    if !(ridge_lambda >= 0.0 && ridge_lambda.is_finite()) {
        return Err(ConformalError::BadRidge(ridge_lambda));
    }
    let mut sums = vec![0.0; labels.len()];
    let mut counts = vec![0usize; labels.len()];
    for (&t, &g) in thetas.iter().zip(groups) {
        sums[g] += t;
        counts[g] += 1;
    }
    let penalty = ridge_lambda * thetas.len() as f64;
    let mut beta = Vec::with_capacity(labels.len());
    for (g, label) in labels.iter().enumerate() {
        if counts[g] == 0 {
            return Err(ConformalError::EmptyGroup(label.clone()));
        }
        beta.push(sums[g] / (counts[g] as f64 + penalty));
    }
    Ok(GroupMeanModel {
        groups: labels.to_vec(),
        beta,
        ridge_lambda,
    })
}

/// `S_i = |θ_i − β_{g_i}|`.
pub fn conformity_scores(model: &GroupMeanModel, thetas: &[f64], groups: &[usize]) -> Vec<f64> {
    thetas
        .iter()
        .zip(groups)
        .map(|(t, &g)| (t - model.predict(g)).abs())
        .collect()
}

/// Half-width of a prediction set `{s : s < τ}` or `{s : s ≤ τ}` over scores.
/// An empty set is `τ = 0`, open.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub tau: f64,
    pub closed: bool,
}

impl Threshold {
    pub fn admits(&self, score: f64) -> bool {
        score < self.tau || (self.closed && score == self.tau)
    }

    pub fn is_empty(&self) -> bool {
        self.tau == 0.0 && !self.closed
    }
}

/// Sorted calibration scores of one group, grouped into distinct values.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    /// `(value, count, number of scores strictly greater)`, ascending.
    levels: Vec<(f64, usize, usize)>,
    m: usize,
}

impl Calibration {
    pub fn new(scores: &[f64]) -> Result<Self, ConformalError> {
        if scores.is_empty() {
            return Err(ConformalError::EmptyCalibration);
        }
        let mut sorted = scores.to_vec();
        crate::stats::sort_floats(&mut sorted);
        let m = sorted.len();
        let mut levels: Vec<(f64, usize, usize)> = Vec::new();
        let mut seen = 0;
        for &v in &sorted {
            seen += 1;
            match levels.last_mut() {
                Some(last) if last.0 == v => {
                    last.1 += 1;
                    last.2 = m - seen;
                }
                _ => levels.push((v, 1, m - seen)),
            }
        }
        Ok(Self { levels, m })
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    /// Randomized threshold; `u ∈ [0, 1)`. The smoothed p-value is
    /// non-increasing in `s`, so the admitted set is an initial segment and
    /// the walk stops at the first excluded gap or point.
    pub fn randomized(&self, alpha: f64, u: f64) -> Threshold {
        let denom = (self.m + 1) as f64;
        let admitted = |greater: usize, ties: f64| (greater as f64 + u * ties) / denom > alpha;
        let mut prev: Option<f64> = None;
        for &(v, count, greater) in &self.levels {
            let gap_nonempty = prev.map_or(v > 0.0, |p| v > p);
            // Open gap below v: no ties, count + greater scores exceed it.
            if gap_nonempty && !admitted(greater + count, 1.0) {
                return match prev {
                    Some(p) => Threshold {
                        tau: p,
                        closed: true,
                    },
                    None => Threshold {
                        tau: 0.0,
                        closed: false,
                    },
                };
            }
            if !admitted(greater, (count + 1) as f64) {
                return Threshold {
                    tau: v,
                    closed: false,
                };
            }
            prev = Some(v);
        }
        if admitted(0, 1.0) {
            Threshold {
                tau: f64::INFINITY,
                closed: true,
            }
        } else {
            Threshold {
                tau: prev.unwrap_or(0.0),
                closed: true,
            }
        }
    }

    /// Deterministic rule: `τ = S_(r)` with `r = ⌈(1 − α)(m + 1)⌉`, or the
    /// whole line when `r > m`.
    pub fn conservative(&self, alpha: f64) -> Threshold {
        let r = ceil_tolerant((1.0 - alpha) * (self.m + 1) as f64).max(1);
        if r > self.m {
            return Threshold {
                tau: f64::INFINITY,
                closed: true,
            };
        }
        // Order statistic r sits in the first level whose cumulative count reaches r.
        let mut cumulative = 0;
        for &(v, count, _) in &self.levels {
            cumulative += count;
            if cumulative >= r {
                return Threshold {
                    tau: v,
                    closed: true,
                };
            }
        }
        unreachable!("r ≤ m is always reached")
    }
}

fn ceil_tolerant(v: f64) -> usize {
    let r = libm::round(v);
    if (v - r).abs() <= CEIL_SLACK * v.abs().max(1.0) {
        r as usize
    } else {
        libm::ceil(v) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub group: GroupLabel,
    pub center: f64,
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    pub randomized: bool,
    pub threshold: Threshold,
}

impl PredictionInterval {
    fn from_threshold(
        group: GroupLabel,
        center: f64,
        alpha: f64,
        randomized: bool,
        threshold: Threshold,
    ) -> Self {
        let (lower, upper) = if threshold.is_empty() {
            (center, center)
        } else {
            (center - threshold.tau, center + threshold.tau)
        };
        Self {
            group,
            center,
            lower: lower.clamp(0.0, 1.0).min(center.max(0.0)),
            upper: upper.clamp(0.0, 1.0).max(center.min(1.0)),
            alpha,
            randomized,
            threshold,
        }
    }

    /// Membership of `θ` in the (unclipped) prediction set.
    pub fn contains(&self, theta: f64) -> bool {
        self.threshold.admits((theta - self.center).abs())
    }

    pub fn is_empty(&self) -> bool {
        self.threshold.is_empty()
    }
}

fn check_alpha(alpha: f64) -> Result<(), ConformalError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(ConformalError::AlphaOutOfRange(alpha))
    }
}

pub fn randomized_interval(
    calib_scores: &[f64],
    group: GroupLabel,
    center: f64,
    alpha: f64,
    u: f64,
) -> Result<PredictionInterval, ConformalError> {
    check_alpha(alpha)?;
    if !(0.0..1.0).contains(&u) {
        return Err(ConformalError::BadUniform(u));
    }
    let t = Calibration::new(calib_scores)?.randomized(alpha, u);
    Ok(PredictionInterval::from_threshold(
        group, center, alpha, true, t,
    ))
}

pub fn conservative_interval(
    calib_scores: &[f64],
    group: GroupLabel,
    center: f64,
    alpha: f64,
) -> Result<PredictionInterval, ConformalError> {
    check_alpha(alpha)?;
    let t = Calibration::new(calib_scores)?.conservative(alpha);
    Ok(PredictionInterval::from_threshold(
        group, center, alpha, false, t,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrossfitSettings {
    pub alpha: f64,
    pub folds: usize,
    pub ridge_lambda: f64,
    pub randomized: bool,
}

impl Default for CrossfitSettings {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            folds: 10,
            ridge_lambda: 0.0,
            randomized: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: GroupLabel,
    pub size: usize,
    pub mean_efficiency: f64,
    pub mean_lower: f64,
    pub mean_upper: f64,
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossfitResult {
    /// One interval per unit, in input order.
    pub intervals: Vec<PredictionInterval>,
    pub covered: Vec<bool>,
    pub fold_assignment: Vec<usize>,
    pub summaries: Vec<GroupSummary>,
}

/// Ten-fold (by default) cross-fitted intervals. For held-out fold `k`, the
/// remaining folds are split by their offset from `k`: odd offsets fit the
/// group means, even offsets calibrate. Test units are then exchangeable with
/// their group's calibration scores, which is what the exact coverage needs.
pub fn crossfit_intervals(
    thetas: &[f64],
    groups: &[usize],
    labels: &[GroupLabel],
    settings: &CrossfitSettings,
    seed: u64,
) -> Result<CrossfitResult, ConformalError> {
    check_lengths(thetas, groups, labels)?;
    check_alpha(settings.alpha)?;
    let k = settings.folds;
    if k < 3 {
        return Err(ConformalError::TooFewFolds(k));
    }
    let mut sizes = vec![0usize; labels.len()];
    for &g in groups {
        sizes[g] += 1;
    }
    for (g, &size) in sizes.iter().enumerate() {
        if size < 2 * k {
            return Err(ConformalError::GroupTooSmall {
                group: labels[g].clone(),
                size,
                folds: k,
                needed: 2 * k,
            });
        }
    }

    let folds = stratified_folds(groups, labels.len(), k, derive_seed(seed, "folds"));
    let mut u_rng = rng_from_seed(derive_seed(seed, "randomization"));
    let draws: Vec<f64> = (0..thetas.len()).map(|_| u_rng.random::<f64>()).collect();

    let mut intervals: Vec<Option<PredictionInterval>> = vec![None; thetas.len()];
    for test in 0..k {
        let role = |i: usize| (folds[i] + k - test) % k;
        let fit_idx: Vec<usize> = (0..thetas.len()).filter(|&i| role(i) % 2 == 1).collect();
        let fit_t: Vec<f64> = fit_idx.iter().map(|&i| thetas[i]).collect();
        let fit_g: Vec<usize> = fit_idx.iter().map(|&i| groups[i]).collect();
        let model = fit_group_means(&fit_t, &fit_g, labels, settings.ridge_lambda)?;

        let mut calib: Vec<Vec<f64>> = vec![Vec::new(); labels.len()];
        for i in 0..thetas.len() {
            let r = role(i);
            if r != 0 && r % 2 == 0 {
                calib[groups[i]].push((thetas[i] - model.predict(groups[i])).abs());
            }
        }
        let calib: Vec<Calibration> = calib
            .iter()
            .map(|s| Calibration::new(s))
            .collect::<Result<_, _>>()?;

        for i in (0..thetas.len()).filter(|&i| folds[i] == test) {
            let g = groups[i];
            let threshold = if settings.randomized {
                calib[g].randomized(settings.alpha, draws[i])
            } else {
                calib[g].conservative(settings.alpha)
            };
            intervals[i] = Some(PredictionInterval::from_threshold(
                labels[g].clone(),
                model.predict(g),
                settings.alpha,
                settings.randomized,
                threshold,
            ));
        }
    }
    let intervals: Vec<PredictionInterval> = intervals
        .into_iter()
        .map(|iv| iv.expect("every unit lies in exactly one fold"))
        .collect();
    let covered: Vec<bool> = intervals
        .iter()
        .zip(thetas)
        .map(|(iv, &t)| iv.contains(t))
        .collect();
    let summaries = summarize(thetas, groups, labels, &intervals, &covered);
    Ok(CrossfitResult {
        intervals,
        covered,
        fold_assignment: folds,
        summaries,
    })
}

fn summarize(
    thetas: &[f64],
    groups: &[usize],
    labels: &[GroupLabel],
    intervals: &[PredictionInterval],
    covered: &[bool],
) -> Vec<GroupSummary> {
    labels
        .iter()
        .enumerate()
        .map(|(g, label)| {
            let members: Vec<usize> = (0..thetas.len()).filter(|&i| groups[i] == g).collect();
            let n = members.len() as f64;
            let avg = |f: &dyn Fn(usize) -> f64| members.iter().map(|&i| f(i)).sum::<f64>() / n;
            GroupSummary {
                group: label.clone(),
                size: members.len(),
                mean_efficiency: avg(&|i| thetas[i]),
                mean_lower: avg(&|i| intervals[i].lower),
                mean_upper: avg(&|i| intervals[i].upper),
                coverage: avg(&|i| if covered[i] { 1.0 } else { 0.0 }),
            }
        })
        .collect()
}
