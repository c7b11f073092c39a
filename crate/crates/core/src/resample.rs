//! Stratified resampling to target group proportions.
//!
//! The resampled size is the largest `n` every group can supply without
//! oversampling, `n = min_g ⌊n_g / p_g⌋`, and each group keeps
//! `ñ_g = ⌊n · p_g⌋` records drawn uniformly without replacement.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Cohort, CohortError, GroupLabel};
use crate::seed::{derive_indexed, rng_from_seed};

/// Allowed slack on `Σ p_g = 1`; published percentages are rounded, e.g. the
/// 2020 Census shares sum to 1.001.
pub const PROPORTION_SUM_TOLERANCE: f64 = 0.01;

/// Relative slack used when flooring a quotient that is an integer in exact
/// arithmetic but lands a few ulps below it in floating point.
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ResampleError {
    #[error("proportion for {group} must lie in (0, 1), got {value}")]
    InvalidProportion { group: GroupLabel, value: f64 },
    #[error("proportions sum to {0}, expected 1")]
    BadSum(f64),
    #[error("group {0} listed twice in proportion target")]
    DuplicateGroup(GroupLabel),
    #[error("target group {0} is absent from the cohort counts")]
    MissingGroup(GroupLabel),
    #[error("cohort group {0} has no target proportion")]
    UntargetedGroup(GroupLabel),
    #[error("quota {quota} for {group} exceeds its {available} records")]
    QuotaExceedsGroup {
        group: GroupLabel,
        quota: usize,
        available: usize,
    },
    #[error("resampled size is zero")]
    EmptyTarget,
    #[error(transparent)]
    Cohort(#[from] CohortError),
}

/// Desired share of each group in the resampled cohort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProportionTarget {
    entries: Vec<(GroupLabel, f64)>,
}

impl ProportionTarget {
    pub fn new(entries: Vec<(GroupLabel, f64)>) -> Result<Self, ResampleError> {
        for (i, (g, p)) in entries.iter().enumerate() {
            if !(*p > 0.0 && *p < 1.0) {
                return Err(ResampleError::InvalidProportion {
                    group: g.clone(),
                    value: *p,
                });
            }
            if entries[..i].iter().any(|(h, _)| h == g) {
                return Err(ResampleError::DuplicateGroup(g.clone()));
            }
        }
        let sum: f64 = entries.iter().map(|(_, p)| p).sum();
        if (sum - 1.0).abs() > PROPORTION_SUM_TOLERANCE {
            return Err(ResampleError::BadSum(sum));
        }
        Ok(Self { entries })
    }

    /// 2020 U.S. Census shares: Asian 6.1%, Black 12.6%, Hispanic 19.0%, White 62.4%.
    pub fn census_2020() -> Self {
        Self::new(alloc::vec![
            ("Asian".into(), 0.061),
            ("Black".into(), 0.126),
            ("Hispanic".into(), 0.190),
            ("White".into(), 0.624),
        ])
        .expect("census shares are valid")
    }

    pub fn get(&self, group: &GroupLabel) -> Option<f64> {
        self.entries
            .iter()
            .find(|(g, _)| g == group)
            .map(|(_, p)| *p)
    }

    pub fn entries(&self) -> &[(GroupLabel, f64)] {
        &self.entries
    }
}

fn floor_tolerant(v: f64) -> usize {
    let r = libm::round(v);
    if (v - r).abs() <= FLOOR_SLACK * v.abs().max(1.0) {
        r as usize
    } else {
        libm::floor(v) as usize
    }
}

/// `min_g ⌊n_g / p_g⌋` over the target groups.
pub fn target_total(
    counts: &[(GroupLabel, usize)],
    props: &ProportionTarget,
) -> Result<usize, ResampleError> {
    props
        .entries()
        .iter()
        .map(|(g, p)| {
            let n_g = counts
                .iter()
                .find(|(h, _)| h == g)
                .map(|(_, n)| *n)
                .ok_or_else(|| ResampleError::MissingGroup(g.clone()))?;
            Ok(floor_tolerant(n_g as f64 / p))
        })
        .try_fold(usize::MAX, |acc, n: Result<usize, ResampleError>| {
            Ok(acc.min(n?))
        })
}

/// `ñ_g = ⌊n · p_g⌋` for each target group, in target order.
pub fn group_quotas(n: usize, props: &ProportionTarget) -> Vec<(GroupLabel, usize)> {
    props
        .entries()
        .iter()
        .map(|(g, p)| (g.clone(), floor_tolerant(n as f64 * p)))
        .collect()
}

/// Draws `ñ_g` records per group without replacement. Group `g` (by position in
/// the cohort's group set) shuffles with sub-seed `derive_indexed(seed, g)`.
/// Kept records stay in their original cohort order.
pub fn resample(
    cohort: &Cohort,
    props: &ProportionTarget,
    seed: u64,
) -> Result<Cohort, ResampleError> {
    for g in cohort.group_set() {
        if props.get(g).is_none() {
            return Err(ResampleError::UntargetedGroup(g.clone()));
        }
    }
    let counts = cohort.group_counts();
    let n = target_total(&counts, props)?;
    let quotas = group_quotas(n, props);
    let members = cohort.members_by_group();

    let mut keep = alloc::vec![false; cohort.len()];
    for (gi, group) in cohort.group_set().iter().enumerate() {
        let quota = quotas
            .iter()
            .find(|(g, _)| g == group)
            .map(|(_, q)| *q)
            .unwrap_or(0);
        let mut pool = members[gi].clone();
        if quota > pool.len() {
            return Err(ResampleError::QuotaExceedsGroup {
                group: group.clone(),
                quota,
                available: pool.len(),
            });
        }
        let mut rng = rng_from_seed(derive_indexed(seed, gi as u64));
        pool.shuffle(&mut rng);
        for &i in &pool[..quota] {
            keep[i] = true;
        }
    }
    let indices: Vec<usize> = (0..cohort.len()).filter(|&i| keep[i]).collect();
    if indices.is_empty() {
        return Err(ResampleError::EmptyTarget);
    }
    Ok(cohort.subset(&indices)?)
}

/// Human-readable summary line used in reports: `Asian 817/818`.
pub fn describe_quotas(
    before: &[(GroupLabel, usize)],
    after: &[(GroupLabel, usize)],
) -> Vec<String> {
    after
        .iter()
        .map(|(g, q)| {
            let n = before.iter().find(|(h, _)| h == g).map_or(0, |(_, n)| *n);
            format!("{g} {q}/{n}")
        })
        .collect()
}
