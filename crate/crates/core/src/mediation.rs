//! Decomposition of a group gap in an outcome into the part carried by
//! mediators and the remainder.
//!
//! For each non-reference group `g`:
//!
//! ```text
//! TE_g = E[Z | g] − E[Z | ref]                      (raw sample means)
//! IE_g = Σ_m τ_m · (E[M_m | g] − E[M_m | ref])      (model-implied means)
//! DE_g = TE_g − IE_g
//! ```
//!
//! `τ_m` comes from an OLS of the outcome on group indicators, all mediators
//! and the covariates. Binary mediators get a logistic model on group
//! indicators, continuous ones an OLS on group indicators.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Cohort, GroupLabel, Measure};
use crate::linalg::Matrix;
use crate::regression::{
    logistic_fit_with, ols_fit, sigmoid, Design, LinearModel, LogisticModel, LogisticOptions,
    RegressionError,
};
use crate::seed::{derive_indexed, rng_from_seed};
use crate::stats;

/// Proportion mediated is reported only when `|TE|` exceeds this.
pub const TE_FLOOR: f64 = 1e-8;
pub const MIN_BOOTSTRAP: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MediationError {
    #[error("column {name} missing on row {row}")]
    MissingColumn { name: String, row: usize },
    #[error("reference group {0} is not in the cohort")]
    MissingReference(GroupLabel),
    #[error("group {group} has {size} records, fewer than the required {min}")]
    GroupTooSmall {
        group: GroupLabel,
        size: usize,
        min: usize,
    },
    #[error("{model} model: {source}")]
    Regression {
        model: String,
        source: RegressionError,
    },
    #[error("bootstrap needs at least {MIN_BOOTSTRAP} replicates, got {0}")]
    TooFewReplicates(usize),
    #[error("bootstrap replicate {replicate} failed: {cause}")]
    BootstrapDegenerate { replicate: usize, cause: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MediationSpec {
    /// `x1`, `x2`, `y1`, or a confounder column name.
    pub outcome: String,
    pub reference: GroupLabel,
    pub binary_mediators: Vec<String>,
    pub continuous_mediators: Vec<String>,
    /// Enter the outcome model only.
    pub covariates: Vec<String>,
    pub min_group_size: usize,
}

impl Default for MediationSpec {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        Self {
            outcome: "x1".into(),
            reference: "White".into(),
            binary_mediators: s(&["blood_a", "blood_b", "blood_ab", "dialysis"]),
            continuous_mediators: s(&["pra"]),
            covariates: s(&["age", "male"]),
            min_group_size: 10,
        }
    }
}

impl MediationSpec {
    fn mediators(&self) -> impl Iterator<Item = &String> {
        self.binary_mediators
            .iter()
            .chain(&self.continuous_mediators)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MediatorModel {
    Binary(LogisticModel),
    Continuous(LinearModel),
}

impl MediatorModel {
    /// Model-implied mean of the mediator in group `g` (`None` = reference).
    fn group_mean(&self, indicator: Option<&str>) -> f64 {
        match self {
            MediatorModel::Binary(m) => {
                sigmoid(m.intercept + indicator.and_then(|n| m.coefficient(n)).unwrap_or(0.0))
            }
            MediatorModel::Continuous(m) => {
                m.intercept + indicator.and_then(|n| m.coefficient(n)).unwrap_or(0.0)
            }
        }
    }

    pub fn separation(&self) -> bool {
        matches!(self, MediatorModel::Binary(m) if m.separation)
    }
}

/// Fitted outcome and mediator models plus the group means they need.
#[derive(Clone, Debug, PartialEq)]
pub struct MediationFit {
    pub outcome_model: LinearModel,
    pub mediator_models: Vec<(String, MediatorModel)>,
    /// Non-reference groups in cohort order, with their indicator column names.
    pub groups: Vec<(GroupLabel, String)>,
    pub reference: GroupLabel,
    /// Raw mean outcome per group: reference first, then `groups` order.
    outcome_means: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

impl Effect {
    fn point(estimate: f64) -> Self {
        Self {
            estimate,
            se: None,
            ci_low: None,
            ci_high: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupEffects {
    pub group: GroupLabel,
    pub total: Effect,
    pub indirect: Effect,
    pub direct: Effect,
    pub proportion_mediated: Option<f64>,
}

fn column(cohort: &Cohort, name: &str) -> Result<Vec<f64>, MediationError> {
    if let Some(m) = Measure::from_key(name) {
        return Ok(cohort.measure(m));
    }
    cohort
        .confounder_column(name)
        .map_err(|row| MediationError::MissingColumn {
            name: name.to_string(),
            row,
        })
}

fn wrap(model: &str) -> impl Fn(RegressionError) -> MediationError + '_ {
    move |source| MediationError::Regression {
        model: model.to_string(),
        source,
    }
}

/// Fits all models. With `strict_separation` a separated logistic mediator is
/// an error; otherwise it is refit with a ridge penalty and flagged.
pub fn fit_mediation_models(
    cohort: &Cohort,
    spec: &MediationSpec,
    strict_separation: bool,
) -> Result<MediationFit, MediationError> {
    let reference = cohort
        .group_position(&spec.reference)
        .ok_or_else(|| MediationError::MissingReference(spec.reference.clone()))?;
    for (group, size) in cohort.group_counts() {
        if size < spec.min_group_size {
            return Err(MediationError::GroupTooSmall {
                group,
                size,
                min: spec.min_group_size,
            });
        }
    }
    let n = cohort.len();
    let groups: Vec<(usize, GroupLabel, String)> = cohort
        .group_set()
        .iter()
        .enumerate()
        .filter(|(g, _)| *g != reference)
        .map(|(g, l)| (g, l.clone(), format!("group_{l}")))
        .collect();
    let indicators: Vec<(String, Vec<f64>)> = groups
        .iter()
        .map(|(g, _, name)| {
            let col = cohort
                .group_indices()
                .iter()
                .map(|&gi| if gi == *g { 1.0 } else { 0.0 })
                .collect();
            (name.clone(), col)
        })
        .collect();

    let z = column(cohort, &spec.outcome)?;
    let mut outcome_cols = indicators.clone();
    for name in spec.mediators().chain(&spec.covariates) {
        outcome_cols.push((name.clone(), column(cohort, name)?));
    }
    let outcome_model =
        ols_fit(&Design::from_columns(outcome_cols), &z).map_err(wrap("outcome"))?;

    let group_design = if indicators.is_empty() {
        Design::new(vec![], Matrix::zeros(n, 0))
    } else {
        Design::from_columns(indicators)
    };
    let options = LogisticOptions {
        strict_separation,
        ..LogisticOptions::default()
    };
    let mut mediator_models = Vec::new();
    for name in &spec.binary_mediators {
        let m = column(cohort, name)?;
        let fit = logistic_fit_with(&group_design, &m, options).map_err(wrap(name))?;
        mediator_models.push((name.clone(), MediatorModel::Binary(fit)));
    }
    for name in &spec.continuous_mediators {
        let m = column(cohort, name)?;
        let fit = ols_fit(&group_design, &m).map_err(wrap(name))?;
        mediator_models.push((name.clone(), MediatorModel::Continuous(fit)));
    }

    let members = cohort.members_by_group();
    let group_mean = |g: usize| stats::mean(&members[g].iter().map(|&i| z[i]).collect::<Vec<_>>());
    let mut outcome_means = vec![group_mean(reference)];
    outcome_means.extend(groups.iter().map(|(g, _, _)| group_mean(*g)));

    Ok(MediationFit {
        outcome_model,
        mediator_models,
        groups: groups.into_iter().map(|(_, l, n)| (l, n)).collect(),
        reference: spec.reference.clone(),
        outcome_means,
    })
}

/// Point estimates for every non-reference group.
pub fn effects(fit: &MediationFit) -> Vec<GroupEffects> {
    fit.groups
        .iter()
        .enumerate()
        .map(|(k, (group, indicator))| {
            let te = fit.outcome_means[k + 1] - fit.outcome_means[0];
            let ie: f64 = fit
                .mediator_models
                .iter()
                .map(|(name, model)| {
                    let tau = fit.outcome_model.coefficient(name).unwrap_or(0.0);
                    tau * (model.group_mean(Some(indicator)) - model.group_mean(None))
                })
                .sum();
            let de = te - ie;
            GroupEffects {
                group: group.clone(),
                total: Effect::point(te),
                indirect: Effect::point(ie),
                direct: Effect::point(de),
                proportion_mediated: (te.abs() > TE_FLOOR).then(|| ie / te),
            }
        })
        .collect()
}

/// Fits the models strictly, then attaches bootstrap standard errors and
/// percentile 95% intervals. Replicates resample each group with replacement
/// at its original size, seeded by `derive_indexed(seed, b)`, and fit
/// separated mediators leniently.
pub fn bootstrap_ci(
    cohort: &Cohort,
    spec: &MediationSpec,
    replicates: usize,
    seed: u64,
) -> Result<Vec<GroupEffects>, MediationError> {
    if replicates < MIN_BOOTSTRAP {
        return Err(MediationError::TooFewReplicates(replicates));
    }
    let fit = fit_mediation_models(cohort, spec, true)?;
    let mut table = effects(&fit);
    let members = cohort.members_by_group();

    // draws[group][effect] over replicates
    let mut draws = vec![[Vec::with_capacity(replicates), Vec::new(), Vec::new()]; table.len()];
    for b in 0..replicates {
        let mut rng = rng_from_seed(derive_indexed(seed, b as u64));
        let mut indices = Vec::with_capacity(cohort.len());
        for list in &members {
            for _ in 0..list.len() {
                indices.push(list[rand::Rng::random_range(&mut rng, 0..list.len())]);
            }
        }
        let sample = resampled(cohort, &indices);
        let degenerate = |cause: String| MediationError::BootstrapDegenerate {
            replicate: b,
            cause,
        };
        let rep_fit =
            fit_mediation_models(&sample, spec, false).map_err(|e| degenerate(e.to_string()))?;
        let rep = effects(&rep_fit);
        for (k, e) in rep.iter().enumerate() {
            for (slot, v) in [e.total, e.indirect, e.direct].iter().enumerate() {
                if !v.estimate.is_finite() {
                    return Err(degenerate(format!("non-finite effect for {}", e.group)));
                }
                draws[k][slot].push(v.estimate);
            }
        }
    }
    for (row, d) in table.iter_mut().zip(draws.iter_mut()) {
        for (effect, values) in [&mut row.total, &mut row.indirect, &mut row.direct]
            .into_iter()
            .zip(d.iter_mut())
        {
            stats::sort_floats(values);
            effect.se = Some(stats::std_dev(values));
            effect.ci_low = Some(stats::quantile_sorted(values, 0.025));
            effect.ci_high = Some(stats::quantile_sorted(values, 0.975));
        }
    }
    Ok(table)
}

/// Bootstrap sample with fresh ids so duplicated records stay valid.
fn resampled(cohort: &Cohort, indices: &[usize]) -> Cohort {
    let records = indices
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let mut r = cohort.records()[i].clone();
            r.id = format!("b{k}");
            r
        })
        .collect();
    Cohort::new(records, cohort.group_set().to_vec()).expect("resampled cohort keeps every group")
}
