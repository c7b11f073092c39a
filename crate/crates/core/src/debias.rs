//! Cross-fitted orthogonal-score adjustment of a fairness measure.
//!
//! For record `i` in fold `k`, nuisances are trained on the other folds:
//! an outcome regression `μ̂(G, W)` (OLS on non-reference group indicators and
//! confounders) and a one-vs-rest propensity `p̂_g(W)` for the record's own
//! group. The adjusted score is `V_i · U_i` with `U_i = Z_i − μ̂(G_i, W_i)` and
//! `V_i = 1 − p̂_{g_i}(W_i)`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Cohort, GroupLabel, Measure};
use crate::folds::stratified_folds;
use crate::linalg::Matrix;
use crate::regression::{logistic_fit, ols_fit, Design, RegressionError};

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DebiasError {
    #[error("cross-fitting needs at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("confounder {name} missing on row {row}")]
    MissingConfounder { name: String, row: usize },
    #[error("group {group} has {size} records; every training split needs it")]
    FoldTooSmall { group: GroupLabel, size: usize },
    #[error("fold {fold}: {source}")]
    Regression {
        fold: usize,
        source: RegressionError,
    },
}

/// What happened while fitting the nuisances of one fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldDiagnostics {
    pub fold: usize,
    pub train_size: usize,
    pub outcome_ridge_fallback: bool,
    /// Groups whose propensity fit hit separation and was ridge-penalized.
    pub separated_groups: Vec<GroupLabel>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DebiasResult {
    pub outcome: Measure,
    /// `V_i · U_i`, one per record in cohort order.
    pub adjusted: Vec<f64>,
    pub residuals: Vec<f64>,
    pub treatment: Vec<f64>,
    pub fold_assignment: Vec<usize>,
    pub per_fold: Vec<FoldDiagnostics>,
}

fn confounder_matrix(cohort: &Cohort, names: &[String]) -> Result<Matrix, DebiasError> {
    let n = cohort.len();
    let p = names.len();
    let mut data = vec![0.0; n * p];
    for (j, name) in names.iter().enumerate() {
        let col = cohort
            .confounder_column(name)
            .map_err(|row| DebiasError::MissingConfounder {
                name: name.clone(),
                row,
            })?;
        for (i, v) in col.into_iter().enumerate() {
            data[i * p + j] = v;
        }
    }
    Ok(Matrix::from_row_major(n, p, data))
}

/// Confounders only, for the propensity models.
fn propensity_design(w: &Matrix, names: &[String]) -> Design {
    Design::new(names.to_vec(), w.clone())
}

/// Non-reference group indicators followed by confounders. The first group of
/// the cohort's group set is the reference.
fn outcome_design(cohort: &Cohort, w: &Matrix, names: &[String]) -> Design {
    let groups = cohort.group_set();
    let g = groups.len() - 1;
    let p = w.cols();
    let n = cohort.len();
    let mut data = vec![0.0; n * (g + p)];
    for (i, &gi) in cohort.group_indices().iter().enumerate() {
        if gi > 0 {
            data[i * (g + p) + gi - 1] = 1.0;
        }
        data[i * (g + p) + g..(i + 1) * (g + p)].copy_from_slice(w.row(i));
    }
    let mut cols: Vec<String> = groups[1..].iter().map(|l| format!("group_{l}")).collect();
    cols.extend(names.iter().cloned());
    Design::new(cols, Matrix::from_row_major(n, g + p, data))
}

pub fn crossfit_debias(
    cohort: &Cohort,
    outcome: Measure,
    confounders: &[String],
    folds: usize,
    seed: u64,
) -> Result<DebiasResult, DebiasError> {
    if folds < 2 {
        return Err(DebiasError::TooFewFolds(folds));
    }
    for (group, size) in cohort.group_counts() {
        // Stratified folds put a group with two or more members into at least
        // two folds, so it appears in every training split.
        if size < 2 {
            return Err(DebiasError::FoldTooSmall { group, size });
        }
    }
    let n = cohort.len();
    let groups = cohort.group_indices();
    let n_groups = cohort.group_set().len();
    let z = cohort.measure(outcome);
    let w = confounder_matrix(cohort, confounders)?;
    let mu_design = outcome_design(cohort, &w, confounders);
    let p_design = propensity_design(&w, confounders);
    let assignment = stratified_folds(groups, n_groups, folds, seed);

    let mut residuals = vec![0.0; n];
    let mut treatment = vec![0.0; n];
    let mut per_fold = Vec::with_capacity(folds);
    for k in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != k).collect();
        let test: Vec<usize> = (0..n).filter(|&i| assignment[i] == k).collect();
        let wrap = |source| DebiasError::Regression { fold: k, source };

        let z_train: Vec<f64> = train.iter().map(|&i| z[i]).collect();
        let mu = ols_fit(&mu_design.select_rows(&train), &z_train).map_err(wrap)?;
        let p_train = p_design.select_rows(&train);
        let mut separated_groups = Vec::new();
        let mut propensity = Vec::with_capacity(n_groups);
        for (g, label) in cohort.group_set().iter().enumerate() {
            let b: Vec<f64> = train
                .iter()
                .map(|&i| if groups[i] == g { 1.0 } else { 0.0 })
                .collect();
            let model = logistic_fit(&p_train, &b).map_err(wrap)?;
            if model.separation {
                separated_groups.push(label.clone());
            }
            propensity.push(model);
        }
        for &i in &test {
            residuals[i] = z[i] - mu.predict_row(mu_design.matrix().row(i));
            treatment[i] = 1.0 - propensity[groups[i]].probability_row(w.row(i));
        }
        per_fold.push(FoldDiagnostics {
            fold: k,
            train_size: train.len(),
            outcome_ridge_fallback: mu.ridge_fallback,
            separated_groups,
        });
    }
    let adjusted = residuals
        .iter()
        .zip(&treatment)
        .map(|(u, v)| u * v)
        .collect();
    Ok(DebiasResult {
        outcome,
        adjusted,
        residuals,
        treatment,
        fold_assignment: assignment,
        per_fold,
    })
}
