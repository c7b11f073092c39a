//! Hyperbolic graph efficiency under variable returns to scale.
//!
//! For unit `i` the score is the smallest `θ ∈ (0, 1]` such that some convex
//! combination of observed units uses at most `θ·X_i` and produces at least
//! `Y_i / θ`. Feasibility is monotone in `θ`, so the score is found by
//! bisection over phase-1 LP feasibility checks.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::lp::{self, LpError};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_FRONTIER_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeaError {
    #[error("DEA instance has no units")]
    Empty,
    #[error("unit {unit}: {kind} column {column} must be finite and positive, got {value}")]
    NonPositive {
        unit: usize,
        kind: &'static str,
        column: usize,
        value: f64,
    },
    #[error("dimension mismatch: {0}")]
    Shape(&'static str),
    #[error("unit index {0} out of range")]
    UnitOutOfRange(usize),
    #[error("theta must be positive and finite, got {0}")]
    InvalidTheta(f64),
    #[error("tolerance must lie in (0, 1), got {0}")]
    InvalidTolerance(f64),
    #[error("unit {unit}: LP failed: {source}")]
    NumericalFailure { unit: usize, source: LpError },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeaSettings {
    /// Bisection width on θ.
    pub tol: f64,
    /// Units with `θ ≥ 1 − frontier_tol` are reported on the frontier.
    pub frontier_tol: f64,
}

impl Default for DeaSettings {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            frontier_tol: DEFAULT_FRONTIER_TOL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyScore {
    pub theta: f64,
    pub on_frontier: bool,
    /// `θ·X_i`.
    pub projected_inputs: Vec<f64>,
    /// `Y_i / θ`.
    pub projected_outputs: Vec<f64>,
}

/// Inputs and outputs of `n` decision-making units.
#[derive(Clone, Debug, PartialEq)]
pub struct DeaInstance {
    inputs: Matrix,
    outputs: Matrix,
    ids: Vec<String>,
    /// Indices of the non-dominated units. Dominated units and duplicates lie
    /// inside the production set spanned by the rest, so dropping them leaves
    /// every score unchanged and keeps the LPs small.
    reference: Vec<usize>,
}

impl DeaInstance {
    pub fn new(inputs: Matrix, outputs: Matrix, ids: Vec<String>) -> Result<Self, DeaError> {
        let n = inputs.rows();
        if n == 0 {
            return Err(DeaError::Empty);
        }
        if outputs.rows() != n || ids.len() != n {
            return Err(DeaError::Shape(
                "inputs, outputs and ids must have one row per unit",
            ));
        }
        if inputs.cols() == 0 || outputs.cols() == 0 {
            return Err(DeaError::Shape("need at least one input and one output"));
        }
        for (kind, m) in [("input", &inputs), ("output", &outputs)] {
            for unit in 0..n {
                for (column, &value) in m.row(unit).iter().enumerate() {
                    if !(value > 0.0 && value.is_finite()) {
                        return Err(DeaError::NonPositive {
                            unit,
                            kind,
                            column,
                            value,
                        });
                    }
                }
            }
        }
        let reference = pareto_reference(&inputs, &outputs);
        Ok(Self {
            inputs,
            outputs,
            ids,
            reference,
        })
    }

    /// Builds an instance from per-unit rows.
    pub fn from_rows(
        inputs: &[Vec<f64>],
        outputs: &[Vec<f64>],
        ids: Vec<String>,
    ) -> Result<Self, DeaError> {
        if inputs.is_empty() {
            return Err(DeaError::Empty);
        }
        let rect = |rows: &[Vec<f64>]| rows.iter().all(|r| r.len() == rows[0].len());
        if !rect(inputs) || !rect(outputs) {
            return Err(DeaError::Shape("ragged rows"));
        }
        Self::new(Matrix::from_rows(inputs), Matrix::from_rows(outputs), ids)
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn outputs(&self) -> &Matrix {
        &self.outputs
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Number of units kept in the reference technology after dominance pruning.
    pub fn reference_len(&self) -> usize {
        self.reference.len()
    }

    fn check_unit(&self, i: usize) -> Result<(), DeaError> {
        if i < self.len() {
            Ok(())
        } else {
            Err(DeaError::UnitOutOfRange(i))
        }
    }

    /// Constraint matrix of unit `i` with every row scaled by the unit's own
    /// values. Columns: reference λ's, input slacks, output surpluses.
    fn normalized_system(&self, i: usize, theta: f64) -> (Matrix, Vec<f64>) {
        let (p, q) = (self.inputs.cols(), self.outputs.cols());
        let r = self.reference.len();
        let mut a = Matrix::zeros(p + q + 1, r + p + q);
        let mut b = vec![0.0; p + q + 1];
        let xi = self.inputs.row(i);
        let yi = self.outputs.row(i);
        for (c, &j) in self.reference.iter().enumerate() {
            for k in 0..p {
                a.set(k, c, self.inputs.get(j, k) / xi[k]);
            }
            for k in 0..q {
                a.set(p + k, c, self.outputs.get(j, k) / yi[k]);
            }
            a.set(p + q, c, 1.0);
        }
        for k in 0..p {
            a.set(k, r + k, 1.0);
            b[k] = theta;
        }
        for k in 0..q {
            a.set(p + k, r + p + k, -1.0);
            b[p + k] = 1.0 / theta;
        }
        b[p + q] = 1.0;
        (a, b)
    }

    /// Smallest θ that no convex combination can beat on every coordinate
    /// separately; the true score is never below it.
    fn lower_bound(&self, i: usize) -> f64 {
        let xi = self.inputs.row(i);
        let yi = self.outputs.row(i);
        let mut bound: f64 = 0.0;
        for (k, &x) in xi.iter().enumerate() {
            let best = self
                .reference
                .iter()
                .map(|&j| self.inputs.get(j, k) / x)
                .fold(f64::INFINITY, f64::min);
            bound = bound.max(best);
        }
        for (k, &y) in yi.iter().enumerate() {
            let best = self
                .reference
                .iter()
                .map(|&j| self.outputs.get(j, k) / y)
                .fold(0.0, f64::max);
            bound = bound.max(1.0 / best);
        }
        bound.min(1.0)
    }
}

fn dominates(inputs: &Matrix, outputs: &Matrix, k: usize, j: usize) -> bool {
    inputs.row(k).iter().zip(inputs.row(j)).all(|(a, b)| a <= b)
        && outputs
            .row(k)
            .iter()
            .zip(outputs.row(j))
            .all(|(a, b)| a >= b)
}

/// Non-dominated units, lowest index among exact duplicates. Visiting units in
/// lexicographic order (inputs ascending, outputs descending) guarantees any
/// dominator is visited before the units it dominates.
fn pareto_reference(inputs: &Matrix, outputs: &Matrix) -> Vec<usize> {
    let mut order: Vec<usize> = (0..inputs.rows()).collect();
    order.sort_by(|&a, &b| {
        let xs = inputs
            .row(a)
            .iter()
            .zip(inputs.row(b))
            .map(|(u, v)| u.total_cmp(v));
        let ys = outputs
            .row(b)
            .iter()
            .zip(outputs.row(a))
            .map(|(u, v)| u.total_cmp(v));
        xs.chain(ys)
            .find(|o| o.is_ne())
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for j in order {
        if !kept.iter().any(|&k| dominates(inputs, outputs, k, j)) {
            kept.push(j);
        }
    }
    kept.sort_unstable();
    kept
}

/// Is `(θ·X_i, Y_i/θ)` inside the VRS production set?
pub fn lp_feasible(instance: &DeaInstance, i: usize, theta: f64) -> Result<bool, DeaError> {
    instance.check_unit(i)?;
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(DeaError::InvalidTheta(theta));
    }
    let (a, b) = instance.normalized_system(i, theta);
    lp::is_feasible(&a, &b).map_err(|source| DeaError::NumericalFailure { unit: i, source })
}

pub fn hyperbolic_efficiency(
    instance: &DeaInstance,
    i: usize,
    settings: &DeaSettings,
) -> Result<EfficiencyScore, DeaError> {
    instance.check_unit(i)?;
    if !(settings.tol > 0.0 && settings.tol < 1.0) {
        return Err(DeaError::InvalidTolerance(settings.tol));
    }
    let lower = instance.lower_bound(i);
    let theta = if lp_feasible(instance, i, lower)? {
        lower
    } else {
        let (mut lo, mut hi) = (lower, 1.0);
        while hi - lo > settings.tol {
            let mid = 0.5 * (lo + hi);
            if lp_feasible(instance, i, mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    Ok(EfficiencyScore {
        theta,
        on_frontier: theta >= 1.0 - settings.frontier_tol,
        projected_inputs: instance.inputs.row(i).iter().map(|x| theta * x).collect(),
        projected_outputs: instance.outputs.row(i).iter().map(|y| y / theta).collect(),
    })
}

/// Scores every unit in order; a failing unit does not stop the batch.
pub fn efficiency_all(
    instance: &DeaInstance,
    settings: &DeaSettings,
) -> Vec<Result<EfficiencyScore, DeaError>> {
    (0..instance.len())
        .map(|i| hyperbolic_efficiency(instance, i, settings))
        .collect()
}

/// Raw and projected coordinates of one unit, inputs first then outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontierPoint {
    pub id: String,
    pub raw: Vec<f64>,
    pub projected: Vec<f64>,
}

/// Raw and projected points with the columns flagged in `scale` min-max scaled
/// by the raw column range. Columns are inputs first, then outputs. A constant
/// column maps to 0.
pub fn frontier_plot_data(
    instance: &DeaInstance,
    scores: &[EfficiencyScore],
    scale: &[bool],
) -> Result<Vec<FrontierPoint>, DeaError> {
    let (p, q) = (instance.inputs.cols(), instance.outputs.cols());
    if scores.len() != instance.len() || scale.len() != p + q {
        return Err(DeaError::Shape(
            "one score per unit and one scale flag per column",
        ));
    }
    let column = |c: usize, i: usize| {
        if c < p {
            instance.inputs.get(i, c)
        } else {
            instance.outputs.get(i, c - p)
        }
    };
    let ranges: Vec<Option<(f64, f64)>> = (0..p + q)
        .map(|c| {
            scale[c].then(|| {
                (0..instance.len()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
                    (lo.min(column(c, i)), hi.max(column(c, i)))
                })
            })
        })
        .collect();
    let rescale = |c: usize, v: f64| match ranges[c] {
        Some((lo, hi)) if hi > lo => (v - lo) / (hi - lo),
        Some(_) => 0.0,
        None => v,
    };
    Ok(scores
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let projected_raw = s.projected_inputs.iter().chain(&s.projected_outputs);
            FrontierPoint {
                id: instance.ids[i].clone(),
                raw: (0..p + q).map(|c| rescale(c, column(c, i))).collect(),
                projected: projected_raw
                    .enumerate()
                    .map(|(c, &v)| rescale(c, v))
                    .collect(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    fn one_one(units: &[(f64, f64)]) -> DeaInstance {
        let xs: Vec<Vec<f64>> = units.iter().map(|u| vec![u.0]).collect();
        let ys: Vec<Vec<f64>> = units.iter().map(|u| vec![u.1]).collect();
        let ids = (0..units.len()).map(|i| format!("u{i}")).collect();
        DeaInstance::from_rows(&xs, &ys, ids).unwrap()
    }

    fn theta(inst: &DeaInstance, i: usize) -> f64 {
        hyperbolic_efficiency(inst, i, &DeaSettings::default())
            .unwrap()
            .theta
    }

    #[test]
    fn single_unit_is_efficient() {
        let inst = one_one(&[(3.0, 2.0)]);
        assert!(lp_feasible(&inst, 0, 1.0).unwrap());
        assert!(!lp_feasible(&inst, 0, 0.99).unwrap());
        assert_eq!(theta(&inst, 0), 1.0);
    }

    #[test]
    fn two_unit_hand_instance() {
        let inst = one_one(&[(1.0, 1.0), (2.0, 0.5)]);
        assert!(lp_feasible(&inst, 1, 0.5).unwrap());
        assert!(!lp_feasible(&inst, 1, 0.49).unwrap());
        assert!((theta(&inst, 0) - 1.0).abs() < 1e-5);
        assert!((theta(&inst, 1) - 0.5).abs() < 1e-5);
        let s = hyperbolic_efficiency(&inst, 1, &DeaSettings::default()).unwrap();
        assert!((s.projected_inputs[0] - 1.0).abs() < 1e-5);
        assert!((s.projected_outputs[0] - 1.0).abs() < 1e-5);
        assert!(!s.on_frontier);
    }

    #[test]
    fn three_unit_hand_instance() {
        let inst = one_one(&[(1.0, 1.0), (3.0, 3.0), (2.0, 1.0)]);
        let all: Vec<f64> = efficiency_all(&inst, &DeaSettings::default())
            .into_iter()
            .map(|r| r.unwrap().theta)
            .collect();
        assert!((all[0] - 1.0).abs() < 1e-5);
        assert!((all[1] - 1.0).abs() < 1e-5);
        assert!((all[2] - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-5);
    }

    #[test]
    fn pruning_keeps_first_duplicate() {
        let inst = one_one(&[(2.0, 1.0), (1.0, 1.0), (1.0, 1.0), (3.0, 3.0)]);
        assert_eq!(inst.reference, vec![1, 3]);
        assert!((theta(&inst, 2) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_instances() {
        assert_eq!(
            DeaInstance::from_rows(&[], &[], vec![]),
            Err(DeaError::Empty)
        );
        let bad = DeaInstance::from_rows(&[vec![0.0]], &[vec![1.0]], vec!["a".into()]);
        assert!(matches!(bad, Err(DeaError::NonPositive { unit: 0, .. })));
        let inst = one_one(&[(1.0, 1.0)]);
        assert_eq!(lp_feasible(&inst, 3, 1.0), Err(DeaError::UnitOutOfRange(3)));
        assert_eq!(lp_feasible(&inst, 0, 0.0), Err(DeaError::InvalidTheta(0.0)));
    }

    #[test]
    fn feasibility_is_monotone_in_theta() {
        let inst = one_one(&[(1.0, 1.0), (3.0, 3.0), (2.0, 1.0), (2.5, 1.8)]);
        for i in 0..4 {
            let mut seen = false;
            for step in 1..=100 {
                let t = f64::from(step) / 100.0;
                let f = lp_feasible(&inst, i, t).unwrap();
                assert!(!(seen && !f), "unit {i} lost feasibility at {t}");
                seen |= f;
            }
            assert!(seen);
        }
    }

    #[test]
    fn frontier_points_scale_and_project() {
        let inst = one_one(&[(1.0, 1.0), (2.0, 0.5)]);
        let scores: Vec<EfficiencyScore> = efficiency_all(&inst, &DeaSettings::default())
            .into_iter()
            .map(Result::unwrap)
            .collect();
        let raw = frontier_plot_data(&inst, &scores, &[false, false]).unwrap();
        assert_eq!(raw[0].raw, raw[0].projected);
        assert!((raw[1].projected[0] - 1.0).abs() < 1e-5);
        assert!((raw[1].projected[1] - 1.0).abs() < 1e-5);
        let scaled = frontier_plot_data(&inst, &scores, &[true, true]).unwrap();
        assert_eq!(scaled[0].raw, vec![0.0, 1.0]);
        assert_eq!(scaled[1].raw, vec![1.0, 0.0]);
    }
}
