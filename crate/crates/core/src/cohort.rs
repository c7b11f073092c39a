//! Patient records and validated cohorts.
//!
//! A [`Cohort`] is the unit every stage consumes: a non-empty sequence of
//! [`PatientRecord`]s whose groups are drawn from an ordered, declared group
//! set. Construction is the only validation point; after that the cohort is
//! immutable.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CohortError {
    #[error("cohort has no records")]
    Empty,
    #[error("group set needs at least two groups, got {0}")]
    TooFewGroups(usize),
    #[error("group {0} is declared twice")]
    DuplicateGroup(GroupLabel),
    #[error("row {row}: group {group} is not in the declared group set")]
    UnknownGroup { row: usize, group: String },
    #[error("declared group {0} has no records")]
    EmptyGroup(GroupLabel),
    #[error("row {row}: duplicate id {id}")]
    DuplicateId { row: usize, id: String },
    #[error("row {row}: column {column} value {value} is outside its domain")]
    DomainViolation {
        row: usize,
        column: String,
        value: f64,
    },
    #[error("empty input")]
    EmptyInput,
    #[error("shift epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
}

/// A demographic group name such as `Asian` or `White`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupLabel(String);

impl GroupLabel {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for GroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for GroupLabel {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

/// The four groups of the reference audit, in report order.
pub fn default_groups() -> Vec<GroupLabel> {
    ["Asian", "Black", "Hispanic", "White"]
        .into_iter()
        .map(GroupLabel::from)
        .collect()
}

/// One of the three audited measures of an allocation episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    /// Waitlist duration in days (input, lower is better).
    X1,
    /// KDPI score of the allocated kidney (input, lower is better).
    X2,
    /// Graft lifespan in days (output, higher is better).
    Y1,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::X1, Measure::X2, Measure::Y1];

    pub fn of(self, record: &PatientRecord) -> f64 {
        match self {
            Measure::X1 => record.x1,
            Measure::X2 => record.x2,
            Measure::Y1 => record.y1,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Measure::X1 => "x1",
            Measure::X2 => "x2",
            Measure::Y1 => "y1",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.key() == key)
    }
}

/// One allocation episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub group: GroupLabel,
    /// Waitlist duration, days, > 0.
    pub x1: f64,
    /// KDPI, in (0, 1].
    pub x2: f64,
    /// Graft lifespan, days, > 0.
    pub y1: f64,
    #[serde(default)]
    pub confounders: BTreeMap<String, f64>,
}

impl PatientRecord {
    pub fn confounder(&self, name: &str) -> Option<f64> {
        self.confounders.get(name).copied()
    }

    fn check_domain(&self, row: usize) -> Result<(), CohortError> {
        let violation = |column: &str, value: f64| CohortError::DomainViolation {
            row,
            column: column.to_string(),
            value,
        };
        if !(self.x1 > 0.0) || !self.x1.is_finite() {
            return Err(violation("x1", self.x1));
        }
        if !(self.x2 > 0.0 && self.x2 <= 1.0) {
            return Err(violation("x2", self.x2));
        }
        if !(self.y1 > 0.0) || !self.y1.is_finite() {
            return Err(violation("y1", self.y1));
        }
        for (name, &v) in &self.confounders {
            if !v.is_finite() {
                return Err(violation(name, v));
            }
        }
        Ok(())
    }
}

/// A validated, immutable collection of records.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cohort {
    records: Vec<PatientRecord>,
    group_set: Vec<GroupLabel>,
    #[serde(skip)]
    group_index: Vec<usize>,
}

impl Cohort {
    /// Validates `records` against `group_set`. Row indices in errors are
    /// zero-based positions in `records`.
    pub fn new(
        records: Vec<PatientRecord>,
        group_set: Vec<GroupLabel>,
    ) -> Result<Self, CohortError> {
        if group_set.len() < 2 {
            return Err(CohortError::TooFewGroups(group_set.len()));
        }
        let mut seen = BTreeSet::new();
        for g in &group_set {
            if !seen.insert(g) {
                return Err(CohortError::DuplicateGroup(g.clone()));
            }
        }
        if records.is_empty() {
            return Err(CohortError::Empty);
        }
        let position: BTreeMap<&GroupLabel, usize> =
            group_set.iter().enumerate().map(|(i, g)| (g, i)).collect();
        let mut ids = BTreeSet::new();
        let mut counts = alloc::vec![0usize; group_set.len()];
        let mut group_index = Vec::with_capacity(records.len());
        for (row, rec) in records.iter().enumerate() {
            let gi = *position
                .get(&rec.group)
                .ok_or_else(|| CohortError::UnknownGroup {
                    row,
                    group: rec.group.to_string(),
                })?;
            if !ids.insert(rec.id.as_str()) {
                return Err(CohortError::DuplicateId {
                    row,
                    id: rec.id.clone(),
                });
            }
            rec.check_domain(row)?;
            counts[gi] += 1;
            group_index.push(gi);
        }
        if let Some(gi) = counts.iter().position(|&c| c == 0) {
            return Err(CohortError::EmptyGroup(group_set[gi].clone()));
        }
        Ok(Self {
            records,
            group_set,
            group_index,
        })
    }

    pub fn records(&self) -> &[PatientRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<PatientRecord> {
        self.records
    }

    pub fn group_set(&self) -> &[GroupLabel] {
        &self.group_set
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Position of each record's group in [`Cohort::group_set`].
    pub fn group_indices(&self) -> &[usize] {
        &self.group_index
    }

    pub fn group_position(&self, group: &GroupLabel) -> Option<usize> {
        self.group_set.iter().position(|g| g == group)
    }

    /// Record count per group, in group-set order. Every count is at least one.
    pub fn group_counts(&self) -> Vec<(GroupLabel, usize)> {
        let mut counts = alloc::vec![0usize; self.group_set.len()];
        for &gi in &self.group_index {
            counts[gi] += 1;
        }
        self.group_set.iter().cloned().zip(counts).collect()
    }

    /// Record indices belonging to each group, in group-set order.
    pub fn members_by_group(&self) -> Vec<Vec<usize>> {
        let mut members = alloc::vec![Vec::new(); self.group_set.len()];
        for (i, &gi) in self.group_index.iter().enumerate() {
            members[gi].push(i);
        }
        members
    }

    pub fn measure(&self, m: Measure) -> Vec<f64> {
        self.records.iter().map(|r| m.of(r)).collect()
    }

    /// Values of a named confounder for every record, or the first row lacking it.
    pub fn confounder_column(&self, name: &str) -> Result<Vec<f64>, usize> {
        self.records
            .iter()
            .enumerate()
            .map(|(row, r)| r.confounder(name).ok_or(row))
            .collect()
    }

    /// Keeps the records at `indices` (in that order) under the same group set.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, CohortError> {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        Self::new(records, self.group_set.clone())
    }
}

/// `(min, epsilon)` affine shift that makes a column strictly positive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositiveShift {
    pub min: f64,
    pub epsilon: f64,
}

impl PositiveShift {
    /// Shift whose epsilon is `fraction` of the column range (or of
    /// `max(|min|, 1)` for a constant column).
    pub fn for_column(values: &[f64], fraction: f64) -> Result<Self, CohortError> {
        let (lo, hi) = crate::stats::min_max(values).ok_or(CohortError::EmptyInput)?;
        let range = hi - lo;
        let scale = if range > 0.0 {
            range
        } else {
            lo.abs().max(1.0)
        };
        let epsilon = fraction * scale;
        if !(epsilon > 0.0) {
            return Err(CohortError::InvalidEpsilon(epsilon));
        }
        Ok(Self { min: lo, epsilon })
    }

    pub fn apply(&self, v: f64) -> f64 {
        v - self.min + self.epsilon
    }
}

/// `values[i] - min(values) + epsilon`: rank preserving, minimum exactly `epsilon`.
pub fn shift_to_positive(values: &[f64], epsilon: f64) -> Result<Vec<f64>, CohortError> {
    if !(epsilon > 0.0) {
        return Err(CohortError::InvalidEpsilon(epsilon));
    }
    let (min, _) = crate::stats::min_max(values).ok_or(CohortError::EmptyInput)?;
    let shift = PositiveShift { min, epsilon };
    Ok(values.iter().map(|&v| shift.apply(v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;

    fn rec(id: &str, group: &str, x1: f64, x2: f64, y1: f64) -> PatientRecord {
        PatientRecord {
            id: id.into(),
            group: group.into(),
            x1,
            x2,
            y1,
            confounders: BTreeMap::new(),
        }
    }

    fn four() -> Vec<PatientRecord> {
        vec![
            rec("a", "Asian", 100.0, 0.4, 2000.0),
            rec("b", "Black", 200.0, 0.5, 1500.0),
            rec("h", "Hispanic", 300.0, 0.3, 1800.0),
            rec("w", "White", 150.0, 0.2, 2500.0),
        ]
    }

    #[test]
    fn one_record_per_group() {
        let c = Cohort::new(four(), default_groups()).unwrap();
        assert_eq!(c.len(), 4);
        assert_eq!(c.group_set().len(), 4);
        assert!(c.group_counts().iter().all(|(_, n)| *n == 1));
    }

    #[test]
    fn kdpi_above_one_is_a_domain_violation() {
        let mut rs = four();
        rs[2].x2 = 1.2;
        let err = Cohort::new(rs, default_groups()).unwrap_err();
        assert_eq!(
            err,
            CohortError::DomainViolation {
                row: 2,
                column: "x2".into(),
                value: 1.2
            }
        );
    }

    #[test]
    fn nonpositive_durations_rejected() {
        let mut rs = four();
        rs[0].x1 = 0.0;
        assert!(matches!(
            Cohort::new(rs, default_groups()),
            Err(CohortError::DomainViolation { row: 0, .. })
        ));
        let mut rs = four();
        rs[3].y1 = -5.0;
        assert!(matches!(
            Cohort::new(rs, default_groups()),
            Err(CohortError::DomainViolation { row: 3, .. })
        ));
    }

    #[test]
    fn duplicate_ids_and_unknown_groups() {
        let mut rs = four();
        rs[1].id = "a".into();
        assert!(matches!(
            Cohort::new(rs, default_groups()),
            Err(CohortError::DuplicateId { row: 1, .. })
        ));
        let mut rs = four();
        rs[1].group = "Martian".into();
        assert!(matches!(
            Cohort::new(rs, default_groups()),
            Err(CohortError::UnknownGroup { row: 1, .. })
        ));
    }

    #[test]
    fn every_declared_group_needs_a_record() {
        let rs = four()[..3].to_vec();
        assert_eq!(
            Cohort::new(rs, default_groups()).unwrap_err(),
            CohortError::EmptyGroup("White".into())
        );
        assert_eq!(
            Cohort::new(four(), vec!["Asian".into()]).unwrap_err(),
            CohortError::TooFewGroups(1)
        );
    }

    #[test]
    fn shift_examples() {
        assert_eq!(
            shift_to_positive(&[-2.0, 0.0, 3.0], 1.0).unwrap(),
            vec![1.0, 3.0, 6.0]
        );
        assert_eq!(
            shift_to_positive(&[5.0, 5.0, 5.0], 0.5).unwrap(),
            vec![0.5, 0.5, 0.5]
        );
        assert_eq!(shift_to_positive(&[], 1.0), Err(CohortError::EmptyInput));
        assert!(shift_to_positive(&[1.0], 0.0).is_err());
    }

    #[test]
    fn default_epsilon_is_fraction_of_range() {
        let s = PositiveShift::for_column(&[-4.0, 6.0], 1e-3).unwrap();
        assert_eq!(s.min, -4.0);
        assert!((s.epsilon - 1e-2).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn shift_preserves_rank_and_floors_at_epsilon(
            values in prop::collection::vec(-1e6f64..1e6, 1..64),
            eps in 1e-6f64..10.0,
        ) {
            let out = shift_to_positive(&values, eps).unwrap();
            let min = out.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(min, eps);
            for i in 0..values.len() {
                for j in 0..values.len() {
                    if values[i] < values[j] {
                        prop_assert!(out[i] <= out[j]);
                    }
                }
            }
        }

        #[test]
        fn group_counts_sum_to_size(groups in prop::collection::vec(0usize..4, 4..80)) {
            let labels = default_groups();
            let mut recs: Vec<PatientRecord> = groups
                .iter()
                .enumerate()
                .map(|(i, &g)| rec(&format!("p{i}"), labels[g].as_str(), 1.0, 0.5, 1.0))
                .collect();
            for (g, label) in labels.iter().enumerate() {
                recs.push(rec(&format!("seed{g}"), label.as_str(), 1.0, 0.5, 1.0));
            }
            let c = Cohort::new(recs, labels).unwrap();
            let total: usize = c.group_counts().iter().map(|(_, n)| n).sum();
            prop_assert_eq!(total, c.len());
        }
    }
}
