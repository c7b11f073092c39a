use std::collections::BTreeMap;

use fairdea_core::cohort::{Cohort, GroupLabel, Measure, PatientRecord};
use fairdea_core::debias::crossfit_debias;

/// Eight records, two groups, no confounders. The outcome model reduces to
/// training-fold group means and the propensity to the training-fold group
/// share, both computable by hand.
#[test]
fn two_fold_hand_instance() {
    let groups: Vec<GroupLabel> = vec!["A".into(), "B".into()];
    let z = [3.0, 5.0, 4.0, 8.0, 10.0, 2.0, 6.0, 7.0];
    let g = [0, 0, 0, 0, 0, 1, 1, 1];
    let records: Vec<PatientRecord> = (0..8)
        .map(|i| PatientRecord {
            id: format!("r{i}"),
            group: groups[g[i]].clone(),
            x1: z[i],
            x2: 0.5,
            y1: 1.0,
            confounders: BTreeMap::new(),
        })
        .collect();
    let cohort = Cohort::new(records, groups).unwrap();
    let r = crossfit_debias(&cohort, Measure::X1, &[], 2, 17).unwrap();

    for i in 0..8 {
        let train: Vec<usize> = (0..8)
            .filter(|&j| r.fold_assignment[j] != r.fold_assignment[i])
            .collect();
        let same: Vec<usize> = train.iter().copied().filter(|&j| g[j] == g[i]).collect();
        let mu = same.iter().map(|&j| z[j]).sum::<f64>() / same.len() as f64;
        let share = same.len() as f64 / train.len() as f64;
        let want = (1.0 - share) * (z[i] - mu);
        assert!(
            (r.adjusted[i] - want).abs() < 1e-6,
            "record {i}: {} vs {want}",
            r.adjusted[i]
        );
    }
}
