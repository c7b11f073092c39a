//! Group-stratified fold assignment shared by cross-fitting stages.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::seed::{derive_indexed, rng_from_seed};

/// Assigns each record to one of `k` folds. Members of each group are
/// shuffled with sub-seed `derive_indexed(seed, g)`, groups are laid end to
/// end, and the sequence is dealt round-robin. Fold sizes differ by at most
/// one overall and within every group.
///
/// `groups[i]` is the group index of record `i`, below `n_groups`.
pub fn stratified_folds(groups: &[usize], n_groups: usize, k: usize, seed: u64) -> Vec<usize> {
    assert!(k >= 1, "need at least one fold");
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_groups];
    for (i, &g) in groups.iter().enumerate() {
        members[g].push(i);
    }
    let mut folds = vec![0; groups.len()];
    let mut next = 0;
    for (g, list) in members.iter_mut().enumerate() {
        let mut rng = rng_from_seed(derive_indexed(seed, g as u64));
        list.shuffle(&mut rng);
        for &i in list.iter() {
            folds[i] = next % k;
            next += 1;
        }
    }
    folds
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn balanced_overall_and_within_groups(
            groups in proptest::collection::vec(0usize..4, 1..200),
            k in 2usize..11,
            seed in any::<u64>(),
        ) {
            let folds = stratified_folds(&groups, 4, k, seed);
            prop_assert_eq!(folds.len(), groups.len());
            let spread = |f: &dyn Fn(usize) -> bool| {
                let mut counts = vec![0usize; k];
                for (i, &fold) in folds.iter().enumerate() {
                    if f(i) {
                        counts[fold] += 1;
                    }
                }
                counts.iter().max().unwrap() - counts.iter().min().unwrap()
            };
            prop_assert!(spread(&|_| true) <= 1);
            for g in 0..4 {
                prop_assert!(spread(&|i| groups[i] == g) <= 1);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let groups: Vec<usize> = (0..50).map(|i| i % 3).collect();
        assert_eq!(
            stratified_folds(&groups, 3, 5, 9),
            stratified_folds(&groups, 3, 5, 9)
        );
        assert_ne!(
            stratified_folds(&groups, 3, 5, 9),
            stratified_folds(&groups, 3, 5, 10)
        );
    }
}
