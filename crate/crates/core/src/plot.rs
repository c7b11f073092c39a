//! Per-group histograms of efficiency scores.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cohort::GroupLabel;

pub const DEFAULT_BINS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub group: GroupLabel,
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Share of the group's scores in this bin; sums to 1 over a group.
    pub density: f64,
}

/// Equal-width bins over `[0, 1]`, the last bin closed so `θ = 1` lands in it.
/// Values outside the range are clamped into the end bins.
pub fn efficiency_histogram(
    thetas: &[f64],
    groups: &[usize],
    labels: &[GroupLabel],
    bins: usize,
) -> Vec<HistogramBin> {
    assert!(bins >= 1, "need at least one bin");
    let mut counts = vec![vec![0usize; bins]; labels.len()];
    for (&t, &g) in thetas.iter().zip(groups) {
        let b = libm::floor(t.clamp(0.0, 1.0) * bins as f64) as usize;
        counts[g][b.min(bins - 1)] += 1;
    }
    let mut out = Vec::with_capacity(bins * labels.len());
    for (g, label) in labels.iter().enumerate() {
        let total: usize = counts[g].iter().sum();
        for (b, &count) in counts[g].iter().enumerate() {
            out.push(HistogramBin {
                group: label.clone(),
                bin: b,
                lower: b as f64 / bins as f64,
                upper: (b + 1) as f64 / bins as f64,
                count,
                density: if total > 0 {
                    count as f64 / total as f64
                } else {
                    0.0
                },
            });
        }
    }
    out
}
