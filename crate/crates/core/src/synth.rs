//! Synthetic cohorts matched to published per-group moments.
//!
//! Durations (waitlist, graft lifespan) are drawn from gamma distributions and
//! KDPI from a beta distribution, each matched to a target mean and standard
//! deviation. The three measures are independent within a patient unless a
//! Gaussian-copula correlation is requested, in which case the independent
//! marginal draws are reordered to follow the ranks of correlated normals
//! (marginal samples are left untouched).
//!
//! Every record also carries a fixed set of confounder columns, drawn
//! independently of group and measures, so that the debiasing and mediation
//! stages have something to condition on.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Bernoulli, Beta, Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Cohort, CohortError, GroupLabel, PatientRecord};
use crate::linalg::{Cholesky, Matrix};
use crate::seed::{derive_indexed, rng_from_seed, StageRng};

/// KDPI draws are clipped into `[KDPI_FLOOR, 1]`.
pub const KDPI_FLOOR: f64 = 0.001;

/// Confounder columns attached to every synthetic record.
pub const CONFOUNDER_COLUMNS: [&str; 11] = [
    "age",
    "male",
    "pra",
    "blood_a",
    "blood_b",
    "blood_ab",
    "dialysis",
    "donor_age",
    "hla_mismatch",
    "cold_ischemia",
    "prior_transplant",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error(
        "group {group}: KDPI sd {sd} is infeasible for mean {mean} (need sd² < mean·(1 - mean))"
    )]
    InfeasibleMoments {
        group: GroupLabel,
        mean: f64,
        sd: f64,
    },
    #[error("group {group}: {reason}")]
    InvalidSpec { group: GroupLabel, reason: String },
    #[error("correlation matrix must be symmetric with unit diagonal and positive definite")]
    InvalidCorrelation,
    #[error(transparent)]
    Cohort(#[from] CohortError),
}

/// Target count and first two moments of each measure for one group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMomentSpec {
    pub group: GroupLabel,
    pub count: usize,
    pub x1_mean: f64,
    pub x1_sd: f64,
    pub x2_mean: f64,
    pub x2_sd: f64,
    pub y1_mean: f64,
    pub y1_sd: f64,
}

/// Per-group moments of the 2011–2021 kidney-exchange registry extract, with
/// counts set to the post-resampling group sizes (818 / 1,691 / 2,553 / 8,403).
pub fn default_registry_spec() -> Vec<GroupMomentSpec> {
    let row = |g: &str, count, x1: (f64, f64), x2: (f64, f64), y1: (f64, f64)| GroupMomentSpec {
        group: GroupLabel::from(g),
        count,
        x1_mean: x1.0,
        x1_sd: x1.1,
        x2_mean: x2.0,
        x2_sd: x2.1,
        y1_mean: y1.0,
        y1_sd: y1.1,
    };
    alloc::vec![
        row(
            "Asian",
            818,
            (1441.0, 959.0),
            (0.452, 0.267),
            (2065.0, 1010.0)
        ),
        row(
            "Black",
            1691,
            (1348.0, 882.0),
            (0.416, 0.258),
            (1970.0, 985.0)
        ),
        row(
            "Hispanic",
            2553,
            (1353.0, 929.0),
            (0.390, 0.265),
            (1976.0, 979.0)
        ),
        row(
            "White",
            8403,
            (1139.0, 828.0),
            (0.396, 0.259),
            (2120.0, 971.0)
        ),
    ]
}

/// Optional generator knobs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    /// Gaussian-copula correlation among (x1, x2, y1); `None` draws them independently.
    #[serde(default)]
    pub correlation: Option<[[f64; 3]; 3]>,
}

enum Marginal {
    Constant(f64),
    Gamma(Gamma<f64>),
    Beta(Beta<f64>),
}

impl Marginal {
    fn gamma(group: &GroupLabel, what: &str, mean: f64, sd: f64) -> Result<Self, SynthError> {
        check_moments(group, what, mean, sd)?;
        if sd == 0.0 {
            return Ok(Self::Constant(mean));
        }
        let shape = (mean / sd) * (mean / sd);
        let scale = sd * sd / mean;
        Gamma::new(shape, scale)
            .map(Self::Gamma)
            .map_err(|e| invalid(group, format!("{what}: {e}")))
    }

    fn beta(group: &GroupLabel, mean: f64, sd: f64) -> Result<Self, SynthError> {
        check_moments(group, "x2", mean, sd)?;
        if !(mean < 1.0) {
            return Err(invalid(group, format!("x2 mean {mean} must lie in (0, 1)")));
        }
        if sd == 0.0 {
            return Ok(Self::Constant(mean));
        }
        let spread = mean * (1.0 - mean);
        if !(sd * sd < spread) {
            return Err(SynthError::InfeasibleMoments {
                group: group.clone(),
                mean,
                sd,
            });
        }
        let nu = spread / (sd * sd) - 1.0;
        Beta::new(mean * nu, (1.0 - mean) * nu)
            .map(Self::Beta)
            .map_err(|e| invalid(group, format!("x2: {e}")))
    }

    fn draw(&self, rng: &mut StageRng) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Gamma(d) => d.sample(rng),
            Self::Beta(d) => d.sample(rng),
        }
    }
}

fn invalid(group: &GroupLabel, reason: String) -> SynthError {
    SynthError::InvalidSpec {
        group: group.clone(),
        reason,
    }
}

fn check_moments(group: &GroupLabel, what: &str, mean: f64, sd: f64) -> Result<(), SynthError> {
    if !(mean > 0.0) || !mean.is_finite() {
        return Err(invalid(
            group,
            format!("{what} mean {mean} must be positive"),
        ));
    }
    if !(sd >= 0.0) || !sd.is_finite() {
        return Err(invalid(
            group,
            format!("{what} sd {sd} must be non-negative"),
        ));
    }
    Ok(())
}

pub fn generate(spec: &[GroupMomentSpec], seed: u64) -> Result<Cohort, SynthError> {
    generate_with(spec, seed, &SynthOptions::default())
}

/// Draws a cohort with `spec[g].count` records per group. Group `g` uses the
/// sub-seed `derive_indexed(seed, g)`, so groups are independent streams.
pub fn generate_with(
    spec: &[GroupMomentSpec],
    seed: u64,
    options: &SynthOptions,
) -> Result<Cohort, SynthError> {
    let copula = match &options.correlation {
        Some(c) => Some(copula_factor(c)?),
        None => None,
    };
    let mut records = Vec::with_capacity(spec.iter().map(|s| s.count).sum());
    for (gi, s) in spec.iter().enumerate() {
        if s.count == 0 {
            return Err(invalid(&s.group, "count must be at least 1".into()));
        }
        let x1 = Marginal::gamma(&s.group, "x1", s.x1_mean, s.x1_sd)?;
        let x2 = Marginal::beta(&s.group, s.x2_mean, s.x2_sd)?;
        let y1 = Marginal::gamma(&s.group, "y1", s.y1_mean, s.y1_sd)?;

        let mut rng = rng_from_seed(derive_indexed(seed, gi as u64));
        let mut cols: [Vec<f64>; 3] = [
            (0..s.count).map(|_| x1.draw(&mut rng)).collect(),
            (0..s.count)
                .map(|_| x2.draw(&mut rng).clamp(KDPI_FLOOR, 1.0))
                .collect(),
            (0..s.count).map(|_| y1.draw(&mut rng)).collect(),
        ];
        if let Some(factor) = &copula {
            impose_rank_correlation(&mut cols, factor, &mut rng);
        }
        for i in 0..s.count {
            let id = format!("{}-{:06}", s.group.as_str(), i + 1);
            records.push(PatientRecord {
                id,
                group: s.group.clone(),
                x1: cols[0][i],
                x2: cols[1][i],
                y1: cols[2][i],
                confounders: draw_confounders(&mut rng),
            });
        }
    }
    let groups = spec.iter().map(|s| s.group.clone()).collect();
    Ok(Cohort::new(records, groups)?)
}

fn copula_factor(c: &[[f64; 3]; 3]) -> Result<Cholesky, SynthError> {
    for i in 0..3 {
        if (c[i][i] - 1.0).abs() > 1e-12 {
            return Err(SynthError::InvalidCorrelation);
        }
        for j in 0..3 {
            if (c[i][j] - c[j][i]).abs() > 1e-12 || c[i][j].abs() > 1.0 {
                return Err(SynthError::InvalidCorrelation);
            }
        }
    }
    let m = Matrix::from_rows(&c.iter().map(|r| r.to_vec()).collect::<Vec<_>>());
    Cholesky::new(&m).ok_or(SynthError::InvalidCorrelation)
}

/// Reorders each column so its ranks follow the matching coordinate of
/// correlated standard normals.
fn impose_rank_correlation(cols: &mut [Vec<f64>; 3], factor: &Cholesky, rng: &mut StageRng) {
    let n = cols[0].len();
    // z = L·e for iid normals e, where L·Lᵀ is the target correlation.
    let mut z = [
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    ];
    for _ in 0..n {
        let e: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        for (k, zk) in z.iter_mut().enumerate() {
            zk.push((0..=k).map(|j| factor.lower(k, j) * e[j]).sum::<f64>());
        }
    }
    for (col, zk) in cols.iter_mut().zip(z.iter()) {
        let mut sorted = col.clone();
        crate::stats::sort_floats(&mut sorted);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| zk[a].total_cmp(&zk[b]));
        for (rank, &i) in order.iter().enumerate() {
            col[i] = sorted[rank];
        }
    }
}

fn draw_confounders(rng: &mut StageRng) -> BTreeMap<String, f64> {
    let age = Normal::new(50.0, 13.0).expect("valid normal");
    let donor_age = Normal::new(40.0, 12.0).expect("valid normal");
    let pra = Beta::new(0.5, 2.0).expect("valid beta");
    let cold = Gamma::new(4.0, 4.0).expect("valid gamma");
    let male = Bernoulli::new(0.6).expect("valid p");
    let dialysis = Bernoulli::new(0.8).expect("valid p");
    let prior = Bernoulli::new(0.12).expect("valid p");

    let blood: f64 = rng.random();
    // O 0.45, A 0.40, B 0.11, AB 0.04
    let (a, b, ab) = if blood < 0.45 {
        (0.0, 0.0, 0.0)
    } else if blood < 0.85 {
        (1.0, 0.0, 0.0)
    } else if blood < 0.96 {
        (0.0, 1.0, 0.0)
    } else {
        (0.0, 0.0, 1.0)
    };
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let values = [
        Distribution::<f64>::sample(&age, rng).clamp(18.0, 85.0),
        flag(male.sample(rng)),
        100.0 * pra.sample(rng),
        a,
        b,
        ab,
        flag(dialysis.sample(rng)),
        Distribution::<f64>::sample(&donor_age, rng).clamp(5.0, 80.0),
        f64::from(rng.random_range(0u8..=6)),
        cold.sample(rng),
        flag(prior.sample(rng)),
    ];
    CONFOUNDER_COLUMNS
        .iter()
        .zip(values)
        .map(|(k, v)| (String::from(*k), v))
        .collect()
}
