//! End-to-end acceptance checks. Each check prints one PASS or FAIL line; the
//! process exits non-zero if any check fails.

#[path = "../../core/tests/support/dea_oracle.rs"]
mod dea_oracle;

use std::collections::BTreeMap;
use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use dea_oracle::oracle_theta;
use fairdea::PipelineConfig;
use fairdea_core::cohort::default_groups;
use fairdea_core::conformal::{crossfit_intervals, CrossfitSettings};
use fairdea_core::dea::{efficiency_all, DeaInstance, DeaSettings};
use fairdea_core::debias::crossfit_debias;
use fairdea_core::linalg::Matrix;
use fairdea_core::mediation::{bootstrap_ci, MediationSpec};
use fairdea_core::mmd::{
    bandwidth_or_fallback, mmd2, pairwise_tests, permutation_test, PermutationSettings,
};
use fairdea_core::resample::{resample, ProportionTarget};
use fairdea_core::seed::{derive_indexed, rng_from_seed, StageRng};
use fairdea_core::synth::{default_registry_spec, generate};
use fairdea_core::{Cohort, GroupLabel, Measure, PatientRecord};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

type Check = fn() -> Outcome;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn scores(inputs: &[Vec<f64>], outputs: &[f64]) -> Vec<f64> {
    let ys: Vec<Vec<f64>> = outputs.iter().map(|y| vec![*y]).collect();
    let ids = (0..inputs.len()).map(|i| format!("u{i}")).collect();
    let inst = DeaInstance::from_rows(inputs, &ys, ids).unwrap();
    efficiency_all(&inst, &DeaSettings::default())
        .into_iter()
        .map(|s| s.unwrap().theta)
        .collect()
}

/// DEA scores of a cohort with inputs (x1, x2) and output y1.
fn cohort_scores(c: &Cohort) -> Vec<f64> {
    let r = c.records();
    let n = r.len();
    let x = Matrix::from_fn(n, 2, |i, j| if j == 0 { r[i].x1 } else { r[i].x2 });
    let y = Matrix::from_fn(n, 1, |i, _| r[i].y1);
    let inst = DeaInstance::new(x, y, r.iter().map(|r| r.id.clone()).collect()).unwrap();
    efficiency_all(&inst, &DeaSettings::default())
        .into_iter()
        .map(|s| s.unwrap().theta)
        .collect()
}

fn group_means(c: &Cohort, values: &[f64]) -> Vec<f64> {
    c.members_by_group()
        .iter()
        .map(|m| m.iter().map(|&i| values[i]).sum::<f64>() / m.len() as f64)
        .collect()
}

fn random_instance(rng: &mut StageRng, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let inputs = (0..n)
        .map(|_| vec![rng.random_range(1.0..10.0), rng.random_range(1.0..10.0)])
        .collect();
    let outputs = (0..n).map(|_| rng.random_range(1.0..10.0)).collect();
    (inputs, outputs)
}

fn dea_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from_seed(101);
    let mut worst = 0.0f64;
    let mut units = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..=15);
        let (inputs, outputs) = random_instance(&mut rng, n);
        for (i, t) in scores(&inputs, &outputs).into_iter().enumerate() {
            worst = worst.max((t - oracle_theta(&inputs, &outputs, i)).abs());
            units += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-3 && secs < 60.0,
        format!("200 instances, {units} units, max |Δθ| = {worst:.2e}, {secs:.1}s"),
    )
}

fn dea_hand_instances() -> Outcome {
    let two = scores(&[vec![1.0], vec![2.0]], &[1.0, 0.5]);
    let three = scores(&[vec![1.0], vec![3.0], vec![2.0]], &[1.0, 3.0, 1.0]);
    let want_two = [1.0, 0.5];
    let want_three = [1.0, 1.0, std::f64::consts::FRAC_1_SQRT_2];
    let err = two
        .iter()
        .zip(want_two)
        .chain(three.iter().zip(want_three))
        .map(|(g, w)| (g - w).abs())
        .fold(0.0f64, f64::max);
    outcome(
        err <= 1e-5,
        format!("θ = {two:.6?} and {three:.6?}, max error {err:.2e}"),
    )
}

fn dea_properties() -> Outcome {
    const TOL: f64 = 1e-6;
    let mut rng = rng_from_seed(103);
    let mut failures = BTreeMap::new();
    let mut fail = |name: &'static str| *failures.entry(name).or_insert(0) += 1;
    for _ in 0..100 {
        let n = rng.random_range(1..=15);
        let (inputs, outputs) = random_instance(&mut rng, n);
        if !scores(&inputs, &outputs)
            .iter()
            .all(|&t| t > 0.0 && t <= 1.0)
        {
            fail("range");
        }
    }
    for _ in 0..100 {
        let n = rng.random_range(1..=12);
        let (mut inputs, mut outputs) = random_instance(&mut rng, n);
        let k = rng.random_range(0..n);
        let (a, b, c) = (
            rng.random_range(1.0..3.0),
            rng.random_range(1.0..3.0),
            rng.random_range(0.2..1.0),
        );
        inputs.push(vec![inputs[k][0] * a, inputs[k][1] * b]);
        outputs.push(outputs[k] * c);
        let t = scores(&inputs, &outputs);
        if t[n] > t[k] + TOL {
            fail("dominance");
        }
    }
    for _ in 0..100 {
        let n = rng.random_range(1..=12);
        let (inputs, outputs) = random_instance(&mut rng, n);
        let c = rng.random_range(0.01..100.0);
        let column = rng.random_range(0..3);
        let mut si = inputs.clone();
        let mut so = outputs.clone();
        match column {
            2 => so.iter_mut().for_each(|y| *y *= c),
            j => si.iter_mut().for_each(|x| x[j] *= c),
        }
        let before = scores(&inputs, &outputs);
        let after = scores(&si, &so);
        if before.iter().zip(&after).any(|(x, y)| (x - y).abs() > TOL) {
            fail("units invariance");
        }
    }
    for _ in 0..100 {
        let n = rng.random_range(1..=12);
        let (mut inputs, mut outputs) = random_instance(&mut rng, n);
        let before = scores(&inputs, &outputs);
        let k = rng.random_range(0..n);
        inputs.push(inputs[k].clone());
        outputs.push(outputs[k]);
        let after = scores(&inputs, &outputs);
        let moved = before.iter().zip(&after).any(|(x, y)| (x - y).abs() > TOL);
        if moved || (after[n] - before[k]).abs() > TOL {
            fail("duplicate stability");
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "range, dominance, units invariance, duplicate stability: 100 instances each".into()
        } else {
            format!("failing instances: {failures:?}")
        },
    )
}

fn conformal_coverage() -> Outcome {
    let start = Instant::now();
    let labels = default_groups();
    let mut spec = default_registry_spec();
    for s in &mut spec {
        s.count = 100;
    }
    let settings = CrossfitSettings::default();
    let seeds = 100;
    let mut covered = vec![0usize; labels.len()];
    let mut total = vec![0usize; labels.len()];
    for seed in 0..seeds {
        let cohort = generate(&spec, derive_indexed(104, seed)).unwrap();
        let thetas = cohort_scores(&cohort);
        let groups = cohort.group_indices();
        let r = crossfit_intervals(
            &thetas,
            groups,
            &labels,
            &settings,
            derive_indexed(1104, seed),
        )
        .unwrap();
        for (&g, &c) in groups.iter().zip(&r.covered) {
            total[g] += 1;
            covered[g] += usize::from(c);
        }
    }
    let rates: Vec<f64> = covered
        .iter()
        .zip(&total)
        .map(|(&c, &t)| c as f64 / t as f64)
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let pass = rates.iter().all(|r| (0.94..=0.96).contains(r)) && secs < 300.0;
    let shown: Vec<String> = labels
        .iter()
        .zip(&rates)
        .map(|(l, r)| format!("{l} {r:.4}"))
        .collect();
    outcome(
        pass,
        format!(
            "{} units over {seeds} seeds, coverage {}, {secs:.1}s",
            total.iter().sum::<usize>(),
            shown.join(", ")
        ),
    )
}

fn resampling_bias() -> Outcome {
    let start = Instant::now();
    let mut spec = default_registry_spec();
    for (s, n) in spec.iter_mut().zip([1220, 2520, 3800, 12460]) {
        s.count = n;
    }
    let pool = generate(&spec, 105).unwrap();
    let truth = group_means(&pool, &cohort_scores(&pool));
    let members = pool.members_by_group();
    let census = ProportionTarget::census_2020();
    // Minority groups over-represented, the majority under-represented.
    let draw = [400, 400, 400, 800];
    let reps = 200;
    let mut imbalanced = [0.0; 4];
    let mut balanced = [0.0; 4];
    for rep in 0..reps {
        let mut rng = rng_from_seed(derive_indexed(105, rep));
        let mut idx = Vec::new();
        for (m, &k) in members.iter().zip(&draw) {
            let mut m = m.clone();
            m.shuffle(&mut rng);
            idx.extend_from_slice(&m[..k]);
        }
        idx.sort_unstable();
        let data = pool.subset(&idx).unwrap();
        let resampled = resample(&data, &census, derive_indexed(1105, rep)).unwrap();
        // Same size as the resampled set, original proportions.
        let mut keep: Vec<usize> = (0..data.len()).collect();
        keep.shuffle(&mut rng);
        keep.truncate(resampled.len());
        keep.sort_unstable();
        let subsample = data.subset(&keep).unwrap();
        for (acc, m) in imbalanced
            .iter_mut()
            .zip(group_means(&subsample, &cohort_scores(&subsample)))
        {
            *acc += m / reps as f64;
        }
        for (acc, m) in balanced
            .iter_mut()
            .zip(group_means(&resampled, &cohort_scores(&resampled)))
        {
            *acc += m / reps as f64;
        }
    }
    let mut pass = true;
    let mut shown = Vec::new();
    for (g, label) in default_groups().iter().enumerate() {
        let bi = (imbalanced[g] - truth[g]).abs();
        let br = (balanced[g] - truth[g]).abs();
        pass &= br <= bi + 0.01;
        shown.push(format!("{label} {br:.4} vs {bi:.4}"));
    }
    outcome(
        pass,
        format!(
            "|bias| resampled vs imbalanced over {reps} reps: {}, {:.1}s",
            shown.join(", "),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn normal_sample(rng: &mut StageRng, n: usize, mean: f64) -> Vec<f64> {
    let d = Normal::new(mean, 1.0).unwrap();
    (0..n).map(|_| d.sample(rng)).collect()
}

fn mmd_calibration_and_power() -> Outcome {
    let start = Instant::now();
    let reps = 500;
    let n = 50;
    let null_settings = PermutationSettings {
        iters: 199,
        ..PermutationSettings::default()
    };
    let mut rejections = 0;
    for rep in 0..reps {
        let mut rng = rng_from_seed(derive_indexed(106, rep));
        let a = normal_sample(&mut rng, n, 0.0);
        let b = normal_sample(&mut rng, n, 0.0);
        let mut pooled = a.clone();
        pooled.extend_from_slice(&b);
        let (sigma, _) = bandwidth_or_fallback(&pooled).unwrap();
        let p = permutation_test(&a, &b, sigma, &null_settings, derive_indexed(1106, rep))
            .unwrap()
            .p_value;
        rejections += usize::from(p <= 0.05);
    }
    let size = rejections as f64 / reps as f64;

    let power_settings = PermutationSettings::default();
    let mut detected = 0;
    for rep in 0..reps {
        let mut rng = rng_from_seed(derive_indexed(206, rep));
        let groups: Vec<(GroupLabel, Vec<f64>)> = default_groups()
            .into_iter()
            .enumerate()
            .map(|(g, l)| {
                (
                    l,
                    normal_sample(&mut rng, n, if g == 0 { 3.0 } else { 0.0 }),
                )
            })
            .collect();
        let tests =
            pairwise_tests(&groups, 0.05, &power_settings, derive_indexed(1206, rep)).unwrap();
        let shifted = tests.iter().filter(|t| t.group_a == groups[0].0);
        if shifted.clone().count() == 3 && shifted.clone().all(|t| t.p_value < 0.05 / 6.0) {
            detected += 1;
        }
    }
    let power = detected as f64 / reps as f64;
    outcome(
        (size - 0.05).abs() <= 0.02 && power >= 0.95,
        format!(
            "null rejection rate {size:.3}, 3σ shift detected in {power:.3} of {reps} reps, {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn mmd_closed_form() -> Outcome {
    let v = mmd2(&[0.0], &[1.0], 1.0).unwrap();
    let want = 2.0 - 2.0 * (-0.5f64).exp();
    let mut rng = rng_from_seed(107);
    let a = normal_sample(&mut rng, 200, 0.0);
    let same = mmd2(&a, &a, 1.3).unwrap();
    outcome(
        (v - want).abs() <= 1e-10 && same == 0.0,
        format!(
            "mmd2({{0}},{{1}}) error {:.1e}, mmd2(A, A) = {same}",
            (v - want).abs()
        ),
    )
}

struct PlantedTruth {
    direct: [f64; 3],
    indirect: [f64; 3],
}

/// Outcome `x1 = 1000 + β_g + τ·mediators + covariates + noise`, mediators
/// depending on group only. Groups follow `default_groups` with White last as
/// the reference.
fn planted_mediation(n_per: usize, rng: &mut StageRng) -> (Cohort, PlantedTruth) {
    let beta = [300.0, 190.0, 220.0, 0.0];
    let blood = [
        [0.27, 0.25, 0.07],
        [0.26, 0.19, 0.04],
        [0.31, 0.10, 0.03],
        [0.40, 0.11, 0.04],
    ];
    let dialysis = [0.85, 0.90, 0.80, 0.70];
    let pra = [18.0, 22.0, 20.0, 15.0];
    let tau = [10.0, -5.0, 3.0, 100.0, 1.0];
    let std = Normal::new(0.0, 1.0).unwrap();
    let mut records = Vec::new();
    for (g, label) in default_groups().into_iter().enumerate() {
        for i in 0..n_per {
            let u: f64 = rng.random();
            let (a, b, ab) = (
                u < blood[g][0],
                (blood[g][0]..blood[g][0] + blood[g][1]).contains(&u),
                (blood[g][0] + blood[g][1]..blood[g][0] + blood[g][1] + blood[g][2]).contains(&u),
            );
            let d = rng.random::<f64>() < dialysis[g];
            let p = pra[g] + 10.0 * std.sample(rng);
            let age = 50.0 + 12.0 * std.sample(rng);
            let male = rng.random::<f64>() < 0.6;
            let flag = |v: bool| f64::from(u8::from(v));
            let x1 = 1000.0
                + beta[g]
                + tau[0] * flag(a)
                + tau[1] * flag(b)
                + tau[2] * flag(ab)
                + tau[3] * flag(d)
                + tau[4] * p
                + 2.0 * (age - 50.0)
                + 20.0 * flag(male)
                + 150.0 * std.sample(rng);
            let confounders = BTreeMap::from([
                ("blood_a".to_string(), flag(a)),
                ("blood_b".to_string(), flag(b)),
                ("blood_ab".to_string(), flag(ab)),
                ("dialysis".to_string(), flag(d)),
                ("pra".to_string(), p),
                ("age".to_string(), age),
                ("male".to_string(), flag(male)),
            ]);
            records.push(PatientRecord {
                id: format!("{label}-{i}"),
                group: label.clone(),
                x1,
                x2: 0.5,
                y1: 1.0,
                confounders,
            });
        }
    }
    let r = 3;
    let mut truth = PlantedTruth {
        direct: [0.0; 3],
        indirect: [0.0; 3],
    };
    for g in 0..3 {
        truth.direct[g] = beta[g];
        truth.indirect[g] = tau[0] * (blood[g][0] - blood[r][0])
            + tau[1] * (blood[g][1] - blood[r][1])
            + tau[2] * (blood[g][2] - blood[r][2])
            + tau[3] * (dialysis[g] - dialysis[r])
            + tau[4] * (pra[g] - pra[r]);
    }
    (Cohort::new(records, default_groups()).unwrap(), truth)
}

fn mediation_identity_and_recovery() -> Outcome {
    let start = Instant::now();
    let reps = 200;
    let spec = MediationSpec::default();
    let mut worst_identity = 0.0f64;
    let mut direct_hits = [0usize; 3];
    let mut indirect_hits = [0usize; 3];
    for rep in 0..reps {
        let mut rng = rng_from_seed(derive_indexed(108, rep));
        let (cohort, truth) = planted_mediation(125, &mut rng);
        let table = bootstrap_ci(&cohort, &spec, 200, derive_indexed(1108, rep)).unwrap();
        for (g, e) in table.iter().enumerate() {
            let identity = (e.direct.estimate + e.indirect.estimate - e.total.estimate).abs();
            worst_identity = worst_identity.max(identity);
            let inside = |eff: &fairdea_core::mediation::Effect, v: f64| {
                eff.ci_low.unwrap() <= v && v <= eff.ci_high.unwrap()
            };
            direct_hits[g] += usize::from(inside(&e.direct, truth.direct[g]));
            indirect_hits[g] += usize::from(inside(&e.indirect, truth.indirect[g]));
        }
    }
    let rate = |h: usize| h as f64 / reps as f64;
    let min_rate = direct_hits
        .iter()
        .chain(&indirect_hits)
        .map(|&h| rate(h))
        .fold(1.0f64, f64::min);
    let shown = |h: &[usize; 3]| {
        h.iter()
            .map(|&x| format!("{:.3}", rate(x)))
            .collect::<Vec<_>>()
            .join("/")
    };
    outcome(
        worst_identity <= 1e-10 && min_rate >= 0.90,
        format!(
            "max |DE + IE - TE| = {worst_identity:.1e}; CI coverage over {reps} reps DE {} IE {}, {:.1}s",
            shown(&direct_hits),
            shown(&indirect_hits),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn debias_null() -> Outcome {
    let n = 10_000;
    let mut rng = rng_from_seed(109);
    let std = Normal::new(0.0, 1.0).unwrap();
    let labels = default_groups();
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let (w1, w2) = (std.sample(&mut rng), std.sample(&mut rng));
        let logits = [0.8 * w1, -0.8 * w1, 0.8 * w2, -0.8 * w2];
        let weights: Vec<f64> = logits.iter().map(|l: &f64| l.exp()).collect();
        let mut u = rng.random::<f64>() * weights.iter().sum::<f64>();
        let mut g = 0;
        while g + 1 < weights.len() && u >= weights[g] {
            u -= weights[g];
            g += 1;
        }
        let z = 50.0 + 2.0 * w1 - w2 + std.sample(&mut rng);
        records.push(PatientRecord {
            id: format!("r{i}"),
            group: labels[g].clone(),
            x1: z,
            x2: 0.5,
            y1: 1.0,
            confounders: BTreeMap::from([("w1".to_string(), w1), ("w2".to_string(), w2)]),
        });
    }
    let cohort = Cohort::new(records, labels.clone()).unwrap();
    let names = ["w1".to_string(), "w2".to_string()];
    let r = crossfit_debias(&cohort, Measure::X1, &names, 5, 1109).unwrap();
    let mut pass = true;
    let mut shown = Vec::new();
    for (label, m) in labels.iter().zip(cohort.members_by_group()) {
        let v: Vec<f64> = m.iter().map(|&i| r.adjusted[i]).collect();
        let mean = fairdea_core::stats::mean(&v);
        let sd = fairdea_core::stats::std_dev(&v);
        pass &= mean.abs() < 0.05 * sd;
        shown.push(format!("{label} {:.4}", mean / sd));
    }
    outcome(
        pass,
        format!("n = {n}, mean/sd per group: {}", shown.join(", ")),
    )
}

fn pipeline_determinism() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let config = PipelineConfig::default();
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for d in &dirs {
        if let Err(e) = fairdea::run_pipeline(&config, d) {
            return outcome(false, format!("pipeline failed: {e}"));
        }
    }
    let mut names: Vec<_> = fs::read_dir(&dirs[0])
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    let differing: Vec<String> = names
        .iter()
        .filter(|n| fs::read(dirs[0].join(n)).ok() != fs::read(dirs[1].join(n)).ok())
        .map(|n| n.to_string_lossy().into_owned())
        .collect();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        differing.is_empty() && secs < 600.0,
        format!(
            "{} artifacts compared, differing: {differing:?}, two runs in {secs:.1}s",
            names.len()
        ),
    )
}

fn main() -> ExitCode {
    let checks: [(&str, Check); 10] = [
        ("DEA oracle equivalence", dea_oracle_equivalence),
        ("DEA hand instances", dea_hand_instances),
        ("DEA property suite", dea_properties),
        ("conformal group coverage", conformal_coverage),
        ("resampling bias", resampling_bias),
        ("MMD calibration and power", mmd_calibration_and_power),
        ("MMD closed form", mmd_closed_form),
        (
            "mediation identity and recovery",
            mediation_identity_and_recovery,
        ),
        ("debiasing null", debias_null),
        ("pipeline determinism", pipeline_determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in checks.iter().enumerate() {
        let r = check();
        println!(
            "{} {:>2} {name}: {}",
            if r.pass { "PASS" } else { "FAIL" },
            k + 1,
            r.detail
        );
        failed += usize::from(!r.pass);
    }
    println!(
        "{} of {} acceptance checks passed",
        checks.len() - failed,
        checks.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
